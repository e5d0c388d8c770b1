// End-to-end checks of the psel binary. The binary path arrives as the first
// positional argument, so this suite carries its own main.
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "psel/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g_cli;

int run_cli(const std::string& args) {
  const std::string cmd = "'" + g_cli + "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (status < 0) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_dir(const char* tag) {
  const fs::path p = fs::temp_directory_path() / (std::string("psel_cli_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json tiny_config(const fs::path& run_dir) {
  json cfg;
  cfg["seed"] = 11;
  cfg["out_dir"] = run_dir.string();
  cfg["dataset"] = {{"labeled_scenes", 4}, {"unlabeled_scenes", 8}};
  cfg["burnin"] = {{"epochs", 2}, {"batch", 16}};
  cfg["ssl"] = {{"epochs", 1},
                {"unlabeled_scenes_per_epoch", 4},
                {"val_scenes", 2},
                {"student_batch", 16}};
  return cfg;
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << cfg.dump(2);
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("gen") == 1);                                // --config missing
  CHECK(run_cli("gen --config /nonexistent/cfg.json") == 1);
  CHECK(run_cli("frobnicate --config x.json") == 1);
}

TEST_CASE("invalid config values exit with code 1") {
  const fs::path dir = temp_dir("badcfg");
  json cfg = tiny_config(dir / "run");
  cfg["psm"] = {{"tau_iou", 1.5}};
  const fs::path p = write_config(dir, cfg);
  CHECK(run_cli("gen --config '" + p.string() + "'") == 1);

  json cfg2 = tiny_config(dir / "run2");
  cfg2["ssl"]["rho"] = 1.0;
  const fs::path p2 = write_config(dir, cfg2);
  CHECK(run_cli("gen --config '" + p2.string() + "'") == 1);
}

TEST_CASE("stages refuse to run out of order") {
  const fs::path dir = temp_dir("order");
  const fs::path p = write_config(dir, tiny_config(dir / "run"));
  // no gen yet: burnin, ssl, eval have nothing to read
  CHECK(run_cli("burnin --config '" + p.string() + "'") == 1);
  CHECK(run_cli("ssl --config '" + p.string() + "'") == 1);
  CHECK(run_cli("eval --config '" + p.string() + "'") == 1);
  CHECK(run_cli("report --config '" + p.string() + "'") == 1);
}

TEST_CASE("gen output is deterministic for a fixed seed") {
  const fs::path dir = temp_dir("gen");
  const fs::path p = write_config(dir, tiny_config(dir / "unused"));
  REQUIRE(run_cli("gen --config '" + p.string() + "' --run-dir '" + (dir / "a").string() + "'") == 0);
  REQUIRE(run_cli("gen --config '" + p.string() + "' --run-dir '" + (dir / "b").string() + "'") == 0);
  for (const char* name : {"config.json", "dataset_labeled.jsonl", "dataset_unlabeled.jsonl"}) {
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
  // a different seed changes the data
  REQUIRE(run_cli("gen --config '" + p.string() + "' --seed 12 --run-dir '" +
                  (dir / "c").string() + "'") == 0);
  CHECK(slurp(dir / "a" / "dataset_labeled.jsonl") != slurp(dir / "c" / "dataset_labeled.jsonl"));

  const json manifest = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(manifest.at("labeled_scenes") == 4);
  CHECK(manifest.at("unlabeled_scenes") == 8);
  CHECK(manifest.at("seed") == 11);
}

TEST_CASE("the full pipeline runs and leaves its artifacts") {
  const fs::path dir = temp_dir("pipeline");
  const fs::path run = dir / "run";
  const fs::path p = write_config(dir, tiny_config(run));
  REQUIRE(run_cli("gen --config '" + p.string() + "'") == 0);
  REQUIRE(run_cli("burnin --config '" + p.string() + "'") == 0);
  CHECK(fs::exists(run / "checkpoints" / "psm_burnin.json"));
  CHECK(fs::exists(run / "burnin_log.csv"));
  REQUIRE(run_cli("ssl --config '" + p.string() + "'") == 0);
  CHECK(fs::exists(run / "checkpoints" / "ssl_state.json"));
  CHECK(fs::exists(run / "checkpoints" / "psm_epoch_0000.json"));
  CHECK(fs::exists(run / "metrics.csv"));
  CHECK(fs::exists(run / "softgt.jsonl"));
  REQUIRE(run_cli("eval --config '" + p.string() + "'") == 0);
  CHECK(fs::exists(run / "eval.csv"));
  REQUIRE(run_cli("report --config '" + p.string() + "'") == 0);
  for (const char* name : {"thresholds.csv", "thresholds.svg", "scatter.csv", "scatter.svg",
                           "correlations.csv", "pr_epochs.csv", "pr_epochs.svg", "report.json"}) {
    CHECK(fs::exists(run / name));
  }
  const json report = json::parse(slurp(run / "report.json"));
  CHECK(report.at("missing").empty());

  // metrics.csv has a header plus one row per ssl epoch
  std::istringstream metrics(slurp(run / "metrics.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(metrics, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 2);
}

TEST_CASE("report degrades gracefully when only gen ran") {
  const fs::path dir = temp_dir("report_gap");
  const fs::path run = dir / "run";
  const fs::path p = write_config(dir, tiny_config(run));
  REQUIRE(run_cli("gen --config '" + p.string() + "'") == 0);
  CHECK(run_cli("report --config '" + p.string() + "'") == 0);
  const json report = json::parse(slurp(run / "report.json"));
  CHECK(!report.at("missing").empty());
  CHECK(report.at("written").empty());
}

int main(int argc, char** argv) {
  if (argc > 1 && argv[argc - 1][0] != '-') {
    g_cli = argv[argc - 1];
  }
  if (g_cli.empty() || !fs::exists(g_cli)) {
    std::fprintf(stderr, "usage: test_cli <path-to-psel-binary> [doctest options]\n");
    return 1;
  }
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
