// Batch front-end: dataset generation, PSM burn-in, semi-supervised runs,
// evaluation, and report emission over a self-describing run directory.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "psel/report.hpp"
#include "psel/run.hpp"

namespace {

struct CommonArgs {
  std::string config_file;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
};

psel::RunConfig load_config(const CommonArgs& args) {
  psel::RunConfig cfg = psel::run_config_from_json(psel::read_json_file(args.config_file));
  if (args.seed) cfg.seed = *args.seed;
  cfg.generator.validate();
  if (cfg.psm.tau_iou <= 0.0 || cfg.psm.tau_iou >= 1.0) {
    throw std::invalid_argument("config: psm.tau_iou must be in (0,1)");
  }
  if (cfg.ssl.rho < 0.0 || cfg.ssl.rho >= 1.0) {
    throw std::invalid_argument("config: ssl.rho must be in [0,1)");
  }
  return cfg;
}

std::string resolve_run_dir(const CommonArgs& args, const psel::RunConfig& cfg) {
  return args.run_dir.empty() ? cfg.out_dir : args.run_dir;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file, "path to the run config JSON")->required();
  cmd->add_option("--run-dir", args.run_dir, "run directory (default: config out_dir)");
  cmd->add_option("--seed", args.seed, "override the config seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learnable pseudo-label selection over a synthetic detector"};
  app.require_subcommand(1);

  CommonArgs args;
  CLI::App* gen = app.add_subcommand("gen", "generate the labeled/unlabeled scene datasets");
  CLI::App* burnin = app.add_subcommand("burnin", "pre-train the selection module on labeled scenes");
  CLI::App* ssl = app.add_subcommand("ssl", "run (or resume) the semi-supervised loop");
  CLI::App* eval = app.add_subcommand("eval", "evaluate per-epoch checkpoints on held-out scenes");
  CLI::App* report = app.add_subcommand("report", "emit CSV/SVG figures for a run");
  for (CLI::App* cmd : {gen, burnin, ssl, eval, report}) add_common(cmd, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const psel::RunConfig cfg = load_config(args);
    const std::string run_dir = resolve_run_dir(args, cfg);
    if (gen->parsed()) {
      psel::run_gen(cfg, run_dir);
    } else if (burnin->parsed()) {
      psel::run_burnin(cfg, run_dir);
    } else if (ssl->parsed()) {
      psel::run_ssl(cfg, run_dir);
    } else if (eval->parsed()) {
      psel::run_eval(cfg, run_dir);
    } else if (report->parsed()) {
      const auto res = psel::run_report(run_dir);
      for (const auto& gap : res.missing) std::cerr << "report: missing " << gap << "\n";
    }
  } catch (const psel::InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
