#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "psel/eval.hpp"
#include "psel/io.hpp"
#include "psel/ssl.hpp"

namespace psel {

namespace fs = std::filesystem;

// Self-check failures during a run; maps to exit code 2 at the CLI.
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::vector<std::string> class_names(const GeneratorConfig& g) {
  std::vector<std::string> names;
  for (const auto& c : g.classes) names.push_back(c.name);
  return names;
}

struct Dataset {
  std::vector<Scene> labeled;
  std::vector<Scene> unlabeled;
};

inline fs::path config_path(const fs::path& run_dir) { return run_dir / "config.json"; }
inline fs::path labeled_path(const fs::path& run_dir) { return run_dir / "dataset_labeled.jsonl"; }
inline fs::path unlabeled_path(const fs::path& run_dir) { return run_dir / "dataset_unlabeled.jsonl"; }
inline fs::path burnin_ckpt_path(const fs::path& run_dir) {
  return run_dir / "checkpoints" / "psm_burnin.json";
}
inline fs::path ssl_state_path(const fs::path& run_dir) {
  return run_dir / "checkpoints" / "ssl_state.json";
}
inline fs::path epoch_ckpt_path(const fs::path& run_dir, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "psm_epoch_%04d.json", epoch);
  return run_dir / "checkpoints" / buf;
}

// Dataset generation: scene dumps with one candidate realization each,
// plus a manifest with counts and seed.
inline void run_gen(const RunConfig& cfg, const fs::path& run_dir) {
  cfg.generator.validate();
  fs::create_directories(run_dir);
  write_json_file(config_path(run_dir), to_json(cfg));

  std::uint64_t n_cand_labeled = 0, n_cand_unlabeled = 0;
  std::vector<SceneRecord> labeled, unlabeled;
  const std::uint64_t total =
      static_cast<std::uint64_t>(cfg.dataset.labeled_scenes) + cfg.dataset.unlabeled_scenes;
  for (std::uint64_t id = 0; id < total; ++id) {
    const bool is_labeled = id < static_cast<std::uint64_t>(cfg.dataset.labeled_scenes);
    Rng scene_rng = Rng::derive(cfg.seed, {0x40, id});
    SceneRecord rec;
    rec.scene = sample_scene(cfg.generator, id, is_labeled, scene_rng);
    rec.candidates = generate_candidates(cfg.generator, rec.scene, scene_rng);
    if (is_labeled) {
      n_cand_labeled += rec.candidates.size();
      labeled.push_back(std::move(rec));
    } else {
      n_cand_unlabeled += rec.candidates.size();
      unlabeled.push_back(std::move(rec));
    }
  }
  write_dataset(labeled_path(run_dir), labeled);
  write_dataset(unlabeled_path(run_dir), unlabeled);

  const auto now = std::chrono::system_clock::now().time_since_epoch();
  write_json_file(run_dir / "manifest.json",
                  json{{"dataset_version", kDatasetVersion},
                       {"seed", cfg.seed},
                       {"labeled_scenes", labeled.size()},
                       {"unlabeled_scenes", unlabeled.size()},
                       {"labeled_candidates", n_cand_labeled},
                       {"unlabeled_candidates", n_cand_unlabeled},
                       {"generated_unix_ms",
                        std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}});
}

inline Dataset load_dataset(const fs::path& run_dir) {
  const auto manifest = read_json_file(run_dir / "manifest.json");
  if (manifest.value("dataset_version", 0) != kDatasetVersion) {
    throw std::runtime_error("dataset version mismatch in " + run_dir.string());
  }
  Dataset ds;
  for (auto& rec : read_dataset(labeled_path(run_dir))) ds.labeled.push_back(std::move(rec.scene));
  for (auto& rec : read_dataset(unlabeled_path(run_dir))) ds.unlabeled.push_back(std::move(rec.scene));
  return ds;
}

inline void run_burnin(const RunConfig& cfg, const fs::path& run_dir) {
  const Dataset ds = load_dataset(run_dir);
  fs::create_directories(run_dir / "checkpoints");
  std::ofstream log(run_dir / "burnin_log.csv");
  log << "epoch,l_pqe,l_cte\n";
  const BurninResult res = burn_in(cfg, ds.labeled, [&](int ep, double lpqe, double lcte) {
    log << ep << ',' << fmt_float(lpqe) << ',' << fmt_float(lcte) << '\n';
    if (!std::isfinite(lpqe) || !std::isfinite(lcte)) {
      throw InvariantError("burn-in: non-finite loss at epoch " + std::to_string(ep));
    }
  });
  write_json_file(burnin_ckpt_path(run_dir),
                  json{{"model", to_json(res.model)}, {"opt", to_json(res.opt)}});
}

inline void write_softgt_jsonl(const fs::path& run_dir, const SoftGtDatabase& db) {
  std::ofstream out(run_dir / "softgt.jsonl");
  for (const auto& e : db.entries) {
    out << json{{"box", to_json(e.box)},
                {"class_id", e.class_id},
                {"w", e.weight},
                {"scene_id", e.scene_id},
                {"epoch", e.epoch}}
               .dump()
        << '\n';
  }
}

// Runs (or resumes) the semi-supervised loop up to cfg.ssl.epochs. Every
// epoch checkpoints the PSM and the full loop state; metrics.csv is
// rewritten from the state's history so a resumed run reproduces the
// uninterrupted file byte for byte.
inline void run_ssl(const RunConfig& cfg, const fs::path& run_dir) {
  const Dataset ds = load_dataset(run_dir);
  fs::create_directories(run_dir / "checkpoints");

  SslState st;
  if (fs::exists(ssl_state_path(run_dir))) {
    st = ssl_state_from_json(read_json_file(ssl_state_path(run_dir)));
  } else {
    const auto ckpt = read_json_file(burnin_ckpt_path(run_dir));
    BurninResult burnin;
    burnin.model = psm_from_json(ckpt.at("model"));
    burnin.opt = adam_from_json(ckpt.at("opt"));
    st = ssl_init(cfg, burnin);
  }

  const auto val = make_validation_scenes(cfg);
  const auto names = class_names(cfg.generator);
  while (st.epoch < cfg.ssl.epochs) {
    try {
      const EpochMetrics m = ssl_epoch(cfg, st, ds.labeled, ds.unlabeled, val);
      std::cerr << "ssl epoch " << m.epoch << " f1=" << m.pr.overall.f1()
                << " l_pqe=" << m.l_pqe << " refine_err=" << m.refine_error << "\n";
    } catch (const std::runtime_error& err) {
      write_json_file(run_dir / "diagnostic.json",
                      json{{"error", err.what()}, {"epoch", st.epoch}, {"state", to_json(st)}});
      throw InvariantError(err.what());
    }
    write_json_file(epoch_ckpt_path(run_dir, st.epoch - 1), to_json(st.psm));
    write_json_file(ssl_state_path(run_dir), to_json(st));
    write_metrics_csv(run_dir / "metrics.csv", st.history, names);
    write_softgt_jsonl(run_dir, st.softgt);
  }
}

// Re-evaluates every per-epoch PSM checkpoint on held-out scenes; one CSV
// row per epoch per class.
inline void run_eval(const RunConfig& cfg, const fs::path& run_dir) {
  if (!fs::exists(ssl_state_path(run_dir))) {
    throw std::runtime_error("run_eval: no ssl state in " + run_dir.string());
  }
  const SslState st = ssl_state_from_json(read_json_file(ssl_state_path(run_dir)));
  const auto names = class_names(cfg.generator);
  std::ofstream out(run_dir / "eval.csv");
  out << "epoch,class,precision,recall,f1,tp,fp,fn\n";
  const int eval_scenes = 100;
  for (const auto& hist : st.history) {
    const PsmModel model = psm_from_json(read_json_file(epoch_ckpt_path(run_dir, hist.epoch)));
    GeneratorConfig gen = cfg.generator;
    gen.learning_state = hist.learning_state;
    PrReport total;
    total.per_class.resize(gen.num_classes());
    SelectConfig sel_cfg{cfg.psm.nms_iou_threshold};
    for (int i = 0; i < eval_scenes; ++i) {
      Rng rng = Rng::derive(cfg.seed, {0x50, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(hist.epoch)});
      const Scene scene = sample_scene(gen, 2000000u + i, false, rng);
      const auto candidates = generate_candidates(gen, scene, rng);
      std::vector<SelectionCandidate> sel;
      for (const auto& c : candidates) {
        SelectionCandidate sc;
        sc.scores = score_feature(c);
        sc.context.class_id = argmax(c.cls_logits);
        sc.context.distance = c.box.distance();
        sc.box = c.box;
        sel.push_back(std::move(sc));
      }
      const auto pr = match_pr(select(model, sel, sel_cfg), scene.objects, cfg.match);
      for (int c = 0; c < gen.num_classes(); ++c) total.per_class[c] += pr.per_class[c];
    }
    for (int c = 0; c < gen.num_classes(); ++c) {
      const auto& pc = total.per_class[c];
      out << hist.epoch << ',' << names[c] << ',' << fmt_float(pc.precision()) << ','
          << fmt_float(pc.recall()) << ',' << fmt_float(pc.f1()) << ',' << pc.tp << ',' << pc.fp
          << ',' << pc.fn << '\n';
    }
  }
}

}  // namespace psel
