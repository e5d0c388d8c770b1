#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psel/eval.hpp"
#include "psel/simworld.hpp"

namespace psel {

struct PsmConfig {
  std::vector<int> hidden{16, 32, 32};
  int class_embed_dim = 8;
  int fourier_dim = 8;
  double tau_iou = 0.8;
  double lr = 1e-3;
  double nms_iou_threshold = 0.1;
};

struct BurninConfig {
  int epochs = 60;
  int batch = 16;
};

struct SslScheduleConfig {
  int epochs = 10;
  int student_batch = 32;
  double rho = 0.999;                // EMA momentum
  int unlabeled_per_labeled = 3;     // batch composition by scene count
  int unlabeled_scenes_per_epoch = 600;
  int val_scenes = 40;
  double student_lr = 1e-3;
  int softgt_quota_per_class = 2;
  bool reweighting = true;
  bool psm_online_updates = true;
};

struct DatasetConfig {
  int labeled_scenes = 200;
  int unlabeled_scenes = 19800;
};

struct RunConfig {
  std::uint64_t seed = 42;
  DatasetConfig dataset;
  GeneratorConfig generator = default_generator_config();
  PsmConfig psm;
  BurninConfig burnin;
  SslScheduleConfig ssl;
  MatchConfig match;
  std::string out_dir = "runs/default";
};

}  // namespace psel
