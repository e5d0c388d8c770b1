#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "psel/geom.hpp"
#include "psel/psm.hpp"
#include "psel/rng.hpp"

namespace psel {

struct GtObject {
  Box7 box;
  int class_id = 0;  // 0 Car, 1 Pedestrian, 2 Cyclist
};

struct Scene {
  std::uint64_t id = 0;
  bool labeled = false;
  std::vector<GtObject> objects;
};

struct ClassModel {
  std::string name = "Car";
  double spawn_rate = 1.0;                       // Poisson mean per scene
  std::array<double, 3> size_mean{3.9, 1.6, 1.6};  // l, w, h
  std::array<double, 3> size_std{0.25, 0.1, 0.1};
  double det_base = 0.85;      // detection probability at range 0, e = 1
  double calib_gain = 6.0;     // a_c: obj_logit slope vs gt_iou
  double calib_bias = -2.6;    // b_c
  double calib_noise = 0.8;    // s_c
  double dist_penalty = 0.8;   // obj_logit drop at max range
  double cls_sep = 3.0;        // class-logit separation for the assigned class
  std::vector<double> confusion{1.0, 0.0, 0.0};  // row sums to 1
};

struct GeneratorConfig {
  std::vector<ClassModel> classes;
  double max_range = 75.0;
  double min_range = 3.0;
  double loc_noise_base = 0.22;   // meters, sigma at range 0
  double loc_noise_slope = 1.6;   // growth toward max_range
  double yaw_noise_base = 0.10;   // radians
  double extra_candidate_rate = 0.6;  // pre-NMS duplicates per detection
  double fp_rate = 0.6;           // false positives per scene
  double ped_overconf_frac = 0.57;  // target error fraction among high-conf Ped
  double aug_corr_prob = 0.0;     // chance a detection is re-found identically in the weak view
  double size_bias = 0.0;         // systematic undersizing of detections, growing with range
  double learning_state = 0.3;    // e in [0,1]
  int max_objects = 12;
  IouMode iou_mode = IouMode::Iou3d;

  int num_classes() const { return static_cast<int>(classes.size()); }

  void validate() const {
    if (classes.empty()) throw std::invalid_argument("GeneratorConfig: no classes");
    if (learning_state < 0.0 || learning_state > 1.0) {
      throw std::invalid_argument("GeneratorConfig: learning_state must be in [0,1]");
    }
    for (const auto& c : classes) {
      if (c.spawn_rate < 0 || c.det_base < 0) throw std::invalid_argument("GeneratorConfig: negative rate");
      if (c.confusion.size() != classes.size()) {
        throw std::invalid_argument("GeneratorConfig: confusion row width mismatch");
      }
      double sum = 0;
      for (double p : c.confusion) {
        if (p < 0) throw std::invalid_argument("GeneratorConfig: negative confusion entry");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("GeneratorConfig: confusion row must sum to 1");
    }
  }
};

inline GeneratorConfig default_generator_config() {
  GeneratorConfig cfg;
  ClassModel car;
  car.name = "Car";
  car.spawn_rate = 2.0;
  car.size_mean = {3.9, 1.6, 1.6};
  car.size_std = {0.25, 0.1, 0.1};
  car.det_base = 0.9;
  car.calib_gain = 6.0;
  car.calib_bias = -2.6;
  car.calib_noise = 0.8;
  car.dist_penalty = 0.8;
  car.cls_sep = 3.2;
  car.confusion = {0.94, 0.03, 0.03};
  ClassModel ped;
  ped.name = "Pedestrian";
  ped.spawn_rate = 1.0;
  ped.size_mean = {0.8, 0.6, 1.7};
  ped.size_std = {0.08, 0.06, 0.1};
  ped.det_base = 0.75;
  ped.calib_gain = 5.0;
  ped.calib_bias = -2.6;
  ped.calib_noise = 1.2;
  ped.dist_penalty = 1.2;
  ped.cls_sep = 2.6;
  ped.confusion = {0.06, 0.82, 0.12};
  ClassModel cyc;
  cyc.name = "Cyclist";
  cyc.spawn_rate = 0.6;
  cyc.size_mean = {1.8, 0.6, 1.7};
  cyc.size_std = {0.12, 0.06, 0.1};
  cyc.det_base = 0.8;
  cyc.calib_gain = 5.5;
  cyc.calib_bias = -2.7;
  cyc.calib_noise = 1.0;
  cyc.dist_penalty = 1.0;
  cyc.cls_sep = 2.8;
  cyc.confusion = {0.05, 0.15, 0.80};
  cfg.classes = {car, ped, cyc};
  return cfg;
}

// Pre-NMS teacher prediction with its weakly-augmented counterpart.
struct TeacherCandidate {
  Box7 box;                        // b
  double obj_logit = 0;            // s_obj, logit scale
  std::vector<double> cls_logits;  // p_cls, logit scale
  Box7 aug_box;                    // b-tilde mapped back to the original frame
  double aug_obj_logit = -10.0;    // s-tilde_obj; logit floor when unmatched
  double iou_consistency = 0;      // v
  int source_gt = -1;              // generator-internal; -1 for false positives
};

namespace detail {

inline double detection_prob(const ClassModel& cm, double dist, double max_range, double e) {
  const double p = cm.det_base * (1.0 - 0.45 * dist / max_range) * (0.55 + 0.45 * e);
  return std::clamp(p, 0.02, 0.98);
}

// Localization error scales with the object footprint: small objects are
// localized proportionally tighter in absolute terms.
inline double loc_sigma(const GeneratorConfig& cfg, const Box7& box, double dist, double e) {
  const double footprint = std::clamp(std::sqrt(box.l * box.w) / 2.5, 0.3, 1.5);
  return cfg.loc_noise_base * footprint * (1.0 + cfg.loc_noise_slope * dist / cfg.max_range) *
         (1.0 - 0.5 * e);
}

inline std::vector<double> sample_cls_logits(const GeneratorConfig& cfg, int true_class,
                                             double quality, Rng& rng) {
  const auto& cm = cfg.classes[true_class];
  // draw the assigned class from the confusion row
  double u = rng.uniform();
  int assigned = true_class;
  for (int j = 0; j < cfg.num_classes(); ++j) {
    u -= cm.confusion[j];
    if (u <= 0) {
      assigned = j;
      break;
    }
  }
  std::vector<double> logits(cfg.num_classes());
  for (auto& v : logits) v = rng.normal(0.0, 0.35);
  logits[assigned] += cfg.classes[assigned].cls_sep * (0.4 + 0.6 * quality);
  return logits;
}

}  // namespace detail

// GT boxes drawn per class spawn rates; deterministic given the rng state.
inline Scene sample_scene(const GeneratorConfig& cfg, std::uint64_t id, bool labeled, Rng& rng) {
  cfg.validate();
  Scene scene;
  scene.id = id;
  scene.labeled = labeled;
  for (int c = 0; c < cfg.num_classes(); ++c) {
    const auto& cm = cfg.classes[c];
    const int n = rng.poisson(cm.spawn_rate);
    for (int i = 0; i < n && static_cast<int>(scene.objects.size()) < cfg.max_objects; ++i) {
      GtObject obj;
      obj.class_id = c;
      const double dist = rng.uniform(cfg.min_range, cfg.max_range);
      const double bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
      obj.box.cx = dist * std::cos(bearing);
      obj.box.cy = dist * std::sin(bearing);
      obj.box.cz = rng.normal(0.0, 0.1);
      obj.box.l = std::max(0.2, rng.normal(cm.size_mean[0], cm.size_std[0]));
      obj.box.w = std::max(0.2, rng.normal(cm.size_mean[1], cm.size_std[1]));
      obj.box.h = std::max(0.2, rng.normal(cm.size_mean[2], cm.size_std[2]));
      obj.box.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
      scene.objects.push_back(obj);
    }
  }
  return scene;
}

// Gaussian box perturbation with distance- and learning-state-dependent
// spread. Shared by true detections and soft-GT candidate synthesis. With
// detector_bias, sizes additionally shrink toward the visible surface, more
// so at range; student-side proposals pass false and stay unbiased.
inline Box7 perturb_box(const GeneratorConfig& cfg, const Box7& gt, double e, Rng& rng,
                        bool detector_bias = true) {
  const double dist = gt.distance();
  // bimodal quality mix: a share of candidates is well localized, the rest
  // carries the full noise; the share grows with the learning state
  const bool sharp = rng.bernoulli(std::clamp(0.35 + 0.3 * e, 0.0, 1.0));
  const double sigma = detail::loc_sigma(cfg, gt, dist, e) * (sharp ? 0.25 : 1.0);
  const double shrink = detector_bias
                            ? cfg.size_bias * (0.25 + 0.75 * dist / cfg.max_range) *
                                  (1.0 - 0.5 * e) * (sharp ? 0.3 : 1.0)
                            : 0.0;
  const double keep = std::clamp(1.0 - shrink, 0.1, 1.0);
  Box7 b = gt;
  b.cx += rng.normal(0.0, sigma);
  b.cy += rng.normal(0.0, sigma);
  b.cz += rng.normal(0.0, 0.3 * sigma);
  b.l = std::max(0.1, b.l * keep + rng.normal(0.0, 0.3 * sigma));
  b.w = std::max(0.1, b.w * keep + rng.normal(0.0, 0.3 * sigma));
  b.h = std::max(0.1, b.h * keep + rng.normal(0.0, 0.3 * sigma));
  const double yaw_sigma = cfg.yaw_noise_base * (1.0 + cfg.loc_noise_slope * dist / cfg.max_range) *
                           (1.0 - 0.5 * e) * (sharp ? 0.25 : 1.0);
  b.yaw = wrap_angle(b.yaw + rng.normal(0.0, yaw_sigma));
  return b;
}

inline double max_gt_iou(const Box7& b, const Scene& scene, IouMode mode) {
  double best = 0;
  for (const auto& obj : scene.objects) best = std::max(best, box_iou(b, obj.box, mode));
  return best;
}

inline double obj_logit_for(const ClassModel& cm, double gt_iou, double dist, double max_range,
                            double e, Rng& rng) {
  return cm.calib_gain * (0.7 + 0.3 * e) * gt_iou + cm.calib_bias -
         cm.dist_penalty * dist / max_range + rng.normal(0.0, cm.calib_noise);
}

// Noisy pre-NMS candidates for one scene: perturbed detections, background
// false positives, and overconfident Pedestrian false positives injected at
// a rate that pins their share of high-confidence Pedestrian predictions.
inline std::vector<TeacherCandidate> teacher_predict(const GeneratorConfig& cfg, const Scene& scene,
                                                     Rng& rng) {
  const double e = cfg.learning_state;
  std::vector<TeacherCandidate> out;
  for (int gi = 0; gi < static_cast<int>(scene.objects.size()); ++gi) {
    const auto& obj = scene.objects[gi];
    const auto& cm = cfg.classes[obj.class_id];
    const double dist = obj.box.distance();
    if (!rng.bernoulli(detail::detection_prob(cm, dist, cfg.max_range, e))) continue;
    const int n_cand = 1 + rng.poisson(cfg.extra_candidate_rate);
    for (int k = 0; k < n_cand; ++k) {
      TeacherCandidate cand;
      cand.box = perturb_box(cfg, obj.box, e, rng);
      const double giou = max_gt_iou(cand.box, scene, cfg.iou_mode);
      cand.obj_logit = obj_logit_for(cm, giou, dist, cfg.max_range, e, rng);
      cand.cls_logits = detail::sample_cls_logits(cfg, obj.class_id, giou, rng);
      cand.source_gt = gi;
      out.push_back(std::move(cand));
    }
  }
  // background false positives
  const int n_fp = rng.poisson(cfg.fp_rate * (1.2 - 0.4 * e));
  for (int k = 0; k < n_fp; ++k) {
    const int c = static_cast<int>(rng.below(cfg.num_classes()));
    const auto& cm = cfg.classes[c];
    TeacherCandidate cand;
    const double dist = rng.uniform(cfg.min_range, cfg.max_range);
    const double bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
    cand.box.cx = dist * std::cos(bearing);
    cand.box.cy = dist * std::sin(bearing);
    cand.box.cz = rng.normal(0.0, 0.2);
    cand.box.l = std::max(0.2, rng.normal(cm.size_mean[0], 2.0 * cm.size_std[0]));
    cand.box.w = std::max(0.2, rng.normal(cm.size_mean[1], 2.0 * cm.size_std[1]));
    cand.box.h = std::max(0.2, rng.normal(cm.size_mean[2], 2.0 * cm.size_std[2]));
    cand.box.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
    const double giou = max_gt_iou(cand.box, scene, cfg.iou_mode);
    cand.obj_logit = obj_logit_for(cm, giou, dist, cfg.max_range, e, rng);
    cand.cls_logits = detail::sample_cls_logits(cfg, c, giou, rng);
    cand.source_gt = -1;
    out.push_back(std::move(cand));
  }
  // overconfident Pedestrian false positives (pole/sign confusions).
  // The injection rate is tied to the count of genuine high-confidence
  // Pedestrian-assigned predictions so the error fraction lands at
  // ped_overconf_frac in expectation.
  const int kPed = 1;
  if (cfg.ped_overconf_frac > 0 && kPed < cfg.num_classes()) {
    int n_hc = 0;
    for (const auto& cand : out) {
      if (argmax(cand.cls_logits) == kPed && sigmoid(cand.obj_logit) > 0.8 &&
          max_gt_iou(cand.box, scene, cfg.iou_mode) >= 0.5) {
        ++n_hc;
      }
    }
    const double f = cfg.ped_overconf_frac;
    const int n_oc = rng.poisson(n_hc * f / (1.0 - f));
    const auto& cm = cfg.classes[kPed];
    for (int k = 0; k < n_oc; ++k) {
      TeacherCandidate cand;
      const double dist = rng.uniform(cfg.min_range, cfg.max_range);
      const double bearing = rng.uniform(-std::numbers::pi, std::numbers::pi);
      cand.box.cx = dist * std::cos(bearing);
      cand.box.cy = dist * std::sin(bearing);
      cand.box.cz = rng.normal(0.0, 0.2);
      cand.box.l = std::max(0.2, rng.normal(cm.size_mean[0], cm.size_std[0]));
      cand.box.w = std::max(0.2, rng.normal(cm.size_mean[1], cm.size_std[1]));
      cand.box.h = std::max(0.2, rng.normal(cm.size_mean[2], cm.size_std[2]));
      cand.box.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
      cand.obj_logit = logit(rng.uniform(0.82, 0.98));
      cand.cls_logits.assign(cfg.num_classes(), 0.0);
      for (auto& v : cand.cls_logits) v = rng.normal(0.0, 0.3);
      cand.cls_logits[kPed] += 4.0;
      cand.source_gt = -1;
      out.push_back(std::move(cand));
    }
  }
  return out;
}

// One transform drawn uniformly from the fixed weak family.
inline SceneTransform draw_weak_transform(Rng& rng) {
  SceneTransform t;
  t.scale = rng.bernoulli(0.5) ? 0.95 : 1.05;
  t.yaw_rotation = rng.bernoulli(0.5) ? std::numbers::pi / 8 : -std::numbers::pi / 8;
  t.flip_x = rng.bernoulli(0.5);
  return t;
}

// Runs the teacher on the weakly augmented scene with independent noise,
// maps predictions back, and fills (aug_box, aug_obj_logit, v) on each
// original candidate by max-BEV-IoU matching. Below IoU 0.1 a candidate is
// unmatched: v = 0 and the logit floor stands in for s-tilde.
inline void weak_augment_view(const GeneratorConfig& cfg, const Scene& scene,
                              std::vector<TeacherCandidate>& candidates, Rng& rng) {
  const SceneTransform t = draw_weak_transform(rng);
  const SceneTransform inv = invert_transform(t);
  Scene aug_scene = scene;
  for (auto& obj : aug_scene.objects) obj.box = apply_transform(obj.box, t);
  const auto aug_preds = teacher_predict(cfg, aug_scene, rng);
  std::vector<Box7> back_mapped;
  back_mapped.reserve(aug_preds.size());
  for (const auto& p : aug_preds) back_mapped.push_back(apply_transform(p.box, inv));
  for (auto& cand : candidates) {
    // a deterministic detector re-detects its own output, errors included, so
    // the consistency signal saturates regardless of the box's real quality
    if (cfg.aug_corr_prob > 0.0 && rng.bernoulli(cfg.aug_corr_prob)) {
      cand.aug_box = cand.box;
      cand.aug_obj_logit = cand.obj_logit + rng.normal(0.0, 0.3);
      cand.iou_consistency = 1.0;
      continue;
    }
    double best = 0;
    int best_j = -1;
    for (int j = 0; j < static_cast<int>(back_mapped.size()); ++j) {
      const double iou = bev_iou(cand.box, back_mapped[j]);
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j >= 0 && best >= 0.1) {
      cand.aug_box = back_mapped[best_j];
      cand.aug_obj_logit = aug_preds[best_j].obj_logit;
      cand.iou_consistency = box_iou(cand.box, back_mapped[best_j], cfg.iou_mode);
    } else {
      cand.aug_box = cand.box;
      cand.aug_obj_logit = -10.0;
      cand.iou_consistency = 0.0;
    }
  }
}

inline std::vector<TeacherCandidate> generate_candidates(const GeneratorConfig& cfg, const Scene& scene,
                                                         Rng& rng) {
  auto candidates = teacher_predict(cfg, scene, rng);
  weak_augment_view(cfg, scene, candidates, rng);
  return candidates;
}

inline ScoreFeature score_feature(const TeacherCandidate& c) {
  ScoreFeature s;
  s.obj_logit = c.obj_logit;
  s.aug_obj_logit = c.aug_obj_logit;
  s.cls_logits = c.cls_logits;
  s.iou_consistency = c.iou_consistency;
  return s;
}

inline ContextFeature context_feature(const Scene& scene, const TeacherCandidate& c) {
  ContextFeature ctx;
  ctx.class_id = c.source_gt >= 0 ? scene.objects[c.source_gt].class_id : argmax(c.cls_logits);
  ctx.distance = c.box.distance();
  return ctx;
}

// Joins pre-NMS candidates of labeled scenes with their GT-IoU targets.
inline std::vector<LabeledCandidate> labeled_batch(const GeneratorConfig& cfg,
                                                   const std::vector<Scene>& scenes, Rng& rng) {
  std::vector<LabeledCandidate> out;
  for (const auto& scene : scenes) {
    if (!scene.labeled) throw std::invalid_argument("labeled_batch: unlabeled scene passed");
    const auto candidates = generate_candidates(cfg, scene, rng);
    for (const auto& c : candidates) {
      LabeledCandidate lc;
      lc.scores = score_feature(c);
      lc.context = context_feature(scene, c);
      lc.box = c.box;
      lc.gt_iou = max_gt_iou(c.box, scene, cfg.iou_mode);
      out.push_back(std::move(lc));
    }
  }
  return out;
}

}  // namespace psel
