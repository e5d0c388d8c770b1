#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "psel/config.hpp"
#include "psel/eval.hpp"
#include "psel/psm.hpp"
#include "psel/simworld.hpp"

namespace psel {

struct EmaState {
  std::vector<double> teacher;
  double rho = 0.999;

  static EmaState init(std::vector<double> initial, double rho) {
    if (rho < 0.0 || rho >= 1.0) throw std::invalid_argument("EmaState: rho must be in [0,1)");
    return EmaState{std::move(initial), rho};
  }
};

// theta_t = rho * theta_t + (1 - rho) * theta_s, computed in difference form
// so repeated updates contract toward theta_s at machine precision.
inline void ema_update(EmaState& st, std::span<const double> student) {
  if (st.teacher.size() != student.size()) throw std::invalid_argument("ema_update: shape mismatch");
  for (std::size_t i = 0; i < student.size(); ++i) {
    st.teacher[i] = student[i] + st.rho * (st.teacher[i] - student[i]);
  }
}

struct SoftGtEntry {
  Box7 box;
  int class_id = 0;
  double weight = 1.0;  // joint confidence at insertion time
  std::uint64_t scene_id = 0;
  int epoch = 0;
  // underlying object the pseudo-label covered at insertion time; pasting
  // replays the true geometry while the stored box stays the target, so a
  // misaligned entry carries its bias into every scene it is sampled into
  Box7 source_box;
  bool has_source = false;
};

// Append-only store of pseudo-labels with their joint confidences.
struct SoftGtDatabase {
  std::vector<SoftGtEntry> entries;

  // De-duplicates by BEV IoU > 0.7 against same-class entries from the
  // same scene. Returns whether the entry was stored.
  bool insert(const SoftGtEntry& e) {
    if (!(e.weight > 0.0 && e.weight <= 1.0)) throw std::invalid_argument("SoftGtDatabase: weight must be in (0,1]");
    for (const auto& prev : entries) {
      if (prev.scene_id == e.scene_id && prev.class_id == e.class_id &&
          bev_iou(prev.box, e.box) > 0.7) {
        return false;
      }
    }
    entries.push_back(e);
    return true;
  }

  std::size_t size() const { return entries.size(); }
};

// Samples up to quota entries per class whose boxes do not overlap the
// scene's existing boxes (BEV IoU > 0.05 rejects). Entries keep their
// stored weights.
inline std::vector<SoftGtEntry> soft_gt_sample(const SoftGtDatabase& db, const Scene& scene, Rng& rng,
                                               int quota_per_class, int num_classes) {
  std::vector<SoftGtEntry> out;
  if (db.entries.empty() || quota_per_class <= 0) return out;
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    by_class[db.entries[i].class_id].push_back(i);
  }
  std::vector<Box7> occupied;
  occupied.reserve(scene.objects.size());
  for (const auto& obj : scene.objects) occupied.push_back(obj.box);
  for (int c = 0; c < num_classes; ++c) {
    const auto& idx = by_class[c];
    if (idx.empty()) continue;
    int taken = 0;
    const int attempts = quota_per_class * 4;
    for (int a = 0; a < attempts && taken < quota_per_class; ++a) {
      const auto& e = db.entries[idx[rng.below(idx.size())]];
      bool clash = false;
      for (const auto& b : occupied) {
        if (bev_iou(e.box, b) > 0.05) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      occupied.push_back(e.box);
      out.push_back(e);
      ++taken;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proxy student: refines a noisy candidate box toward its label and
// re-predicts the class, so the unlabeled loss is a real differentiable
// quantity at desk scale.

struct ProxyStudent {
  Mlp refine;  // descriptor -> [7 box corrections, C class logits]
  int num_classes = 3;

  static ProxyStudent init(int num_classes, Rng& rng, const std::vector<int>& hidden = {32, 32}) {
    ProxyStudent s;
    s.num_classes = num_classes;
    std::vector<int> widths = {9};
    for (int h : hidden) widths.push_back(h);
    widths.push_back(7 + num_classes);
    s.refine = Mlp::init(widths, OutputActivation::Identity, rng);
    return s;
  }
};

inline std::vector<double> student_descriptor(const Box7& cand, double max_range, double s_obj,
                                              double max_pcls, double v) {
  return {cand.l,  cand.w, cand.h, cand.distance() / max_range, std::sin(cand.yaw),
          std::cos(cand.yaw), s_obj, max_pcls, v};
}

struct StudentInstance {
  std::vector<double> input;
  std::array<double, 7> target{};  // label box minus candidate box, yaw wrapped
  int target_class = 0;
  double weight = 1.0;
};

inline StudentInstance make_student_instance(const Box7& cand, const Box7& label, int class_id,
                                             double weight, double max_range, double s_obj = 1.0,
                                             double max_pcls = 1.0, double v = 1.0) {
  StudentInstance inst;
  inst.input = student_descriptor(cand, max_range, s_obj, max_pcls, v);
  inst.target = {label.cx - cand.cx, label.cy - cand.cy, label.cz - cand.cz,
                 label.l - cand.l,   label.w - cand.w,   label.h - cand.h,
                 wrap_angle(label.yaw - cand.yaw)};
  inst.target_class = class_id;
  inst.weight = weight;
  return inst;
}

namespace detail {

// What the student actually observes for a pseudo-label: a perturbed view of
// the underlying object when there is one, incoherent clutter when the label
// is a false positive.
inline Box7 observed_candidate(const GeneratorConfig& gen, const Box7& label,
                               const Box7* source, double e, Rng& rng) {
  if (source != nullptr) return perturb_box(gen, *source, e, rng, /*detector_bias=*/false);
  Box7 cand = label;
  cand.cx += rng.normal(0.0, 1.0);
  cand.cy += rng.normal(0.0, 1.0);
  cand.l = std::max(0.2, rng.normal(label.l, 0.5 * label.l));
  cand.w = std::max(0.2, rng.normal(label.w, 0.5 * label.w));
  cand.h = std::max(0.2, rng.normal(label.h, 0.5 * label.h));
  cand.yaw = wrap_angle(rng.uniform(-std::numbers::pi, std::numbers::pi));
  return cand;
}

inline double smooth_l1(double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }

inline double smooth_l1_grad(double d) { return std::clamp(d, -1.0, 1.0); }

}  // namespace detail

// Per-instance loss = cross-entropy(class) + smooth-L1(box correction),
// scaled by the instance weight; mean over the batch. Gradients accumulate
// into grads (same size as student params). Empty batch -> 0 by definition.
inline double student_loss(const ProxyStudent& student, const std::vector<StudentInstance>& batch,
                           std::vector<double>& grads) {
  if (batch.empty()) return 0.0;
  const int c_count = student.num_classes;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  Mlp::Cache cache;
  std::vector<double> upstream(static_cast<std::size_t>(7 + c_count));
  for (const auto& inst : batch) {
    const auto out = student.refine.forward(inst.input, &cache);
    double item = 0;
    for (int i = 0; i < 7; ++i) {
      const double d = out[i] - inst.target[i];
      item += detail::smooth_l1(d);
      upstream[i] = inst.weight * inv_n * detail::smooth_l1_grad(d);
    }
    const auto probs = softmax(std::span<const double>(out).subspan(7));
    item += -std::log(std::max(probs[inst.target_class], 1e-300));
    for (int j = 0; j < c_count; ++j) {
      upstream[7 + j] = inst.weight * inv_n * (probs[j] - (j == inst.target_class ? 1.0 : 0.0));
    }
    loss += inst.weight * item * inv_n;
    student.refine.backward(cache, upstream, grads);
  }
  return loss;
}

// Weighted unlabeled term: L_u = (1/N_u) sum_i w_i (cls + reg).
inline double unlabeled_loss(const ProxyStudent& student, const std::vector<StudentInstance>& batch,
                             std::vector<double>& grads) {
  return student_loss(student, batch, grads);
}

// Mean absolute residual after applying the predicted correction.
inline double refinement_error(const ProxyStudent& student, const std::vector<StudentInstance>& batch) {
  if (batch.empty()) return 0.0;
  double total = 0;
  for (const auto& inst : batch) {
    const auto out = student.refine.forward(inst.input);
    double err = 0;
    for (int i = 0; i < 7; ++i) err += std::abs(out[i] - inst.target[i]);
    total += err / 7.0;
  }
  return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Burn-in: supervised PSM pretraining on labeled scenes.

struct BurninResult {
  PsmModel model;
  AdamState opt;
};

template <typename EpochCallback>
BurninResult burn_in(const RunConfig& cfg, const std::vector<Scene>& labeled, EpochCallback&& on_epoch) {
  if (labeled.empty()) throw std::invalid_argument("burn_in: no labeled scenes");
  Rng init_rng = Rng::derive(cfg.seed, {0x10});
  BurninResult res;
  res.model = PsmModel::init(cfg.generator.num_classes(), init_rng, cfg.psm.tau_iou,
                             cfg.generator.max_range, cfg.psm.hidden, cfg.psm.class_embed_dim,
                             cfg.psm.fourier_dim);
  res.model.iou_mode = cfg.generator.iou_mode;
  res.opt = AdamState::init(res.model.param_count(), cfg.psm.lr);
  for (int ep = 0; ep < cfg.burnin.epochs; ++ep) {
    Rng rng = Rng::derive(cfg.seed, {0x11, static_cast<std::uint64_t>(ep)});
    auto pool = labeled_batch(cfg.generator, labeled, rng);
    // deterministic shuffle
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[rng.below(i)]);
    }
    double sum_pqe = 0, sum_cte = 0;
    int steps = 0;
    for (std::size_t off = 0; off < pool.size(); off += cfg.burnin.batch) {
      const std::size_t end = std::min(pool.size(), off + cfg.burnin.batch);
      std::vector<LabeledCandidate> batch(pool.begin() + off, pool.begin() + end);
      const auto r = psm_train_step(res.model, batch, res.opt);
      sum_pqe += r.loss_pqe;
      sum_cte += r.loss_cte;
      ++steps;
    }
    on_epoch(ep, steps ? sum_pqe / steps : 0.0, steps ? sum_cte / steps : 0.0);
  }
  res.model.trained = cfg.burnin.epochs > 0;
  return res;
}

inline BurninResult burn_in(const RunConfig& cfg, const std::vector<Scene>& labeled) {
  return burn_in(cfg, labeled, [](int, double, double) {});
}

// ---------------------------------------------------------------------------
// Semi-supervised loop.

struct EpochMetrics {
  int epoch = 0;
  PrReport pr;
  double l_pqe = 0;
  double l_cte = 0;
  double loss_labeled = 0;
  double loss_unlabeled = 0;
  double learning_state = 0;
  double refine_error = 0;
};

struct SslState {
  PsmModel psm;
  AdamState psm_opt;
  ProxyStudent student;
  AdamState student_opt;
  EmaState ema;
  SoftGtDatabase softgt;
  double quality_ema = 0.0;
  double initial_refine_error = -1.0;
  int epoch = 0;  // next epoch to run
  std::vector<EpochMetrics> history;
};

inline double ssl_learning_state(const RunConfig& cfg, const SslState& st) {
  const double e0 = cfg.generator.learning_state;
  return e0 + (1.0 - e0) * std::clamp(st.quality_ema, 0.0, 1.0);
}

inline std::vector<Scene> make_validation_scenes(const RunConfig& cfg) {
  std::vector<Scene> val;
  for (int i = 0; i < cfg.ssl.val_scenes; ++i) {
    Rng rng = Rng::derive(cfg.seed, {0x30, static_cast<std::uint64_t>(i)});
    val.push_back(sample_scene(cfg.generator, 1000000u + i, true, rng));
  }
  return val;
}

inline std::vector<StudentInstance> validation_instances(const RunConfig& cfg,
                                                         const std::vector<Scene>& val, double e) {
  std::vector<StudentInstance> out;
  GeneratorConfig gen = cfg.generator;
  gen.learning_state = e;
  for (const auto& scene : val) {
    Rng rng = Rng::derive(cfg.seed, {0x31, scene.id});
    for (const auto& obj : scene.objects) {
      const Box7 cand = perturb_box(gen, obj.box, e, rng, /*detector_bias=*/false);
      out.push_back(make_student_instance(cand, obj.box, obj.class_id, 1.0, gen.max_range));
    }
  }
  return out;
}

inline SslState ssl_init(const RunConfig& cfg, const BurninResult& burnin) {
  SslState st;
  st.psm = burnin.model;
  st.psm_opt = burnin.opt;
  Rng rng = Rng::derive(cfg.seed, {0x20});
  st.student = ProxyStudent::init(cfg.generator.num_classes(), rng);
  st.student_opt = AdamState::init(st.student.refine.params.size(), cfg.ssl.student_lr);
  st.ema = EmaState::init(st.student.refine.params, cfg.ssl.rho);
  return st;
}

// One full epoch: pseudo-labeling on unlabeled scenes, student training with
// Soft Supervision, EMA teacher update, one PSM pass on labeled scenes, and
// pseudo-label precision/recall against the hidden GT.
inline EpochMetrics ssl_epoch(const RunConfig& cfg, SslState& st, const std::vector<Scene>& labeled,
                              const std::vector<Scene>& unlabeled, const std::vector<Scene>& val) {
  const int ep = st.epoch;
  const double e = ssl_learning_state(cfg, st);
  GeneratorConfig gen = cfg.generator;
  gen.learning_state = e;

  EpochMetrics metrics;
  metrics.epoch = ep;
  metrics.learning_state = e;
  metrics.pr.per_class.resize(gen.num_classes());

  if (st.initial_refine_error < 0.0) {
    const auto val_inst = validation_instances(cfg, val, e);
    st.initial_refine_error = std::max(1e-9, refinement_error(st.student, val_inst));
  }

  // (a)+(b) teacher candidates and pseudo-label selection on unlabeled scenes
  const int n_u = std::min<int>(cfg.ssl.unlabeled_scenes_per_epoch, static_cast<int>(unlabeled.size()));
  std::vector<StudentInstance> unlabeled_pool;
  SelectConfig sel_cfg{cfg.psm.nms_iou_threshold};
  for (int i = 0; i < n_u; ++i) {
    const Scene& scene = unlabeled[(static_cast<std::size_t>(ep) * n_u + i) % unlabeled.size()];
    Rng rng = Rng::derive(cfg.seed, {0x21, scene.id, static_cast<std::uint64_t>(ep)});
    const auto candidates = generate_candidates(gen, scene, rng);
    std::vector<SelectionCandidate> sel;
    sel.reserve(candidates.size());
    for (const auto& c : candidates) {
      SelectionCandidate sc;
      sc.scores = score_feature(c);
      sc.context.class_id = argmax(c.cls_logits);
      sc.context.distance = c.box.distance();
      sc.box = c.box;
      sel.push_back(std::move(sc));
    }
    const auto pseudo = select(st.psm, sel, sel_cfg);
    const auto pr = match_pr(pseudo, scene.objects, cfg.match);
    for (int c = 0; c < gen.num_classes(); ++c) metrics.pr.per_class[c] += pr.per_class[c];
    // soft GT accumulation and student instances from scene pseudo-labels.
    // The candidate reflects what the scene actually contains: a perturbed
    // view of the underlying object when the pseudo-label covers one, or
    // incoherent background clutter when it does not. The target is always
    // the pseudo-label, so pseudo-label error becomes target bias and
    // false positives become pure noise; the weight decides how much of
    // either the student absorbs.
    for (const auto& pl : pseudo) {
      double best_iou = 0.0;
      const GtObject* src = nullptr;
      for (const auto& obj : scene.objects) {
        const double iou = bev_iou(pl.box, obj.box);
        if (iou > best_iou) {
          best_iou = iou;
          src = &obj;
        }
      }
      const bool matched = src != nullptr && best_iou >= 0.3;
      SoftGtEntry entry{pl.box, pl.class_id, std::clamp(pl.weight, 1e-6, 1.0), scene.id, ep};
      if (matched) {
        entry.source_box = src->box;
        entry.has_source = true;
      }
      st.softgt.insert(entry);
      const Box7 cand =
          detail::observed_candidate(gen, pl.box, matched ? &src->box : nullptr, e, rng);
      unlabeled_pool.push_back(make_student_instance(cand, pl.box, pl.class_id,
                                                     cfg.ssl.reweighting ? pl.weight : 1.0,
                                                     gen.max_range, pl.weight, 1.0, pl.quality));
    }
    // soft GT sampling augmentation
    const auto sampled = soft_gt_sample(st.softgt, scene, rng, cfg.ssl.softgt_quota_per_class,
                                        gen.num_classes());
    for (const auto& entry : sampled) {
      const Box7 cand = detail::observed_candidate(
          gen, entry.box, entry.has_source ? &entry.source_box : nullptr, e, rng);
      unlabeled_pool.push_back(make_student_instance(cand, entry.box, entry.class_id,
                                                     cfg.ssl.reweighting ? entry.weight : 1.0,
                                                     gen.max_range, entry.weight, 1.0, 1.0));
    }
  }
  for (const auto& c : metrics.pr.per_class) metrics.pr.overall += c;

  // labeled student instances
  std::vector<StudentInstance> labeled_pool;
  for (const auto& scene : labeled) {
    Rng rng = Rng::derive(cfg.seed, {0x22, scene.id, static_cast<std::uint64_t>(ep)});
    for (const auto& obj : scene.objects) {
      const Box7 cand = perturb_box(gen, obj.box, e, rng, /*detector_bias=*/false);
      labeled_pool.push_back(make_student_instance(cand, obj.box, obj.class_id, 1.0, gen.max_range));
    }
  }

  // (c) student training on L_l + L_u
  Rng shuffle_rng = Rng::derive(cfg.seed, {0x23, static_cast<std::uint64_t>(ep)});
  for (std::size_t i = labeled_pool.size(); i > 1; --i) {
    std::swap(labeled_pool[i - 1], labeled_pool[shuffle_rng.below(i)]);
  }
  for (std::size_t i = unlabeled_pool.size(); i > 1; --i) {
    std::swap(unlabeled_pool[i - 1], unlabeled_pool[shuffle_rng.below(i)]);
  }
  const int batch_l = std::max(1, cfg.ssl.student_batch / (1 + cfg.ssl.unlabeled_per_labeled));
  const int batch_u = batch_l * cfg.ssl.unlabeled_per_labeled;
  const std::size_t steps = labeled_pool.empty()
                                ? 0
                                : (labeled_pool.size() + batch_l - 1) / batch_l;
  double sum_ll = 0, sum_lu = 0;
  std::vector<double> grads(st.student.refine.params.size());
  for (std::size_t s = 0; s < steps; ++s) {
    std::fill(grads.begin(), grads.end(), 0.0);
    const std::size_t lo = s * batch_l;
    const std::size_t hi = std::min(labeled_pool.size(), lo + batch_l);
    const std::vector<StudentInstance> lb(labeled_pool.begin() + lo, labeled_pool.begin() + hi);
    std::vector<StudentInstance> ub;
    if (!unlabeled_pool.empty()) {
      for (int k = 0; k < batch_u; ++k) {
        ub.push_back(unlabeled_pool[(s * batch_u + k) % unlabeled_pool.size()]);
      }
    }
    const double ll = student_loss(st.student, lb, grads);
    const double lu = unlabeled_loss(st.student, ub, grads);
    if (!std::isfinite(ll) || !std::isfinite(lu)) {
      throw std::runtime_error("ssl_epoch: non-finite student loss");
    }
    adam_step(st.student.refine.params, grads, st.student_opt);
    // (d) EMA teacher update, once per optimizer step
    ema_update(st.ema, st.student.refine.params);
    sum_ll += ll;
    sum_lu += lu;
  }
  metrics.loss_labeled = steps ? sum_ll / steps : 0.0;
  metrics.loss_unlabeled = steps ? sum_lu / steps : 0.0;

  // (e) PSM online update: one labeled pass
  if (cfg.ssl.psm_online_updates) {
    Rng rng = Rng::derive(cfg.seed, {0x24, static_cast<std::uint64_t>(ep)});
    auto pool = labeled_batch(gen, labeled, rng);
    for (std::size_t i = pool.size(); i > 1; --i) {
      std::swap(pool[i - 1], pool[rng.below(i)]);
    }
    double sum_pqe = 0, sum_cte = 0;
    int nsteps = 0;
    for (std::size_t off = 0; off < pool.size(); off += cfg.burnin.batch) {
      const std::size_t end = std::min(pool.size(), off + cfg.burnin.batch);
      const std::vector<LabeledCandidate> batch(pool.begin() + off, pool.begin() + end);
      const auto r = psm_train_step(st.psm, batch, st.psm_opt);
      sum_pqe += r.loss_pqe;
      sum_cte += r.loss_cte;
      ++nsteps;
    }
    metrics.l_pqe = nsteps ? sum_pqe / nsteps : 0.0;
    metrics.l_cte = nsteps ? sum_cte / nsteps : 0.0;
  }

  // (f) teacher-quality tracking for the learning-state schedule
  ProxyStudent teacher = st.student;
  teacher.refine.params = st.ema.teacher;
  const auto val_inst = validation_instances(cfg, val, e);
  metrics.refine_error = refinement_error(teacher, val_inst);
  if (!std::isfinite(metrics.refine_error)) {
    throw std::runtime_error("ssl_epoch: non-finite refinement error");
  }
  const double q = std::clamp(1.0 - metrics.refine_error / st.initial_refine_error, 0.0, 1.0);
  st.quality_ema = 0.8 * st.quality_ema + 0.2 * q;

  st.history.push_back(metrics);
  st.epoch += 1;
  return metrics;
}

}  // namespace psel
