#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "psel/geom.hpp"
#include "psel/nn.hpp"
#include "psel/rng.hpp"

namespace psel {

// Teacher score inputs for quality estimation, logit scale throughout
// except the IoU consistency v, which is already a probability-scale scalar.
struct ScoreFeature {
  double obj_logit = 0;
  double aug_obj_logit = 0;
  std::vector<double> cls_logits;
  double iou_consistency = 0;  // v in [0,1]
};

struct ContextFeature {
  int class_id = 0;
  double distance = 0;  // meters from sensor origin, ground plane
};

struct LabeledCandidate {
  ScoreFeature scores;
  ContextFeature context;
  Box7 box;
  double gt_iou = 0;  // max IoU against the scene's GT boxes
};

struct PseudoLabel {
  Box7 box;
  int class_id = 0;
  double weight = 0;   // joint confidence w = s_obj * max(p_cls)
  double quality = 0;  // fused quality estimate
};

struct SelectionCandidate {
  ScoreFeature scores;
  ContextFeature context;
  Box7 box;
};

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0;
  for (auto& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Quality estimator + context-aware threshold estimator with a shared
// optimizer. Parameter layout for optimization: [pqe | cte | class_embed].
struct PsmModel {
  Mlp pqe;
  Mlp cte;
  EmbeddingTable class_embed;
  int fourier_dim = 8;
  int num_classes = 3;
  double max_range = 75.0;
  double tau_iou = 0.8;
  IouMode iou_mode = IouMode::Iou3d;
  bool trained = false;

  static PsmModel init(int num_classes, Rng& rng, double tau_iou = 0.8, double max_range = 75.0,
                       const std::vector<int>& hidden = {16, 32, 32}, int class_embed_dim = 8,
                       int fourier_dim = 8) {
    if (tau_iou <= 0.0 || tau_iou >= 1.0) throw std::invalid_argument("PsmModel: tau_iou must be in (0,1)");
    PsmModel m;
    m.num_classes = num_classes;
    m.fourier_dim = fourier_dim;
    m.max_range = max_range;
    m.tau_iou = tau_iou;
    std::vector<int> pqe_widths = {2 + num_classes + 1};
    std::vector<int> cte_widths = {class_embed_dim + fourier_dim};
    for (int h : hidden) {
      pqe_widths.push_back(h);
      cte_widths.push_back(h);
    }
    pqe_widths.push_back(1);
    cte_widths.push_back(1);
    m.pqe = Mlp::init(pqe_widths, OutputActivation::Sigmoid, rng);
    m.cte = Mlp::init(cte_widths, OutputActivation::Sigmoid, rng);
    m.class_embed = EmbeddingTable::init(num_classes, class_embed_dim, rng);
    return m;
  }

  std::size_t param_count() const {
    return pqe.params.size() + cte.params.size() + class_embed.entries.size();
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    out.insert(out.end(), pqe.params.begin(), pqe.params.end());
    out.insert(out.end(), cte.params.begin(), cte.params.end());
    out.insert(out.end(), class_embed.entries.begin(), class_embed.entries.end());
    return out;
  }

  void set_flat_params(std::span<const double> flat) {
    if (flat.size() != param_count()) throw std::invalid_argument("PsmModel: flat param size mismatch");
    std::size_t off = 0;
    std::copy_n(flat.begin() + off, pqe.params.size(), pqe.params.begin());
    off += pqe.params.size();
    std::copy_n(flat.begin() + off, cte.params.size(), cte.params.begin());
    off += cte.params.size();
    std::copy_n(flat.begin() + off, class_embed.entries.size(), class_embed.entries.begin());
  }
};

// Gradient buffers matching the PsmModel parameter layout.
struct PsmGrads {
  std::vector<double> pqe;
  std::vector<double> cte;
  std::vector<double> class_embed;

  static PsmGrads zeros(const PsmModel& m) {
    PsmGrads g;
    g.pqe.assign(m.pqe.params.size(), 0.0);
    g.cte.assign(m.cte.params.size(), 0.0);
    g.class_embed.assign(m.class_embed.entries.size(), 0.0);
    return g;
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    out.reserve(pqe.size() + cte.size() + class_embed.size());
    out.insert(out.end(), pqe.begin(), pqe.end());
    out.insert(out.end(), cte.begin(), cte.end());
    out.insert(out.end(), class_embed.begin(), class_embed.end());
    return out;
  }
};

inline std::vector<double> pqe_input(const PsmModel& m, const ScoreFeature& s) {
  if (static_cast<int>(s.cls_logits.size()) != m.num_classes) {
    throw std::invalid_argument("pqe_input: class logit width mismatch");
  }
  std::vector<double> x;
  x.reserve(2 + s.cls_logits.size() + 1);
  x.push_back(s.obj_logit);
  x.push_back(s.aug_obj_logit);
  x.insert(x.end(), s.cls_logits.begin(), s.cls_logits.end());
  x.push_back(s.iou_consistency);
  return x;
}

inline std::vector<double> cte_input(const PsmModel& m, const ContextFeature& c) {
  const auto emb = m.class_embed.row(c.class_id);  // throws on unknown class
  const auto four = fourier_embed(c.distance / m.max_range, m.fourier_dim);
  std::vector<double> x(emb.begin(), emb.end());
  x.insert(x.end(), four.begin(), four.end());
  return x;
}

inline double pqe_score(const PsmModel& m, const ScoreFeature& s) {
  return m.pqe.forward(pqe_input(m, s))[0];
}

inline double cte_threshold(const PsmModel& m, const ContextFeature& c) {
  return m.cte.forward(cte_input(m, c))[0];
}

// Squared threshold error: nonzero exactly on the false-negative
// (gt_iou >= tau_iou and s <= tau) and false-positive
// (gt_iou < tau_iou and s > tau) cases.
inline double threshold_error(double tau, double s, double gt_iou, double tau_iou) {
  const bool fn = gt_iou >= tau_iou && s <= tau;
  const bool fp = gt_iou < tau_iou && s > tau;
  if (fn || fp) {
    const double d = tau - s;
    return d * d;
  }
  return 0.0;
}

// Mean squared error between the fused quality and GT-IoU. Gradients flow
// into the PQE block only.
inline double l_pqe(const PsmModel& m, const std::vector<LabeledCandidate>& batch, PsmGrads& grads) {
  if (batch.empty()) throw std::invalid_argument("l_pqe: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  Mlp::Cache cache;
  for (const auto& item : batch) {
    const auto x = pqe_input(m, item.scores);
    const double q = m.pqe.forward(x, &cache)[0];
    const double r = q - item.gt_iou;
    loss += r * r * inv_n;
    const double upstream[1] = {2.0 * r * inv_n};
    m.pqe.backward(cache, upstream, grads.pqe);
  }
  return loss;
}

// Threshold-error loss. The quality estimate enters as a stopped gradient:
// CTE MLP and the class embedding receive gradients, PQE receives none.
inline double l_cte(const PsmModel& m, const std::vector<LabeledCandidate>& batch, PsmGrads& grads) {
  if (batch.empty()) throw std::invalid_argument("l_cte: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0;
  Mlp::Cache cache;
  const int embed_dim = m.class_embed.dim;
  std::vector<double> input_grad;
  for (const auto& item : batch) {
    const double s = pqe_score(m, item.scores);  // stop-gradient
    const auto x = cte_input(m, item.context);
    const double tau = m.cte.forward(x, &cache)[0];
    const double err = threshold_error(tau, s, item.gt_iou, m.tau_iou);
    loss += err * inv_n;
    if (err == 0.0) continue;
    const double upstream[1] = {2.0 * (tau - s) * inv_n};
    input_grad.assign(x.size(), 0.0);
    m.cte.backward(cache, upstream, grads.cte, input_grad);
    double* erow = &grads.class_embed[static_cast<std::size_t>(item.context.class_id) * embed_dim];
    for (int i = 0; i < embed_dim; ++i) erow[i] += input_grad[i];
  }
  return loss;
}

struct PsmStepResult {
  double loss_pqe = 0;
  double loss_cte = 0;
  bool skipped = false;
};

// One Adam step on L_PSM = L_PQE + L_CTE over the batch.
inline PsmStepResult psm_train_step(PsmModel& m, const std::vector<LabeledCandidate>& batch,
                                    AdamState& opt) {
  PsmGrads grads = PsmGrads::zeros(m);
  PsmStepResult res;
  res.loss_pqe = l_pqe(m, batch, grads);
  res.loss_cte = l_cte(m, batch, grads);
  if (!std::isfinite(res.loss_pqe) || !std::isfinite(res.loss_cte)) {
    res.skipped = true;
    ++opt.skipped;
    return res;
  }
  std::vector<double> flat = m.flat_params();
  const std::vector<double> gflat = grads.flat();
  adam_step(flat, gflat, opt);
  m.set_flat_params(flat);
  return res;
}

struct SelectConfig {
  double nms_iou_threshold = 0.1;
};

// NMS on objectness, then keep candidates whose fused quality strictly
// exceeds the context threshold. Ties (q == tau) reject.
inline std::vector<PseudoLabel> select(const PsmModel& m, const std::vector<SelectionCandidate>& candidates,
                                       const SelectConfig& cfg = {}) {
  std::vector<std::pair<Box7, double>> scored;
  scored.reserve(candidates.size());
  for (const auto& c : candidates) scored.emplace_back(c.box, sigmoid(c.scores.obj_logit));
  const auto kept = nms_bev(scored, cfg.nms_iou_threshold);
  std::vector<PseudoLabel> out;
  for (std::size_t idx : kept) {
    const auto& c = candidates[idx];
    const double q = pqe_score(m, c.scores);
    const double tau = cte_threshold(m, c.context);
    if (!(q > tau)) continue;
    PseudoLabel pl;
    pl.box = c.box;
    const auto probs = softmax(c.scores.cls_logits);
    pl.class_id = argmax(probs);
    pl.weight = sigmoid(c.scores.obj_logit) * probs[pl.class_id];
    pl.quality = q;
    out.push_back(pl);
  }
  return out;
}

}  // namespace psel
