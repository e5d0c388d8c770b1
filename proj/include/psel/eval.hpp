#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "psel/geom.hpp"
#include "psel/psm.hpp"
#include "psel/simworld.hpp"

namespace psel {

struct MatchConfig {
  std::vector<double> class_iou_thresholds{0.7, 0.5, 0.5};  // Car, Ped, Cyc
  IouMode iou_mode = IouMode::Iou3d;
};

struct PrCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }

  PrCounts& operator+=(const PrCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct PrReport {
  std::vector<PrCounts> per_class;
  PrCounts overall;
};

// Class-aware greedy one-to-one matching in descending pseudo-label weight.
// A pseudo-label is TP iff it claims an unconsumed same-class GT at
// IoU >= the class threshold.
inline PrReport match_pr(const std::vector<PseudoLabel>& pseudo, const std::vector<GtObject>& gt,
                         const MatchConfig& cfg) {
  const int num_classes = static_cast<int>(cfg.class_iou_thresholds.size());
  PrReport report;
  report.per_class.resize(num_classes);
  std::vector<std::size_t> order(pseudo.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return pseudo[i].weight > pseudo[j].weight; });
  std::vector<bool> consumed(gt.size(), false);
  for (std::size_t idx : order) {
    const auto& pl = pseudo[idx];
    const double thr = cfg.class_iou_thresholds[pl.class_id];
    double best = 0;
    int best_g = -1;
    for (int g = 0; g < static_cast<int>(gt.size()); ++g) {
      if (consumed[g] || gt[g].class_id != pl.class_id) continue;
      const double iou = box_iou(pl.box, gt[g].box, cfg.iou_mode);
      if (iou > best) {
        best = iou;
        best_g = g;
      }
    }
    if (best_g >= 0 && best >= thr) {
      consumed[best_g] = true;
      report.per_class[pl.class_id].tp += 1;
    } else {
      report.per_class[pl.class_id].fp += 1;
    }
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (!consumed[g]) report.per_class[gt[g].class_id].fn += 1;
  }
  for (const auto& c : report.per_class) report.overall += c;
  return report;
}

enum class CorrelationKind { Pearson, Spearman };

namespace detail {

inline std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
  std::vector<double> r(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;  // average rank for ties, 1-based
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace detail

// Returns nullopt for n < 2 or zero variance.
inline std::optional<double> correlation(const std::vector<double>& xs, const std::vector<double>& ys,
                                         CorrelationKind kind = CorrelationKind::Pearson) {
  if (xs.size() != ys.size() || xs.size() < 2) return std::nullopt;
  std::vector<double> a = xs, b = ys;
  if (kind == CorrelationKind::Spearman) {
    a = detail::ranks(a);
    b = detail::ranks(b);
  }
  const double n = static_cast<double>(a.size());
  const double mx = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double my = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double dx = a[i] - mx, dy = b[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// CTE threshold evaluated along a distance grid for one class.
inline std::vector<std::pair<double, double>> threshold_curve(const PsmModel& m, int class_id,
                                                              const std::vector<double>& distances) {
  std::vector<std::pair<double, double>> out;
  out.reserve(distances.size());
  for (double d : distances) {
    out.emplace_back(d, cte_threshold(m, ContextFeature{class_id, d}));
  }
  return out;
}

struct BinStats {
  std::vector<std::uint64_t> count_per_class;
  std::uint64_t count = 0;
  double mean = 0;
  double stddev = 0;
};

// Right-open bins over candidate distance; candidates beyond the last edge
// land in a trailing overflow bin so counts always conserve.
inline std::vector<BinStats> context_bins(const std::vector<LabeledCandidate>& candidates,
                                          const std::vector<double>& edges, int num_classes) {
  const std::size_t nbins = edges.size() + 1;
  std::vector<BinStats> bins(nbins);
  for (auto& b : bins) b.count_per_class.assign(num_classes, 0);
  std::vector<double> sums(nbins, 0.0), sqs(nbins, 0.0);
  for (const auto& c : candidates) {
    const std::size_t bi =
        std::upper_bound(edges.begin(), edges.end(), c.context.distance) - edges.begin();
    const double s = sigmoid(c.scores.obj_logit);
    bins[bi].count += 1;
    bins[bi].count_per_class[c.context.class_id] += 1;
    sums[bi] += s;
    sqs[bi] += s * s;
  }
  for (std::size_t i = 0; i < nbins; ++i) {
    if (bins[i].count == 0) continue;
    const double n = static_cast<double>(bins[i].count);
    bins[i].mean = sums[i] / n;
    const double var = std::max(0.0, sqs[i] / n - bins[i].mean * bins[i].mean);
    bins[i].stddev = std::sqrt(var);
  }
  return bins;
}

}  // namespace psel
