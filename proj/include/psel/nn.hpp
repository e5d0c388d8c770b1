#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "psel/rng.hpp"

namespace psel {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline std::atomic<std::uint64_t> fourier_clamp_count{0};

// [sin(2^k pi d), cos(2^k pi d)] for k = 0..dim/2-1, sin-first per frequency.
inline std::vector<double> fourier_embed(double d_norm, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("fourier_embed: dim must be even and positive");
  if (d_norm < 0.0 || d_norm > 1.0) {
    fourier_clamp_count.fetch_add(1, std::memory_order_relaxed);
    d_norm = std::clamp(d_norm, 0.0, 1.0);
  }
  std::vector<double> out(static_cast<std::size_t>(dim));
  double freq = std::numbers::pi;
  for (int k = 0; k < dim / 2; ++k) {
    out[2 * k] = std::sin(freq * d_norm);
    out[2 * k + 1] = std::cos(freq * d_norm);
    freq *= 2.0;
  }
  return out;
}

enum class OutputActivation { Sigmoid, Identity };

// Dense MLP with ReLU hidden layers. Parameters live in one flat vector,
// per layer W (out x in, row-major) followed by b.
struct Mlp {
  std::vector<int> widths;  // [in, hidden..., out]
  OutputActivation out_act = OutputActivation::Sigmoid;
  std::vector<double> params;

  static std::size_t count_params(const std::vector<int>& widths) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      n += static_cast<std::size_t>(widths[i + 1]) * widths[i] + widths[i + 1];
    }
    return n;
  }

  // Kaiming-style uniform init scaled by fan-in; biases zero.
  static Mlp init(std::vector<int> widths, OutputActivation act, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
    for (int w : widths) {
      if (w <= 0) throw std::invalid_argument("Mlp: widths must be positive");
    }
    Mlp m;
    m.widths = std::move(widths);
    m.out_act = act;
    m.params.assign(count_params(m.widths), 0.0);
    std::size_t off = 0;
    for (std::size_t layer = 0; layer + 1 < m.widths.size(); ++layer) {
      const int fan_in = m.widths[layer];
      const int fan_out = m.widths[layer + 1];
      const double bound = std::sqrt(6.0 / fan_in);
      for (int i = 0; i < fan_out * fan_in; ++i) m.params[off + i] = rng.uniform(-bound, bound);
      off += static_cast<std::size_t>(fan_out) * fan_in + fan_out;
    }
    return m;
  }

  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }

  struct Cache {
    // acts[0] is the input; acts[i] the post-activation of layer i.
    // pre[i] the pre-activation of layer i+1's input computation.
    std::vector<std::vector<double>> acts;
    std::vector<std::vector<double>> pre;
  };

  std::vector<double> forward(std::span<const double> x, Cache* cache = nullptr) const {
    if (static_cast<int>(x.size()) != widths.front()) {
      throw std::invalid_argument("Mlp::forward: input width mismatch");
    }
    std::vector<double> cur(x.begin(), x.end());
    if (cache) {
      cache->acts.clear();
      cache->pre.clear();
      cache->acts.push_back(cur);
    }
    std::size_t off = 0;
    const std::size_t layers = widths.size() - 1;
    for (std::size_t layer = 0; layer < layers; ++layer) {
      const int in = widths[layer], out = widths[layer + 1];
      std::vector<double> z(static_cast<std::size_t>(out));
      for (int r = 0; r < out; ++r) {
        double acc = params[off + static_cast<std::size_t>(out) * in + r];  // bias
        const double* wrow = &params[off + static_cast<std::size_t>(r) * in];
        for (int c = 0; c < in; ++c) acc += wrow[c] * cur[c];
        z[r] = acc;
      }
      if (cache) cache->pre.push_back(z);
      const bool last = layer + 1 == layers;
      if (last) {
        if (out_act == OutputActivation::Sigmoid) {
          for (auto& v : z) v = sigmoid(v);
        }
      } else {
        for (auto& v : z) v = std::max(v, 0.0);
      }
      cur = std::move(z);
      if (cache) cache->acts.push_back(cur);
      off += static_cast<std::size_t>(out) * in + out;
    }
    return cur;
  }

  // Accumulates parameter gradients into param_grad (same size as params).
  // If input_grad is nonempty it receives d(loss)/d(input), accumulated.
  void backward(const Cache& cache, std::span<const double> upstream,
                std::span<double> param_grad, std::span<double> input_grad = {}) const {
    if (cache.acts.size() != widths.size()) throw std::invalid_argument("Mlp::backward: stale cache");
    if (param_grad.size() != params.size()) throw std::invalid_argument("Mlp::backward: grad size mismatch");
    const std::size_t layers = widths.size() - 1;
    std::vector<double> delta(upstream.begin(), upstream.end());
    if (static_cast<int>(delta.size()) != widths.back()) {
      throw std::invalid_argument("Mlp::backward: upstream width mismatch");
    }
    if (out_act == OutputActivation::Sigmoid) {
      for (std::size_t i = 0; i < delta.size(); ++i) {
        const double y = cache.acts.back()[i];
        delta[i] *= y * (1.0 - y);
      }
    }
    // layer offsets
    std::vector<std::size_t> offs(layers);
    std::size_t off = 0;
    for (std::size_t layer = 0; layer < layers; ++layer) {
      offs[layer] = off;
      off += static_cast<std::size_t>(widths[layer + 1]) * widths[layer] + widths[layer + 1];
    }
    for (std::size_t layer = layers; layer-- > 0;) {
      const int in = widths[layer], out = widths[layer + 1];
      const std::vector<double>& a_in = cache.acts[layer];
      const std::size_t base = offs[layer];
      for (int r = 0; r < out; ++r) {
        param_grad[base + static_cast<std::size_t>(out) * in + r] += delta[r];
        double* grow = &param_grad[base + static_cast<std::size_t>(r) * in];
        for (int c = 0; c < in; ++c) grow[c] += delta[r] * a_in[c];
      }
      if (layer == 0 && input_grad.empty()) break;
      std::vector<double> prev(static_cast<std::size_t>(in), 0.0);
      for (int r = 0; r < out; ++r) {
        const double* wrow = &params[base + static_cast<std::size_t>(r) * in];
        for (int c = 0; c < in; ++c) prev[c] += wrow[c] * delta[r];
      }
      if (layer > 0) {
        const std::vector<double>& z = cache.pre[layer - 1];
        for (int c = 0; c < in; ++c) {
          if (z[c] <= 0.0) prev[c] = 0.0;
        }
        delta = std::move(prev);
      } else {
        for (int c = 0; c < in; ++c) input_grad[c] += prev[c];
      }
    }
  }
};

// Learned lookup table of row embeddings.
struct EmbeddingTable {
  int rows = 0;
  int dim = 0;
  std::vector<double> entries;  // rows x dim, row-major

  static EmbeddingTable init(int rows, int dim, Rng& rng) {
    if (rows <= 0 || dim <= 0) throw std::invalid_argument("EmbeddingTable: rows and dim must be positive");
    EmbeddingTable t;
    t.rows = rows;
    t.dim = dim;
    t.entries.resize(static_cast<std::size_t>(rows) * dim);
    const double bound = std::sqrt(6.0 / dim);
    for (auto& v : t.entries) v = rng.uniform(-bound, bound);
    return t;
  }

  std::span<const double> row(int r) const {
    if (r < 0 || r >= rows) throw std::out_of_range("EmbeddingTable: row index out of range");
    return {entries.data() + static_cast<std::size_t>(r) * dim, static_cast<std::size_t>(dim)};
  }
};

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t skipped = 0;

  static AdamState init(std::size_t n, double lr = 1e-3) {
    AdamState s;
    s.lr = lr;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    return s;
  }
};

// Standard Adam with bias correction. Non-finite gradient entries skip the
// update for that parameter and bump the skip counter.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    if (!std::isfinite(g)) {
      ++st.skipped;
      continue;
    }
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

}  // namespace psel
