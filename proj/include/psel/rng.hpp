#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <sstream>

namespace psel {

// xoshiro256++ with splitmix64 seeding. All distributions below are
// implemented directly on the raw engine so that results depend only on
// the engine state, never on library-specific distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t x = seed;
    for (auto& w : state_) w = splitmix(x);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller, one sample per call; stateless apart from the engine.
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    // Knuth; fine for the small rates used here.
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derive an independent stream keyed by (this seed lineage, ids...).
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t x = seed;
    for (std::uint64_t id : ids) {
      x = splitmix(x) ^ (id * 0x9e3779b97f4a7c15ULL);
    }
    return Rng(splitmix(x));
  }

  std::string serialize() const {
    std::ostringstream os;
    os << state_[0] << ' ' << state_[1] << ' ' << state_[2] << ' ' << state_[3];
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    Rng r;
    std::istringstream is(text);
    is >> r.state_[0] >> r.state_[1] >> r.state_[2] >> r.state_[3];
    return r;
  }

  bool operator==(const Rng& other) const { return state_ == other.state_; }

 private:
  static std::uint64_t splitmix(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t v, int k) {
    return (v << k) | (v >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace psel
