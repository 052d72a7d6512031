#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace adnad {

// Seeded generator with portable draws: the std:: distributions are
// implementation-defined, so everything that must be reproducible across
// toolchains goes through these helpers instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); n > 0. Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    __uint128_t m = static_cast<__uint128_t>(engine_()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<__uint128_t>(engine_()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

  double logistic(double mu, double scale) {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return mu + scale * std::log(u / (1.0 - u));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Derives an independent stream, e.g. one per tree.
  Rng split(std::uint64_t salt) {
    std::seed_seq seq{next_u64(), salt};
    std::uint64_t seed = 0;
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return Rng(seed);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace adnad
