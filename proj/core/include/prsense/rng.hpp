#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "prsense/errors.hpp"

namespace prsense {

/// Seeded generator with self-contained distributions. std:: distributions
/// are implementation-defined, so every draw here is spelled out to keep
/// outputs byte-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] via rejection sampling.
  long uniform_int(long lo, long hi) {
    if (hi < lo) throw Error("uniform_int: empty range");
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return lo + static_cast<long>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  long binomial(long n, double p) {
    long s = 0;
    for (long i = 0; i < n; ++i) s += bernoulli(p) ? 1 : 0;
    return s;
  }

  /// Index draw proportional to nonnegative weights (CDF scan).
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw Error("categorical: weights sum to zero");
    double t = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (t < acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<long>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace prsense
