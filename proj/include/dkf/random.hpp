#pragma once

// Seed derivation and Gaussian sampling. Every trial owns its engines, so
// results do not depend on thread scheduling.

#include <cstdint>
#include <random>

#include "dkf/numerics.hpp"

namespace dkf {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent stream `stream` of a trial seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x5851F42D4C957F2DULL));
}

inline constexpr std::uint64_t kNoiseStream = 0;
inline constexpr std::uint64_t kStrategyStream = 1;

/// Draws N(0, cov) as L * standard normal with L from psd_factor.
class GaussianSampler {
 public:
  GaussianSampler() = default;
  explicit GaussianSampler(const Matrix& cov) : factor_(psd_factor(cov)) {}

  Eigen::Index dim() const { return factor_.rows(); }

  Vector draw(std::mt19937_64& rng) const {
    std::normal_distribution<double> normal;
    Vector e(factor_.cols());
    for (Eigen::Index i = 0; i < e.size(); ++i) e(i) = normal(rng);
    return factor_ * e;
  }

 private:
  Matrix factor_;
};

}  // namespace dkf
