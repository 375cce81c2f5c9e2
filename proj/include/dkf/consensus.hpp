#pragma once

// Consensus coupling gain and synchronization strategies.
//
// The local filters share the dynamics S. Coupling nodes through
// u_i = sum_j a_ij (Gamma eta_j - Gamma eta_i) synchronizes them iff every
// S - mu_j 1 Gamma (j >= 2) is Schur. A gain with this property exists when
//
//   mahler(S) = prod |unstable eig(S)|  <  (1 + mu_2/mu_m) / (1 - mu_2/mu_m),
//
// and is built from a modified Riccati solution P with parameter zeta.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dkf/error.hpp"
#include "dkf/numerics.hpp"
#include "dkf/plant.hpp"
#include "dkf/random.hpp"

namespace dkf {

struct FeasibilityCheck {
  double mahler = 1.0;
  double bound = std::numeric_limits<double>::infinity();
  bool feasible = true;
};

struct ConsensusDesign {
  double zeta = 0.0;
  Matrix p;        ///< modified Riccati solution
  RowVector gamma;
  double mahler = 1.0;
  double bound = std::numeric_limits<double>::infinity();
  std::vector<double> radii;  ///< rho(S - mu_j 1 Gamma), j = 2..m
  double mare_margin = 0.0;   ///< min eigenvalue of the inequality's left side
  int mare_iterations = 0;

  double worst_radius() const {
    double r = 0.0;
    for (double x : radii) r = std::max(r, x);
    return r;
  }
};

inline double mahler_measure(const Matrix& s) {
  const ComplexVector ev = eigenvalues(s);
  double out = 1.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (is_unstable_mode(ev(i))) out *= std::abs(ev(i));
  }
  return out;
}

/// (1 + mu2/mu_m) / (1 - mu2/mu_m); infinite for complete-like spectra or a
/// single node.
inline double graph_bound(const SensorGraph& graph) {
  if (graph.size() < 2) return std::numeric_limits<double>::infinity();
  const double ratio = graph.mu2() / graph.mu_max();
  if (ratio >= 1.0 - 1e-12) return std::numeric_limits<double>::infinity();
  return (1.0 + ratio) / (1.0 - ratio);
}

inline FeasibilityCheck check_condition(const Matrix& s,
                                        const SensorGraph& graph) {
  if (!graph.connected()) {
    throw Error(Errc::kDisconnected, "check_condition: graph not connected");
  }
  FeasibilityCheck out;
  out.mahler = mahler_measure(s);
  out.bound = graph_bound(graph);
  out.feasible = out.mahler < out.bound;
  return out;
}

/// One application of P <- S^T P S - (1 - zeta^2) S^T P 1 1^T P S / (1^T P 1) + I.
inline Matrix mare_step(const Matrix& s, const Matrix& p, double zeta) {
  const Eigen::Index n = s.rows();
  const Vector one = Vector::Ones(n);
  const Vector ps1 = s.transpose() * (p * one);
  const double denom = one.dot(p * one);
  return symmetrize(s.transpose() * p * s -
                    (1.0 - zeta * zeta) * ps1 * ps1.transpose() / denom +
                    Matrix::Identity(n, n));
}

/// P - S^T P S + (1 - zeta^2) S^T P 1 1^T P S / (1^T P 1); positive definite
/// when P solves the modified Riccati inequality.
inline Matrix mare_lhs(const Matrix& s, const Matrix& p, double zeta) {
  const Eigen::Index n = s.rows();
  return p - mare_step(s, p, zeta) + Matrix::Identity(n, n);
}

struct MareSolution {
  Matrix p;
  int iterations = 0;
  double margin = 0.0;
};

inline MareSolution solve_mare(const Matrix& s, double zeta,
                               int max_iterations = 100000,
                               double tolerance = 1e-11) {
  require_square(s, "solve_mare: S");
  if (!(zeta > 0.0 && zeta < 1.0)) {
    throw Error(Errc::kInfeasibleZeta, "zeta must lie in (0, 1)");
  }
  const double mahler = mahler_measure(s);
  if (!(zeta * mahler < 1.0)) {
    throw Error(Errc::kInfeasibleZeta,
                "zeta * mahler = " + std::to_string(zeta * mahler) +
                    " must be below 1");
  }
  const Eigen::Index n = s.rows();
  MareSolution out;
  out.p = Matrix::Identity(n, n);
  for (int it = 1; it <= max_iterations; ++it) {
    Matrix next = mare_step(s, out.p, zeta);
    const double change = (next - out.p).norm() / next.norm();
    out.p = std::move(next);
    out.iterations = it;
    if (!out.p.allFinite()) break;
    if (change <= tolerance) {
      out.margin = min_symmetric_eigenvalue(mare_lhs(s, out.p, zeta));
      if (!(out.margin > 1e-10 * out.p.norm())) {
        throw Error(Errc::kNoConvergence,
                    "modified Riccati inequality margin too small");
      }
      return out;
    }
  }
  throw Error(Errc::kNoConvergence,
              "modified Riccati iteration did not converge");
}

/// Gamma = (2 / (mu2 + mu_m)) 1^T P S / (1^T P 1).
inline RowVector compute_gamma(const Matrix& s, const Matrix& p,
                               const SensorGraph& graph) {
  const Eigen::Index n = s.rows();
  if (graph.size() < 2) return RowVector::Zero(n);
  const Vector one = Vector::Ones(n);
  const double scale = 2.0 / (graph.mu2() + graph.mu_max());
  return scale * (one.transpose() * p * s) / one.dot(p * one);
}

inline std::vector<double> mode_radii(const Matrix& s, const RowVector& gamma,
                                      const SensorGraph& graph) {
  const Vector one = Vector::Ones(s.rows());
  std::vector<double> out;
  for (Eigen::Index j = 1; j < graph.size(); ++j) {
    out.push_back(spectral_radius(s - graph.mu(j) * one * gamma));
  }
  return out;
}

/// Radii rho(S - mu_j 1 Gamma) for j >= 2; throws GainInfeasible when any
/// reaches 1 - 1e-9.
inline std::vector<double> verify_gain(const Matrix& s, const RowVector& gamma,
                                       const SensorGraph& graph) {
  std::vector<double> radii = mode_radii(s, gamma, graph);
  std::string bad;
  for (std::size_t j = 0; j < radii.size(); ++j) {
    if (!(radii[j] < 1.0 - tol::kUnitCircle)) {
      bad += (bad.empty() ? "" : ", ") + std::to_string(j + 2);
    }
  }
  if (!bad.empty()) {
    throw Error(Errc::kGainInfeasible, "unstable consensus modes j = " + bad);
  }
  return radii;
}

/// zeta^-1 = sqrt(mahler * bound), or 2 * mahler when bound is infinite.
inline double default_zeta(double mahler, double bound) {
  const double inv = std::isinf(bound) ? 2.0 * mahler : std::sqrt(mahler * bound);
  return 1.0 / inv;
}

inline ConsensusDesign design_consensus(const Matrix& s,
                                        const SensorGraph& graph,
                                        std::optional<double> zeta = {}) {
  const FeasibilityCheck fc = check_condition(s, graph);
  ConsensusDesign d;
  d.mahler = fc.mahler;
  d.bound = fc.bound;
  if (!fc.feasible) {
    throw Error(Errc::kInfeasibleCondition,
                "mahler measure " + std::to_string(fc.mahler) +
                    " is not below the graph bound " +
                    std::to_string(fc.bound));
  }
  if (graph.size() < 2) {
    d.zeta = zeta.value_or(0.5);
    d.p = Matrix::Identity(s.rows(), s.rows());
    d.gamma = RowVector::Zero(s.rows());
    return d;
  }
  d.zeta = zeta ? *zeta : default_zeta(fc.mahler, fc.bound);
  if (!(d.zeta > 0.0 && d.zeta < 1.0) || !(1.0 / d.zeta > fc.mahler) ||
      1.0 / d.zeta > fc.bound * (1.0 + 1e-12)) {
    throw Error(Errc::kInfeasibleZeta,
                "need mahler < 1/zeta <= bound with zeta in (0, 1); got zeta = " +
                    std::to_string(d.zeta));
  }
  // Every consensus mode must contract by at least zeta.
  const double mid = graph.mu2() + graph.mu_max();
  for (Eigen::Index j = 1; j < graph.size(); ++j) {
    if (std::abs(1.0 - 2.0 * graph.mu(j) / mid) > d.zeta + 1e-12) {
      throw Error(Errc::kInfeasibleZeta,
                  "zeta below the contraction factor of mode " +
                      std::to_string(j + 1));
    }
  }
  MareSolution mare = solve_mare(s, d.zeta);
  d.p = std::move(mare.p);
  d.mare_iterations = mare.iterations;
  d.mare_margin = mare.margin;
  d.gamma = compute_gamma(s, d.p, graph);
  d.radii = verify_gain(s, d.gamma, graph);
  return d;
}

// ---------------------------------------------------------------------------
// Synchronization strategies
//
// A strategy decides the effective coupling coefficient a_ij * gamma_ij(k)
// of every link in each exchange round. Both strategies below are
// memoryless: the message is Delta_i = Gamma eta_i.

class SyncStrategy {
 public:
  virtual ~SyncStrategy() = default;
  virtual std::string name() const = 0;
  /// Fresh instance with its own random stream for one trial.
  virtual std::unique_ptr<SyncStrategy> fork(std::uint64_t trial_seed) const = 0;
  /// Writes the weights used in this round; symmetric, zero diagonal.
  virtual void link_weights(const Matrix& adjacency, Matrix& out) = 0;
};

class StaticStrategy final : public SyncStrategy {
 public:
  std::string name() const override { return "static"; }
  std::unique_ptr<SyncStrategy> fork(std::uint64_t) const override {
    return std::make_unique<StaticStrategy>();
  }
  void link_weights(const Matrix& adjacency, Matrix& out) override {
    out = adjacency;
  }
};

/// Each undirected link works in a round with probability 1 - drop.
class BernoulliDropStrategy final : public SyncStrategy {
 public:
  explicit BernoulliDropStrategy(double drop, std::uint64_t seed = 0)
      : drop_(drop), rng_(derive_seed(seed, kStrategyStream)) {
    if (!(drop >= 0.0 && drop < 1.0)) {
      throw Error(Errc::kInvalidArgument, "drop probability must be in [0, 1)");
    }
  }

  std::string name() const override { return "bernoulli"; }
  double drop() const { return drop_; }

  std::unique_ptr<SyncStrategy> fork(std::uint64_t trial_seed) const override {
    return std::make_unique<BernoulliDropStrategy>(drop_, trial_seed);
  }

  void link_weights(const Matrix& adjacency, Matrix& out) override {
    out = adjacency;
    std::bernoulli_distribution works(1.0 - drop_);
    for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < adjacency.cols(); ++j) {
        if (adjacency(i, j) == 0.0) continue;
        if (!works(rng_)) {
          out(i, j) = 0.0;
          out(j, i) = 0.0;
        }
      }
    }
  }

 private:
  double drop_;
  std::mt19937_64 rng_;
};

inline std::unique_ptr<SyncStrategy> static_strategy() {
  return std::make_unique<StaticStrategy>();
}

inline std::unique_ptr<SyncStrategy> bernoulli_drop_strategy(double drop,
                                                             std::uint64_t seed = 0) {
  return std::make_unique<BernoulliDropStrategy>(drop, seed);
}

}  // namespace dkf
