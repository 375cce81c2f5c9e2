// Randomized invariants, 200 instances per property unless noted.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dkf/consensus.hpp"
#include "dkf/decomposition.hpp"
#include "dkf/kalman.hpp"
#include "test_util.hpp"

namespace dkf {
namespace {

constexpr int kInstances = 200;

/// Greedy multiset distance between two spectra of equal size.
double spectrum_distance(const ComplexVector& x, std::vector<Complex> y) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto best = std::min_element(y.begin(), y.end(), [&](Complex a, Complex b) {
      return std::abs(a - x(i)) < std::abs(b - x(i));
    });
    worst = std::max(worst, std::abs(*best - x(i)));
    y.erase(best);
  }
  return worst;
}

std::vector<Complex> to_vec(const ComplexVector& v) {
  return std::vector<Complex>(v.data(), v.data() + v.size());
}

TEST(Property, DareResidual) {
  std::mt19937_64 rng(101);
  for (int t = 0; t < kInstances; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 5);
    const Eigen::Index m = testing::uniform_int(rng, 1, 6);
    const SystemModel s = testing::random_system(n, m, rng, 0.2, 1.5);
    const Matrix sigma = solve_dare(s.a, s.c, s.q, s.r);
    EXPECT_LE(dare_residual(s.a, s.c, s.q, s.r, sigma).norm(), 1e-9 * (1.0 + sigma.norm()))
        << "instance " << t;
    EXPECT_GE(min_symmetric_eigenvalue(sigma), -1e-10);
  }
}

TEST(Property, DlyapMatchesSeries) {
  std::mt19937_64 rng(102);
  for (int t = 0; t < kInstances; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 6);
    const Matrix f = testing::random_dynamics(n, rng, 0.1, 0.9);
    const Matrix b = testing::random_matrix(n, n, rng);
    const Matrix v = b * b.transpose();
    Matrix series = Matrix::Zero(n, n);
    Matrix fk = Matrix::Identity(n, n);
    for (int k = 0; k < 200; ++k) {
      series += fk * v * fk.transpose();
      fk = f * fk;
    }
    EXPECT_LE((solve_dlyap(f, v) - series).norm(), 1e-6 * (1.0 + series.norm()))
        << "instance " << t;
  }
}

TEST(Property, SpectralSplitPreservesSpectrum) {
  std::mt19937_64 rng(103);
  for (int t = 0; t < kInstances; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 6);
    const Matrix a = testing::random_dynamics(n, rng, 0.3, 1.6);
    const SpectralSplit sp = spectral_split(a);
    const Eigen::Index nu = sp.unstable.rows();
    Matrix blk = Matrix::Zero(n, n);
    blk.topLeftCorner(nu, nu) = sp.unstable;
    blk.bottomRightCorner(n - nu, n - nu) = sp.stable;
    EXPECT_LE(spectrum_distance(eigenvalues(blk), to_vec(eigenvalues(a))), 1e-8)
        << "instance " << t;
    EXPECT_LE((sp.v * blk * sp.v_inv - a).norm(), 1e-8 * a.norm()) << "instance " << t;
    const ComplexVector eu = eigenvalues(sp.unstable);
    for (Eigen::Index i = 0; i < nu; ++i) {
      EXPECT_GE(std::abs(eu(i)), 1.0 - 1e-9);
    }
    if (n > nu) {
      EXPECT_LT(spectral_radius(sp.stable), 1.0);
    }
  }
}

TEST(Property, PolePlaceRoundTrip) {
  std::mt19937_64 rng(104);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 6);
    const Matrix x = testing::random_matrix(n, n, rng);
    const Vector p = testing::random_matrix(n, 1, rng);
    std::vector<Complex> targets;
    while (static_cast<Eigen::Index>(targets.size()) < n) {
      const double re = testing::uniform(rng, -0.8, 0.8);
      if (static_cast<Eigen::Index>(targets.size()) + 2 <= n && testing::uniform(rng, 0, 1) < 0.4) {
        const double im = testing::uniform(rng, 0.05, 0.5);
        targets.emplace_back(re, im);
        targets.emplace_back(re, -im);
      } else {
        targets.emplace_back(re, 0.0);
      }
    }
    const Vector k = pole_place(x, p, targets);
    const Matrix closed = x + p * k.transpose();
    EXPECT_LE(spectrum_distance(eigenvalues(closed), targets), 1e-6) << "instance " << t;
  }
}

TEST(Property, LaplacianRowSumsVanish) {
  std::mt19937_64 rng(105);
  for (int t = 0; t < kInstances; ++t) {
    const SensorGraph g = testing::random_connected_graph(testing::uniform_int(rng, 1, 12), rng);
    EXPECT_LE((g.laplacian * Vector::Ones(g.size())).norm(), 1e-12);
    EXPECT_LE((g.laplacian - g.laplacian.transpose()).norm(), 0.0);
    if (g.size() > 1) {
      EXPECT_GT(g.mu(1), 0.0);
    }
  }
}

TEST(Property, FIntertwinesAndReproducesGain) {
  std::mt19937_64 rng(106);
  for (int t = 0; t < kInstances; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Eigen::Index m = testing::uniform_int(rng, 1, 5);
    const SystemModel s = testing::random_system(n, m, rng, 0.3, 1.3);
    const KalmanDesign kf = design_kalman(s);
    const Matrix lambda = build_lambda(kf);
    const FBuild fb = build_f(kf, lambda);
    ASSERT_EQ(static_cast<Eigen::Index>(fb.f.size()), m);
    Matrix sum = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Matrix& f = fb.f[static_cast<std::size_t>(i)];
      const double scale = 1.0 + f.norm() * (1.0 + lambda.norm());
      EXPECT_LE((f * lambda - kf.acl * f).norm(), 1e-7 * scale) << "instance " << t;
      EXPECT_LE((f * Vector::Ones(n) - kf.k.col(i)).norm(), 1e-7 * scale) << "instance " << t;
      sum += f;
    }
    // Summing over sensors gives the intertwiner of the full gain.
    EXPECT_LE((sum * Vector::Ones(n) - kf.k.rowwise().sum()).norm(),
              1e-7 * (1.0 + sum.norm()));
  }
}

TEST(Property, ConsensusRadiiBelowOne) {
  std::mt19937_64 rng(107);
  int done = 0;
  int tried = 0;
  while (done < 100) {
    ++tried;
    ASSERT_LT(tried, 5000);
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Eigen::Index m = testing::uniform_int(rng, 2, 8);
    const Matrix s = testing::random_dynamics(n, rng, 0.3, 1.5);
    const SensorGraph g = testing::random_connected_graph(m, rng, 0.6);
    const FeasibilityCheck fc = check_condition(s, g);
    if (!fc.feasible) {
      EXPECT_THROW(design_consensus(s, g), Error);
      continue;
    }
    const ConsensusDesign d = design_consensus(s, g);
    EXPECT_LT(d.worst_radius(), 1.0) << "pair " << done;
    ++done;
  }
}

TEST(Property, MareIteratesMonotone) {
  std::mt19937_64 rng(108);
  for (int t = 0; t < kInstances; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Matrix s = testing::random_dynamics(n, rng, 0.3, 1.5);
    const double zeta = testing::uniform(rng, 0.2, 0.95) / mahler_measure(s);
    Matrix p = Matrix::Identity(n, n);
    for (int k = 0; k < 30; ++k) {
      const Matrix next = mare_step(s, p, zeta);
      ASSERT_GE(min_symmetric_eigenvalue(next - p), -1e-9 * (1.0 + next.norm()))
          << "instance " << t << " step " << k;
      p = next;
    }
  }
}

}  // namespace
}  // namespace dkf
