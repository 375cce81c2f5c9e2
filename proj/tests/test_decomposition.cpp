#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dkf/decomposition.hpp"
#include "test_util.hpp"

namespace dkf {
namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }

struct Fixture {
  SystemModel model;
  KalmanDesign kf;
  SplitModel split;
  DecompositionBundle b;

  explicit Fixture(SystemModel mdl)
      : model(std::move(mdl)),
        kf(design_kalman(model)),
        split(split_model(model)),
        b(build_decomposition(kf, split)) {}
};

double rel(const Matrix& x, const Matrix& y) {
  return (x - y).norm() / (1.0 + y.norm());
}

TEST(Lambda, ScalarIsClosedLoop) {
  const KalmanDesign kf = design_kalman(m1(1.1), m1(1), m1(1), m1(1));
  const Matrix lambda = build_lambda(kf);
  EXPECT_NEAR(lambda(0, 0), kf.acl(0, 0), 1e-14);
}

TEST(Lambda, QuadraticCompanion) {
  // s^2 - 0.5 s + 0.06 = (s - 0.2)(s - 0.3)
  const Matrix ac = companion({0.06, -0.5, 1.0});
  Matrix expect(2, 2);
  expect << 0, 1, -0.06, 0.5;
  EXPECT_TRUE(ac.isApprox(expect));
  const Matrix lambda = ones_similarity(2) * ac * ones_similarity_inverse(2);
  ComplexVector ev = eigenvalues(lambda);
  std::vector<double> re{ev(0).real(), ev(1).real()};
  std::sort(re.begin(), re.end());
  EXPECT_NEAR(re[0], 0.2, 1e-12);
  EXPECT_NEAR(re[1], 0.3, 1e-12);
  EXPECT_TRUE(is_controllable(lambda, Vector::Ones(2)));
  EXPECT_TRUE((ones_similarity(3) * ones_similarity_inverse(3))
                  .isApprox(Matrix::Identity(3, 3)));
  EXPECT_TRUE((ones_similarity(3) * Vector::Unit(3, 2))
                  .isApprox(Vector::Ones(3)));
}

TEST(Lambda, RingExampleSharesClosedLoopPoly) {
  const Fixture fx(testing::ring_example_model());
  const auto pa = char_poly(fx.kf.acl);
  const auto pl = char_poly(fx.b.lambda);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_NEAR(pl[i], pa[i], 1e-8 * (1 + std::abs(pa[i])));
  }
  EXPECT_LT(spectral_radius(fx.b.lambda), 1.0);
  EXPECT_LT(fx.b.f_condition, 1e6);
}

TEST(BuildF, IntertwiningResiduals) {
  const Fixture fx(testing::ring_example_model());
  const Vector one = Vector::Ones(2);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Matrix& f = fx.b.f[static_cast<std::size_t>(i)];
    EXPECT_LE((f * fx.b.lambda - fx.kf.acl * f).norm(), 1e-8 * (1 + f.norm()));
    EXPECT_LE((f * one - fx.kf.k.col(i)).norm(), 1e-8);
  }
}

TEST(BuildF, ScalarEqualsGain) {
  const KalmanDesign kf = design_kalman(m1(0.5), Matrix::Ones(2, 1),
                                        m1(1), Matrix::Identity(2, 2));
  const FBuild fb = build_f(kf, build_lambda(kf));
  EXPECT_NEAR(fb.f[0](0, 0), kf.k(0, 0), 1e-14);
  EXPECT_NEAR(fb.f[1](0, 0), kf.k(0, 1), 1e-14);
}

TEST(BuildF, RoutesAgreeOnRandomSystem) {
  std::mt19937_64 rng(21);
  const SystemModel model = testing::random_system(3, 2, rng);
  const KalmanDesign kf = design_kalman(model);
  const Matrix lambda = build_lambda(kf);
  const FBuild fb = build_f(kf, lambda);
  for (Eigen::Index i = 0; i < 2; ++i) {
    const Matrix stacked = intertwine_stacked(lambda, Vector::Ones(3), kf.acl,
                                              kf.k.col(i));
    EXPECT_LE(rel(fb.f[static_cast<std::size_t>(i)], stacked), 1e-6);
  }
}

TEST(SBeta, RingExampleKeepsUnstablePole) {
  const Fixture fx(testing::ring_example_model());
  EXPECT_TRUE(fx.b.s.isApprox(fx.b.lambda +
                              Vector::Ones(2) * fx.b.beta.transpose()));
  // det(sI - S) has the root 1.1.
  const auto& p = fx.b.s_poly;
  EXPECT_NEAR(p[0] + p[1] * 1.1 + p[2] * 1.21, 0.0, 1e-7);
  const auto ps = char_poly(fx.b.s);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_NEAR(ps[i], p[i], 1e-7);
  EXPECT_TRUE(is_controllable(fx.b.s.transpose(), fx.b.beta));
  const ComplexVector el = eigenvalues(fx.b.lambda);
  for (const Complex& t : fx.b.s_targets) {
    for (Eigen::Index j = 0; j < el.size(); ++j) {
      EXPECT_GE(std::abs(t - el(j)), 1e-3);
    }
  }
}

TEST(SBeta, ScalarUnstablePlant) {
  const SystemModel model = build_system(m1(1.1), m1(1), m1(1), m1(1));
  const Fixture fx(model);
  EXPECT_NEAR(fx.b.beta(0), 1.1 - fx.b.lambda(0, 0), 1e-12);
}

TEST(SBeta, StablePlantUsesRulePicks) {
  Matrix a(3, 3);
  a << 0.5, 0.1, 0, 0, 0.3, 0.2, 0, 0, -0.2;
  const SystemModel model = build_system(a, Matrix::Ones(1, 3), Matrix::Identity(3, 3),
                                         m1(1));
  const Fixture fx(model);
  ASSERT_EQ(fx.b.s_targets.size(), 3u);
  for (const Complex& t : fx.b.s_targets) {
    EXPECT_LT(std::abs(t), 0.6);
    EXPECT_EQ(t.imag(), 0.0);
  }
  for (const Matrix& g : fx.b.g) EXPECT_TRUE(g.isZero(0.0));
}

TEST(SBeta, PoleClashDetected) {
  StablePoleRule rule;
  rule.poles = {Complex(0.0, 0.0)};
  const std::vector<Complex> avoid{Complex(0.0005, 0.0)};
  try {
    choose_stable_poles(1, avoid, rule);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kPoleClash);
  }
  StablePoleRule stubborn;
  stubborn.shift_step = 0.0;
  try {
    choose_stable_poles(1, avoid, stubborn);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kPoleClash);
  }
}

TEST(SBeta, CompanionClosedFormMatchesAckermann) {
  const Fixture fx(testing::ring_example_model());
  const Vector beta = beta_from_companion(fx.b.lambda_poly, fx.b.s_poly);
  EXPECT_LE((beta - fx.b.beta).norm(), 1e-8 * (1 + beta.norm()));
}

TEST(BuildG, ResidualIdentities) {
  const Fixture fx(testing::ring_example_model());
  const Eigen::Index nu = fx.split.nu();
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Matrix gu = fx.b.g[static_cast<std::size_t>(i)].leftCols(nu);
    EXPECT_LE((fx.b.s * gu - gu * fx.split.au).norm(), 1e-8);
    RowVector lhs = fx.b.beta.transpose() * fx.b.g[static_cast<std::size_t>(i)];
    RowVector rhs = RowVector::Zero(2);
    rhs.head(nu) = fx.split.cu.row(i) * fx.split.au;
    EXPECT_LE((lhs - rhs).norm(), 1e-8);
  }
  EXPECT_GT(fx.b.g[1].norm(), 0.0);
  EXPECT_TRUE(fx.b.g[0].isZero(1e-12));
}

TEST(BuildG, ScalarHandAlgebra) {
  const SystemModel model = build_system(m1(1.1), m1(2.0), m1(1), m1(1));
  const Fixture fx(model);
  // S g = g Au and beta g = C Au with S = Au = 1.1 in the scalar case.
  EXPECT_NEAR(fx.b.s(0, 0), 1.1, 1e-12);
  EXPECT_NEAR(fx.b.g[0](0, 0), 2.0 * 1.1 / fx.b.beta(0), 1e-10);
}

TEST(LocalFilter, StepIdentities) {
  const Fixture fx(testing::ring_example_model());
  const LocalStep zero = step_local_filter(fx.b, Vector::Zero(2), 0.0);
  EXPECT_TRUE(zero.xi.isZero(0.0));
  EXPECT_EQ(zero.z, 0.0);
  const Vector xi(Vector::Random(2));
  const LocalStep st = step_local_filter(fx.b, xi, 0.7);
  const Vector direct = fx.b.lambda * xi + Vector::Ones(2) * 0.7;
  EXPECT_LE((st.xi - direct).norm(), 1e-12);
}

TEST(LocalFilter, ResidualStaysBoundedOnUnstablePlant) {
  const Fixture fx(testing::ring_example_model());
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  Vector x = Vector::Zero(2);
  Vector xi = Vector::Zero(2);
  double late_z = 0.0;
  double late_y = 0.0;
  int late = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    x.setZero();
    xi.setZero();
    for (int k = 1; k <= 200; ++k) {
      x = fx.model.a * x + 0.5 * Vector(Vector::NullaryExpr(2, [&] {
            return normal(rng);
          }));
      const double y = x(1) + 2.0 * normal(rng);
      const LocalStep st = step_local_filter(fx.b, xi, y);
      xi = st.xi;
      if (k > 150) {
        late_z += st.z * st.z;
        late_y += y * y;
        ++late;
      }
    }
  }
  late_z /= late;
  late_y /= late;
  EXPECT_LT(late_z, 100.0);
  EXPECT_GT(late_y, 1e6);
}

TEST(Lossless, RingExample) {
  const Fixture fx(testing::ring_example_model());
  const LosslessReport rep = verify_lossless(fx.b, fx.model, fx.kf, 200, 7);
  EXPECT_LE(rep.worst_ratio, 1e-7);
}

TEST(Lossless, ZeroNoiseIsIdenticallyZero) {
  SystemModel model = testing::ring_example_model();
  const KalmanDesign kf = design_kalman(model);
  const DecompositionBundle b = build_decomposition(kf, split_model(model));
  model.q.setZero();
  model.r.setZero();
  const LosslessReport rep = verify_lossless(b, model, kf, 50, 1);
  EXPECT_EQ(rep.worst_ratio, 0.0);
}

TEST(Lossless, RandomSystems) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 20; ++t) {
    const SystemModel model = testing::random_system(
        testing::uniform_int(rng, 1, 5), testing::uniform_int(rng, 1, 6), rng);
    const Fixture fx(model);
    EXPECT_NO_THROW(verify_lossless(fx.b, fx.model, fx.kf, 200, 100 + t));
  }
}

TEST(Reduce, RingReconstruction) {
  const Fixture fx(testing::ring_example_model());
  const ReducedBundle r = reduce_model(fx.b);
  EXPECT_EQ(r.h.rows(), 2);
  EXPECT_EQ(r.h.cols(), 4);
  EXPECT_EQ(r.t.rows(), 4);
  EXPECT_EQ(r.t.cols(), 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_LE(rel(reconstruct_f(r, fx.b.s, i),
                  fx.b.f[static_cast<std::size_t>(i)]),
              1e-7);
  }
}

TEST(Reduce, ScalarConstantPolynomial) {
  const SystemModel model = build_system(m1(1.1), Matrix::Ones(3, 1), m1(1),
                                         Matrix::Identity(3, 3));
  const Fixture fx(model);
  const ReducedBundle r = reduce_model(fx.b);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(r.alpha[static_cast<std::size_t>(i)][0][0],
                fx.b.f[static_cast<std::size_t>(i)](0, 0) / fx.b.beta(0),
                1e-12);
  }
}

TEST(Reduce, ImpulseResponsesMatch) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Eigen::Index m = testing::uniform_int(rng, n + 1, 6);
    const Fixture fx(testing::random_system(n, m, rng));
    const ReducedBundle r = reduce_model(fx.b);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto full = impulse_full(fx.b, i, 50);
      const auto red = impulse_reduced(r, fx.b.s, fx.b.beta, i, 50);
      for (int k = 0; k < 50; ++k) {
        EXPECT_LE((full[k] - red[k]).norm(), 1e-7 * (1 + full[k].norm()));
      }
    }
  }
}

}  // namespace
}  // namespace dkf
