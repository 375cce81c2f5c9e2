#pragma once

// Lossless decomposition of the steady-state Kalman filter into per-sensor
// filters driven only by their own measurement.
//
//   xi_i(k+1) = Lambda xi_i(k) + 1 y_i(k+1),     xhat(k) = sum_i F_i xi_i(k)
//
// with F_i Lambda = (A - K C A) F_i and F_i 1 = K_i. The stable-input form
// replaces y_i by the residual z_i = y_i(k+1) - beta^T xi_i(k), which keeps
// bounded covariance even for unstable plants:
//
//   xi_i(k+1) = S xi_i(k) + 1 z_i(k),   S = Lambda + 1 beta^T,
//
// where S carries the unstable eigenvalues of A plus freely chosen stable
// poles away from spec(Lambda). When n < m the m filters can be replaced by
// an order-n^2 realization (H, T) with the same transfer function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dkf/error.hpp"
#include "dkf/kalman.hpp"
#include "dkf/numerics.hpp"
#include "dkf/plant.hpp"

namespace dkf {

struct DecompositionBundle {
  Matrix lambda;
  std::vector<double> lambda_poly;  ///< det(sI - Lambda), ascending
  Vector beta;
  Matrix s;
  std::vector<double> s_poly;       ///< det(sI - S), ascending
  std::vector<Complex> s_targets;   ///< requested spectrum of S
  std::vector<Matrix> f;            ///< F_i, n x n
  std::vector<Matrix> g;            ///< G_i = [G_i^u 0] in split coordinates
  std::vector<Matrix> g_plant;      ///< G_i V^-1, acting on plant coordinates
  double f_condition = 1.0;         ///< worst cond(ctrb(Lambda, 1))
  bool f_fallback = false;          ///< stacked solve used for some F_i
  bool beta_fallback = false;       ///< companion closed form used for beta

  Eigen::Index n() const { return lambda.rows(); }
  Eigen::Index m() const { return static_cast<Eigen::Index>(f.size()); }
};

struct ReducedBundle {
  Matrix h;                                       ///< n x n^2, H_j = e_j beta^T
  Matrix t;                                       ///< n^2 x m, column i is T_i
  std::vector<std::vector<std::vector<double>>> alpha;  ///< [i][j] coeffs of p_ij
  double kbeta_condition = 1.0;

  /// T_i reshaped to n x n: column j is p_ij(S) 1.
  Matrix t_block(Eigen::Index i, Eigen::Index n) const {
    const Vector col = t.col(i);
    return Eigen::Map<const Matrix>(col.data(), n, n);
  }
};

/// Rule for the freely assignable stable eigenvalues of S.
struct StablePoleRule {
  /// User-supplied poles (conjugate-closed, all strictly stable). When empty
  /// the default uniform rule is used.
  std::vector<Complex> poles;
  double half_width = 0.4;
  double shift_step = 0.013;
  int retries = 10;
  double min_gap = 1e-3;
};

inline Vector ones(Eigen::Index n) { return Vector::Ones(n); }

/// Companion matrix of a monic polynomial (ascending coefficients), with
/// input vector e_n: last row is [-c0, ..., -c_{n-1}].
inline Matrix companion(const std::vector<double>& poly) {
  const auto n = static_cast<Eigen::Index>(poly.size()) - 1;
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) out(i, i + 1) = 1.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    out(n - 1, j) = -poly[static_cast<std::size_t>(j)];
  }
  return out;
}

/// M = I + (1 - e_n) e_n^T maps e_n to the all-ones vector; det M = 1.
inline Matrix ones_similarity(Eigen::Index n) {
  Matrix out = Matrix::Identity(n, n);
  out.col(n - 1).setOnes();
  return out;
}

inline Matrix ones_similarity_inverse(Eigen::Index n) {
  Matrix out = Matrix::Identity(n, n);
  out.col(n - 1).setConstant(-1.0);
  out(n - 1, n - 1) = 1.0;
  return out;
}

/// Lambda = M A_c M^-1 where A_c is the companion matrix of
/// det(sI - (A - KCA)). Non-derogatory with (Lambda, 1) controllable.
inline Matrix build_lambda(const KalmanDesign& design) {
  const double rho = spectral_radius(design.acl);
  if (!(rho < 1.0)) {
    throw Error(Errc::kUnstable, "build_lambda: A - KCA is not stable");
  }
  const Eigen::Index n = design.acl.rows();
  const Matrix ac = companion(char_poly(design.acl));
  return ones_similarity(n) * ac * ones_similarity_inverse(n);
}

struct FBuild {
  std::vector<Matrix> f;
  double condition = 1.0;
  bool fallback = false;
};

/// F_i = R_Y R_X^-1 with R_X = ctrb(Lambda, 1), R_Y = ctrb(Acl, K_i).
inline FBuild build_f(const KalmanDesign& design, const Matrix& lambda) {
  const Eigen::Index n = lambda.rows();
  const Vector one = ones(n);
  if (!is_controllable(lambda, one)) {
    throw Error(Errc::kNotControllable, "build_F: (Lambda, 1) not controllable");
  }
  FBuild out;
  for (Eigen::Index i = 0; i < design.k.cols(); ++i) {
    Intertwiner it = intertwine(lambda, one, design.acl, design.k.col(i));
    out.condition = std::max(out.condition, it.condition);
    out.fallback = out.fallback || it.used_fallback;
    out.f.push_back(std::move(it.t));
  }
  return out;
}

/// Default stable picks: ns values evenly spaced on [-w, w], shifted by
/// +shift_step * attempt until all are at least min_gap away from `avoid`.
inline std::vector<Complex> choose_stable_poles(
    Eigen::Index ns, const std::vector<Complex>& avoid,
    const StablePoleRule& rule) {
  const auto clear_of = [&](const std::vector<Complex>& picks) {
    for (const Complex& p : picks) {
      if (!(std::abs(p) < 1.0 - tol::kUnitCircle)) return false;
      for (const Complex& a : avoid) {
        if (std::abs(p - a) < rule.min_gap) return false;
      }
    }
    for (std::size_t i = 0; i < picks.size(); ++i) {
      for (std::size_t j = i + 1; j < picks.size(); ++j) {
        if (std::abs(picks[i] - picks[j]) < rule.min_gap) return false;
      }
    }
    return true;
  };

  if (!rule.poles.empty()) {
    if (static_cast<Eigen::Index>(rule.poles.size()) != ns) {
      throw Error(Errc::kInvalidArgument,
                  "stable pole list must have " + std::to_string(ns) +
                      " entries");
    }
    poly_from_roots(rule.poles);  // conjugate-closure check
    if (!clear_of(rule.poles)) {
      throw Error(Errc::kPoleClash,
                  "user stable poles are unstable, repeated, or too close to "
                  "spec(Lambda)");
    }
    return rule.poles;
  }

  std::vector<Complex> picks(static_cast<std::size_t>(ns));
  for (int attempt = 0; attempt <= rule.retries; ++attempt) {
    for (Eigen::Index k = 0; k < ns; ++k) {
      const double base =
          ns == 1 ? 0.0
                  : -rule.half_width + 2.0 * rule.half_width *
                                           static_cast<double>(k) /
                                           static_cast<double>(ns - 1);
      picks[static_cast<std::size_t>(k)] =
          Complex(base + rule.shift_step * attempt, 0.0);
    }
    if (clear_of(picks)) return picks;
  }
  throw Error(Errc::kPoleClash,
              "no stable pole set clear of spec(Lambda) after " +
                  std::to_string(rule.retries) + " retries");
}

/// beta from the companion coordinates: with Lambda = M A_c M^-1,
/// M^-1 S M = A_c + e_n (M^T beta)^T, so M^T beta = a - d where a and d are
/// the current and desired low-order coefficients.
inline Vector beta_from_companion(const std::vector<double>& lambda_poly,
                                  const std::vector<double>& desired_poly) {
  const auto n = static_cast<Eigen::Index>(lambda_poly.size()) - 1;
  Vector diff(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    diff(j) = lambda_poly[static_cast<std::size_t>(j)] -
              desired_poly[static_cast<std::size_t>(j)];
  }
  return ones_similarity_inverse(n).transpose() * diff;
}

struct SBeta {
  Matrix s;
  Vector beta;
  std::vector<Complex> targets;
  bool companion_fallback = false;  ///< Ackermann was inaccurate
};

/// Places spec(S) = spec(Au) U stable picks via beta = pole_place(Lambda, 1).
/// When Lambda came from build_lambda, passing its polynomial enables the
/// exact companion-coordinate cross-check, and passing A - KCA lets
/// spec(Lambda) be read from the better-conditioned matrix.
inline SBeta design_s_beta(const Matrix& lambda, const SplitModel& split,
                           const StablePoleRule& rule = {},
                           const std::vector<double>* lambda_poly = nullptr,
                           const Matrix* lambda_similar = nullptr) {
  const Eigen::Index n = lambda.rows();
  const Vector one = ones(n);
  const ComplexVector lam =
      eigenvalues(lambda_similar != nullptr ? *lambda_similar : lambda);
  const std::vector<Complex> avoid(lam.data(), lam.data() + lam.size());
  const ComplexVector unstable = eigenvalues(split.au);

  SBeta out;
  out.targets.assign(unstable.data(), unstable.data() + unstable.size());
  for (const Complex& u : out.targets) {
    for (const Complex& a : avoid) {
      if (std::abs(u - a) < rule.min_gap) {
        throw Error(Errc::kPoleClash, "unstable eigenvalue of A too close to "
                                      "spec(Lambda)");
      }
    }
  }
  const auto picks = choose_stable_poles(split.ns(), avoid, rule);
  out.targets.insert(out.targets.end(), picks.begin(), picks.end());

  out.beta = pole_place(lambda, one, out.targets);
  if (lambda_poly != nullptr) {
    const Vector exact =
        beta_from_companion(*lambda_poly, poly_from_roots(out.targets));
    if ((out.beta - exact).norm() > 1e-7 * (1.0 + exact.norm())) {
      out.beta = exact;
      out.companion_fallback = true;
    }
  }
  out.s = lambda + one * out.beta.transpose();
  // S - 1 beta^T = Lambda with (Lambda, 1) controllable, so (S^T, beta) is
  // controllable iff spec(S) and spec(Lambda) are disjoint. The targets are
  // the exact spectrum of S and are checked directly; eigenvalues of S
  // itself are too sensitive for a rank test once n is large.
  for (const Complex& t : out.targets) {
    for (const Complex& a : avoid) {
      if (std::abs(t - a) < 0.5 * rule.min_gap) {
        throw Error(Errc::kNotControllable, "(S^T, beta) is not controllable");
      }
    }
  }
  return out;
}

/// G_i = [G_i^u 0] with S G_i^u = G_i^u Au and beta^T G_i^u = C_i^u Au.
inline std::vector<Matrix> build_g(const Matrix& s, const Vector& beta,
                                   const SplitModel& split) {
  const Eigen::Index n = s.rows();
  const Eigen::Index nu = split.nu();
  std::vector<Matrix> out;
  for (Eigen::Index i = 0; i < split.cu.rows(); ++i) {
    Matrix g = Matrix::Zero(n, n);
    if (nu > 0) {
      const Vector q = (split.cu.row(i) * split.au).transpose();
      const Intertwiner it =
          intertwine(s.transpose(), beta, split.au.transpose(), q);
      g.leftCols(nu) = it.t.transpose();
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline DecompositionBundle build_decomposition(const KalmanDesign& design,
                                               const SplitModel& split,
                                               const StablePoleRule& rule = {}) {
  DecompositionBundle b;
  b.lambda = build_lambda(design);
  b.lambda_poly = char_poly(design.acl);
  FBuild fb = build_f(design, b.lambda);
  b.f = std::move(fb.f);
  b.f_condition = fb.condition;
  b.f_fallback = fb.fallback;
  SBeta sb = design_s_beta(b.lambda, split, rule, &b.lambda_poly, &design.acl);
  b.beta_fallback = sb.companion_fallback;
  b.beta = std::move(sb.beta);
  b.s = std::move(sb.s);
  b.s_targets = std::move(sb.targets);
  b.s_poly = poly_from_roots(b.s_targets);
  b.g = build_g(b.s, b.beta, split);
  for (const Matrix& g : b.g) b.g_plant.push_back(g * split.v_inv);
  return b;
}

// ---------------------------------------------------------------------------
// Local filter

struct LocalStep {
  Vector xi;
  double z = 0.0;
};

/// z = y(k+1) - beta^T xi(k);  xi(k+1) = S xi(k) + 1 z.
inline LocalStep step_local_filter(const DecompositionBundle& b,
                                   const Vector& xi, double y_next) {
  LocalStep out;
  out.z = y_next - b.beta.dot(xi);
  out.xi = b.s * xi;
  out.xi.array() += out.z;
  return out;
}

struct LosslessReport {
  int horizon = 0;
  int worst_step = 0;
  double worst_ratio = 0.0;  ///< max_k ||sum F_i xi_i - xhat|| / (1 + ||xhat||)
};

/// Simulates plant, local filters and centralized filter from zero initial
/// conditions and checks xhat(k) = sum_i F_i xi_i(k) at every step.
inline LosslessReport verify_lossless(const DecompositionBundle& b,
                                      const SystemModel& model,
                                      const KalmanDesign& design, int horizon,
                                      std::uint64_t seed,
                                      double tolerance = 1e-7) {
  const Eigen::Index n = model.n();
  const Eigen::Index m = model.m();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const Matrix lq = psd_factor(model.q);
  const Matrix lr = psd_factor(model.r);

  Vector x = Vector::Zero(n);
  Vector xhat = Vector::Zero(n);
  std::vector<Vector> xi(static_cast<std::size_t>(m), Vector::Zero(n));
  LosslessReport rep;
  rep.horizon = horizon;
  Vector w(n);
  Vector v(m);
  for (int k = 1; k <= horizon; ++k) {
    for (Eigen::Index i = 0; i < n; ++i) w(i) = normal(rng);
    for (Eigen::Index i = 0; i < m; ++i) v(i) = normal(rng);
    x = model.a * x + lq * w;
    const Vector y = model.c * x + lr * v;
    xhat = step_centralized(design, xhat, y);
    Vector fused = Vector::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i) {
      auto& state = xi[static_cast<std::size_t>(i)];
      state = step_local_filter(b, state, y(i)).xi;
      fused += b.f[static_cast<std::size_t>(i)] * state;
    }
    const double ratio = (fused - xhat).norm() / (1.0 + xhat.norm());
    if (ratio > rep.worst_ratio) {
      rep.worst_ratio = ratio;
      rep.worst_step = k;
    }
  }
  if (rep.worst_ratio > tolerance) {
    throw Error(Errc::kLosslessViolation,
                "worst step " + std::to_string(rep.worst_step) +
                    ", residual ratio " + std::to_string(rep.worst_ratio));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Reduced-order realization

/// Writes each F_i as sum_j H_j p_ij(S) with H_j = e_j beta^T; the
/// coefficients of p_ij solve K_beta alpha = (row j of F_i)^T where
/// K_beta = ctrb(S^T, beta).
inline ReducedBundle reduce_model(const DecompositionBundle& b) {
  const Eigen::Index n = b.n();
  const Eigen::Index m = b.m();
  const Matrix kbeta = ctrb(b.s.transpose(), b.beta);
  ReducedBundle out;
  out.kbeta_condition = condition_number(kbeta);
  if (out.kbeta_condition > tol::kIllConditioned) {
    throw Error(Errc::kIllConditioned,
                "reduce_model: cond(K_beta) = " +
                    std::to_string(out.kbeta_condition));
  }
  const Eigen::PartialPivLU<Matrix> lu(kbeta);
  const Vector one = ones(n);
  out.h = Matrix::Zero(n, n * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    out.h.block(j, j * n, 1, n) = b.beta.transpose();
  }
  out.t = Matrix::Zero(n * n, m);
  out.alpha.resize(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    auto& ai = out.alpha[static_cast<std::size_t>(i)];
    ai.resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vector coeffs =
          lu.solve(b.f[static_cast<std::size_t>(i)].row(j).transpose());
      ai[static_cast<std::size_t>(j)].assign(coeffs.data(),
                                             coeffs.data() + n);
      out.t.block(j * n, i, n, 1) =
          matrix_poly_eval(ai[static_cast<std::size_t>(j)], b.s, one);
    }
  }
  return out;
}

/// sum_j H_j p_ij(S), which reproduces F_i.
inline Matrix reconstruct_f(const ReducedBundle& r, const Matrix& s,
                            Eigen::Index i) {
  const Eigen::Index n = s.rows();
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Matrix pij = matrix_poly(
        r.alpha[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], s);
    out += r.h.middleCols(j * n, n) * pij;
  }
  return out;
}

/// Output of the full filter bank sum_l F_l xi_l after a unit impulse on
/// z_i at step 0; entry k is the output at step k + 1.
inline std::vector<Vector> impulse_full(const DecompositionBundle& b,
                                        Eigen::Index i, int steps) {
  std::vector<Vector> out;
  Vector xi = ones(b.n());
  for (int k = 0; k < steps; ++k) {
    out.push_back(b.f[static_cast<std::size_t>(i)] * xi);
    xi = b.s * xi;
  }
  return out;
}

/// Same experiment on the reduced realization theta+ = (I (x) S) theta +
/// T z, output H theta. Theta is kept as an n x n matrix.
inline std::vector<Vector> impulse_reduced(const ReducedBundle& r,
                                           const Matrix& s, const Vector& beta,
                                           Eigen::Index i, int steps) {
  std::vector<Vector> out;
  Matrix theta = r.t_block(i, s.rows());
  for (int k = 0; k < steps; ++k) {
    out.push_back((beta.transpose() * theta).transpose());
    theta = s * theta;
  }
  return out;
}

}  // namespace dkf
