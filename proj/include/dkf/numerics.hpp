#pragma once

// Dense numerical kernels shared by the estimator design and analysis code:
// Riccati/Lyapunov/Sylvester solvers, ordered spectral splitting,
// controllability tests, single-input pole placement and polynomial helpers.
//
// Everything here is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "dkf/error.hpp"

namespace dkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

namespace tol {
/// |lambda| >= 1 - kUnitCircle counts as unstable.
inline constexpr double kUnitCircle = 1e-9;
/// Relative singular-value threshold for every numerical rank decision.
inline constexpr double kRank = 1e-10;
inline constexpr double kIllConditioned = 1e12;
}  // namespace tol

inline bool is_unstable_mode(Complex lambda) {
  return std::abs(lambda) >= 1.0 - tol::kUnitCircle;
}

inline ComplexVector eigenvalues(const Matrix& x) {
  if (x.rows() == 0) return ComplexVector(0);
  Eigen::EigenSolver<Matrix> es(x, /*computeEigenvectors=*/false);
  return es.eigenvalues();
}

inline double spectral_radius(const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  return eigenvalues(x).cwiseAbs().maxCoeff();
}

inline bool all_finite(const Matrix& x) { return x.allFinite(); }

inline void require_square(const Matrix& x, const char* what) {
  if (x.rows() != x.cols()) {
    throw Error(Errc::kDimensionMismatch,
                std::string(what) + " must be square, got " +
                    std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
}

inline Matrix symmetrize(const Matrix& x) { return 0.5 * (x + x.transpose()); }

/// Numerical rank with the uniform threshold kRank * sigma_max.
template <typename Derived>
int numerical_rank(const Eigen::MatrixBase<Derived>& x) {
  if (x.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic,
                                 Eigen::Dynamic>>
      svd(x);
  const auto& s = svd.singularValues();
  const double smax = s.size() > 0 ? s(0) : 0.0;
  if (smax == 0.0) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tol::kRank * smax) ++rank;
  }
  return rank;
}

/// 2-norm condition number; infinity for singular or empty input.
inline double condition_number(const Matrix& x) {
  if (x.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(x);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

/// L with L L^T = X for symmetric PSD X; eigenvalues below 1e-12 are clipped
/// to zero so that singular covariances are accepted.
inline Matrix psd_factor(const Matrix& x) {
  if (x.rows() == 0) return Matrix(0, 0);
  const Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(x));
  Vector d = es.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    d(i) = d(i) < 1e-12 ? 0.0 : std::sqrt(d(i));
  }
  return es.eigenvectors() * d.asDiagonal();
}

inline bool is_symmetric(const Matrix& x, double tol = 1e-10) {
  if (x.rows() != x.cols()) return false;
  const double scale = 1.0 + x.cwiseAbs().maxCoeff();
  return (x - x.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

inline double min_symmetric_eigenvalue(const Matrix& x) {
  if (x.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(x),
                                            Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// ---------------------------------------------------------------------------
// PBH tests

/// Popov-Belevitch-Hautus test: rank [lambda I - A; C] == n for every
/// eigenvalue lambda of A, restricted to unstable modes when
/// `unstable_only` is set (detectability).
inline bool pbh_full_rank(const Matrix& a, const Matrix& c,
                          bool unstable_only) {
  const Eigen::Index n = a.rows();
  const ComplexVector lambdas = eigenvalues(a);
  for (Eigen::Index k = 0; k < lambdas.size(); ++k) {
    if (unstable_only && !is_unstable_mode(lambdas(k))) continue;
    ComplexMatrix pencil(n + c.rows(), n);
    pencil.topRows(n) = lambdas(k) * ComplexMatrix::Identity(n, n) -
                        a.cast<Complex>();
    pencil.bottomRows(c.rows()) = c.cast<Complex>();
    if (numerical_rank(pencil) < n) return false;
  }
  return true;
}

inline bool is_detectable(const Matrix& a, const Matrix& c) {
  return pbh_full_rank(a, c, /*unstable_only=*/true);
}

inline bool is_observable(const Matrix& a, const Matrix& c) {
  return pbh_full_rank(a, c, /*unstable_only=*/false);
}

// ---------------------------------------------------------------------------
// Complex Schur based Stein / Sylvester solvers

/// A = U T U^H with T upper triangular.
struct SchurForm {
  ComplexMatrix u;
  ComplexMatrix t;

  SchurForm() = default;
  explicit SchurForm(const Matrix& a) {
    if (a.rows() == 0) {
      u.resize(0, 0);
      t.resize(0, 0);
      return;
    }
    Eigen::ComplexSchur<ComplexMatrix> schur(a.cast<Complex>());
    u = schur.matrixU();
    t = schur.matrixT();
  }
  Eigen::Index size() const { return t.rows(); }
};

/// Solves X - F X G^T = V given Schur forms of F and G. Requires
/// lambda_i(F) * lambda_j(G) != 1 for all pairs.
inline Matrix solve_stein(const SchurForm& f, const SchurForm& g,
                          const Matrix& v) {
  const Eigen::Index p = f.size();
  const Eigen::Index q = g.size();
  if (v.rows() != p || v.cols() != q) {
    throw Error(Errc::kDimensionMismatch, "solve_stein: rhs shape");
  }
  if (p == 0 || q == 0) return Matrix::Zero(p, q);
  // Y - T Y R^T = U^H V conj(Z);  X = U Y Z^T.
  ComplexMatrix rhs = f.u.adjoint() * v.cast<Complex>() * g.u.conjugate();
  ComplexMatrix y(p, q);
  ComplexVector acc(p);
  for (Eigen::Index b = q - 1; b >= 0; --b) {
    acc.setZero();
    for (Eigen::Index d = b + 1; d < q; ++d) acc += g.t(b, d) * y.col(d);
    ComplexVector col = rhs.col(b) + f.t * acc;
    ComplexMatrix lhs = -g.t(b, b) * f.t;
    lhs.diagonal().array() += Complex(1.0, 0.0);
    y.col(b) = lhs.triangularView<Eigen::Upper>().solve(col);
  }
  return (f.u * y * g.u.transpose()).real();
}

/// Solves A X - X B = C given Schur forms of A and B (disjoint spectra).
inline Matrix solve_sylvester(const SchurForm& a, const SchurForm& b,
                              const Matrix& c) {
  const Eigen::Index p = a.size();
  const Eigen::Index q = b.size();
  if (c.rows() != p || c.cols() != q) {
    throw Error(Errc::kDimensionMismatch, "solve_sylvester: rhs shape");
  }
  if (p == 0 || q == 0) return Matrix::Zero(p, q);
  // T Y - Y R = U^H C Z;  X = U Y Z^H.
  ComplexMatrix rhs = a.u.adjoint() * c.cast<Complex>() * b.u;
  ComplexMatrix y(p, q);
  for (Eigen::Index col = 0; col < q; ++col) {
    ComplexVector r = rhs.col(col);
    for (Eigen::Index d = 0; d < col; ++d) r += b.t(d, col) * y.col(d);
    ComplexMatrix lhs = a.t;
    lhs.diagonal().array() -= b.t(col, col);
    y.col(col) = lhs.triangularView<Eigen::Upper>().solve(r);
  }
  return (a.u * y * b.u.adjoint()).real();
}

/// Steady-state covariance W = F W F^T + V for a Schur-stable F.
inline Matrix solve_dlyap(const Matrix& f, const Matrix& v) {
  require_square(f, "solve_dlyap: F");
  if (v.rows() != f.rows() || v.cols() != f.cols()) {
    throw Error(Errc::kDimensionMismatch, "solve_dlyap: V shape");
  }
  const double rho = spectral_radius(f);
  if (!(rho < 1.0 - tol::kUnitCircle)) {
    throw Error(Errc::kUnstable,
                "solve_dlyap: spectral radius " + std::to_string(rho) +
                    " is not < 1");
  }
  const SchurForm sf(f);
  return symmetrize(solve_stein(sf, sf, v));
}

// ---------------------------------------------------------------------------
// Discrete algebraic Riccati equation (filter form)

struct DareOptions {
  int max_iterations = 100000;
  double relative_tolerance = 1e-12;
};

inline Matrix dare_residual(const Matrix& a, const Matrix& c, const Matrix& q,
                            const Matrix& r, const Matrix& sigma) {
  const Matrix s = c * sigma * c.transpose() + r;
  const Matrix gain = a * sigma * c.transpose() * s.inverse();
  return a * sigma * a.transpose() - gain * c * sigma * a.transpose() + q -
         sigma;
}

namespace detail {

inline double dare_residual_ratio(const Matrix& a, const Matrix& c,
                                  const Matrix& q, const Matrix& r,
                                  const Matrix& sigma) {
  return dare_residual(a, c, q, r, sigma).norm() / (1.0 + sigma.norm());
}

// Structured doubling on the dual (control) form
// X = A_f^T X (I + G X)^{-1} A_f + H with A_f = A^T, G = C^T R^-1 C, H = Q.
inline bool dare_doubling(const Matrix& a, const Matrix& c, const Matrix& q,
                          const Matrix& r, const DareOptions& opt,
                          Matrix& out) {
  const Eigen::Index n = a.rows();
  const Matrix eye = Matrix::Identity(n, n);
  Matrix ak = a.transpose();
  Matrix gk = c.transpose() * r.llt().solve(c);
  Matrix hk = q;
  for (int it = 0; it < 200; ++it) {
    const Eigen::PartialPivLU<Matrix> lu(eye + gk * hk);
    const Matrix w1 = lu.solve(ak);            // (I + G H)^-1 A
    const Matrix w2 = lu.solve(gk);            // (I + G H)^-1 G
    const Matrix h_next = symmetrize(hk + ak.transpose() * hk * w1);
    const Matrix g_next = symmetrize(gk + ak * w2 * ak.transpose());
    const Matrix a_next = ak * w1;
    const double change = (h_next - hk).norm() / (1.0 + h_next.norm());
    ak = a_next;
    gk = g_next;
    hk = h_next;
    if (!hk.allFinite()) return false;
    if (change <= opt.relative_tolerance) {
      out = hk;
      return true;
    }
  }
  out = hk;
  return hk.allFinite();
}

inline Matrix riccati_step(const Matrix& a, const Matrix& c, const Matrix& q,
                           const Matrix& r, const Matrix& sigma) {
  const Matrix s = c * sigma * c.transpose() + r;
  const Matrix ct_sinv = c.transpose() * s.inverse();
  return symmetrize(a * (sigma - sigma * ct_sinv * c * sigma) * a.transpose() +
                    q);
}

}  // namespace detail

/// Steady-state prediction covariance Sigma of the Kalman filter for
/// x+ = A x + w, y = C x + v.
inline Matrix solve_dare(const Matrix& a, const Matrix& c, const Matrix& q,
                         const Matrix& r, const DareOptions& opt = {}) {
  require_square(a, "solve_dare: A");
  const Eigen::Index n = a.rows();
  if (c.cols() != n || q.rows() != n || q.cols() != n ||
      r.rows() != c.rows() || r.cols() != c.rows()) {
    throw Error(Errc::kDimensionMismatch, "solve_dare: incompatible shapes");
  }
  if (!is_symmetric(q) || min_symmetric_eigenvalue(q) < -1e-10) {
    throw Error(Errc::kBadNoise, "solve_dare: Q must be symmetric PSD");
  }
  if (!is_symmetric(r) || min_symmetric_eigenvalue(r) <= 0.0) {
    throw Error(Errc::kBadNoise, "solve_dare: R must be symmetric PD");
  }
  if (!is_detectable(a, c)) {
    throw Error(Errc::kNotDetectable, "solve_dare: (A, C) is not detectable");
  }
  const auto accept = [&](const Matrix& s) {
    return s.allFinite() && detail::dare_residual_ratio(a, c, q, r, s) <= 1e-9;
  };

  Matrix sigma;
  if (detail::dare_doubling(a, c, q, r, opt, sigma) && accept(sigma)) {
    return sigma;
  }
  // Fixed-point fallback: the time-varying Riccati recursion.
  if (!sigma.allFinite() || min_symmetric_eigenvalue(sigma) < 0.0) {
    sigma = q + Matrix::Identity(n, n);
  }
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Matrix next = detail::riccati_step(a, c, q, r, sigma);
    const double change = (next - sigma).norm() / (1.0 + next.norm());
    sigma = next;
    if (change <= opt.relative_tolerance && accept(sigma)) return sigma;
  }
  throw Error(Errc::kNoConvergence,
              "solve_dare: no convergence after " +
                  std::to_string(opt.max_iterations) + " iterations");
}

// ---------------------------------------------------------------------------
// Ordered spectral split

struct SpectralSplit {
  Matrix v;         ///< change of basis, V^-1 A V = diag(Au, As)
  Matrix v_inv;
  Matrix unstable;  ///< Au, |lambda| >= 1 - 1e-9
  Matrix stable;    ///< As
};

namespace detail {

// Swaps the adjacent diagonal entries k, k+1 of an upper-triangular T,
// updating U so that A = U T U^H still holds.
inline void swap_schur_entries(ComplexMatrix& t, ComplexMatrix& u,
                               Eigen::Index k) {
  const Complex a = t(k, k);
  const Complex b = t(k + 1, k + 1);
  const Complex c = t(k, k + 1);
  Complex v1 = c;
  Complex v2 = b - a;
  const double norm = std::hypot(std::abs(v1), std::abs(v2));
  if (norm == 0.0) return;  // identical eigenvalues, nothing to do
  v1 /= norm;
  v2 /= norm;
  Eigen::Matrix2cd g;
  g << v1, -std::conj(v2), v2, std::conj(v1);
  t.middleRows(k, 2) = g.adjoint() * t.middleRows(k, 2);
  t.middleCols(k, 2) = t.middleCols(k, 2) * g;
  u.middleCols(k, 2) = u.middleCols(k, 2) * g;
  t(k + 1, k) = 0.0;
}

}  // namespace detail

/// Block-diagonalizes A into its unstable (|lambda| >= 1 - 1e-9) and stable
/// parts: ordered complex Schur form, a real orthonormal basis of the
/// unstable invariant subspace, then a Sylvester solve that removes the
/// coupling block.
inline SpectralSplit spectral_split(const Matrix& a) {
  require_square(a, "spectral_split: A");
  const Eigen::Index n = a.rows();
  const ComplexVector lambdas = eigenvalues(a);
  std::vector<bool> unstable(static_cast<std::size_t>(n));
  Eigen::Index nu = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    unstable[static_cast<std::size_t>(i)] = is_unstable_mode(lambdas(i));
    if (unstable[static_cast<std::size_t>(i)]) ++nu;
  }
  const Eigen::Index ns = n - nu;

  SpectralSplit out;
  const auto finish_with = [&](const Matrix& v) {
    out.v = v;
    out.v_inv = v.inverse();
    const Matrix blocks = out.v_inv * a * v;
    out.unstable = blocks.topLeftCorner(nu, nu);
    out.stable = blocks.bottomRightCorner(ns, ns);
  };

  // Diagonal A: a permutation suffices (unstable first, original order kept).
  if (n == 0 || a.isDiagonal(0.0)) {
    Matrix perm = Matrix::Zero(n, n);
    Eigen::Index col = 0;
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const bool want_unstable = pass == 0;
        if (is_unstable_mode(Complex(a(i, i), 0.0)) == want_unstable) {
          perm(i, col++) = 1.0;
        }
      }
    }
    finish_with(perm);
    return out;
  }

  // Already block-diagonal in the required order: V = I.
  if (a.topRightCorner(nu, ns).isZero(0.0) &&
      a.bottomLeftCorner(ns, nu).isZero(0.0)) {
    const ComplexVector lu = eigenvalues(a.topLeftCorner(nu, nu));
    const ComplexVector ls = eigenvalues(a.bottomRightCorner(ns, ns));
    const bool ordered =
        std::all_of(lu.begin(), lu.end(), is_unstable_mode) &&
        std::none_of(ls.begin(), ls.end(), is_unstable_mode);
    if (ordered) {
      finish_with(Matrix::Identity(n, n));
      return out;
    }
  }

  if (nu == 0 || ns == 0) {
    finish_with(Matrix::Identity(n, n));
    return out;
  }

  Eigen::ComplexSchur<ComplexMatrix> schur(a.cast<Complex>());
  ComplexMatrix t = schur.matrixT();
  ComplexMatrix u = schur.matrixU();
  // Bubble unstable diagonal entries to the top.
  for (Eigen::Index pass = 0; pass < n; ++pass) {
    bool swapped = false;
    for (Eigen::Index k = 0; k + 1 < n; ++k) {
      if (!is_unstable_mode(t(k, k)) && is_unstable_mode(t(k + 1, k + 1))) {
        detail::swap_schur_entries(t, u, k);
        swapped = true;
      }
    }
    if (!swapped) break;
  }

  // The unstable set is closed under conjugation, so its invariant subspace
  // is real: orthonormalize [Re U_u, Im U_u] and keep nu directions.
  Matrix span(n, 2 * nu);
  span.leftCols(nu) = u.leftCols(nu).real();
  span.rightCols(nu) = u.leftCols(nu).imag();
  Eigen::JacobiSVD<Matrix> svd(span, Eigen::ComputeFullU);
  const Matrix qu = svd.matrixU().leftCols(nu);
  Eigen::HouseholderQR<Matrix> qr(qu);
  const Matrix q_full = qr.householderQ() * Matrix::Identity(n, n);
  Matrix q(n, n);
  q.leftCols(nu) = qu;
  q.rightCols(ns) = q_full.rightCols(ns);

  const Matrix tri = q.transpose() * a * q;
  const Matrix auu = tri.topLeftCorner(nu, nu);
  const Matrix aus = tri.topRightCorner(nu, ns);
  const Matrix ass = tri.bottomRightCorner(ns, ns);
  // Auu X - X Ass = -Aus  zeroes the coupling under V = Q [I X; 0 I].
  const Matrix x = solve_sylvester(SchurForm(auu), SchurForm(ass), -aus);
  Matrix shear = Matrix::Identity(n, n);
  shear.topRightCorner(nu, ns) = x;
  finish_with(q * shear);
  out.unstable = auu;
  out.stable = ass;
  return out;
}

// ---------------------------------------------------------------------------
// Controllability and pole placement

/// [p, X p, ..., X^{n-1} p]
inline Matrix ctrb(const Matrix& x, const Vector& p) {
  require_square(x, "ctrb: X");
  const Eigen::Index n = x.rows();
  if (p.size() != n) throw Error(Errc::kDimensionMismatch, "ctrb: p size");
  Matrix out(n, n);
  if (n == 0) return out;
  out.col(0) = p;
  for (Eigen::Index j = 1; j < n; ++j) out.col(j) = x * out.col(j - 1);
  return out;
}

/// Krylov matrix [q, Y q, ..., Y^{cols-1} q] for a possibly smaller Y.
inline Matrix krylov(const Matrix& y, const Vector& q, Eigen::Index cols) {
  Matrix out(y.rows(), cols);
  if (cols == 0) return out;
  out.col(0) = q;
  for (Eigen::Index j = 1; j < cols; ++j) out.col(j) = y * out.col(j - 1);
  return out;
}

/// PBH form: (X, p) controllable iff (X^T, p^T) observable. Better
/// conditioned than the rank of the Krylov matrix for n beyond ~10.
inline bool is_controllable(const Matrix& x, const Vector& p) {
  return pbh_full_rank(x.transpose(), p.transpose(), /*unstable_only=*/false);
}

/// Monic polynomial coefficients (ascending: c0 + c1 s + ... + s^n) with the
/// given roots. Complex roots must come in conjugate pairs; each root with
/// positive imaginary part contributes a real quadratic factor and its
/// conjugate is skipped.
inline std::vector<double> poly_from_roots(const std::vector<Complex>& roots) {
  std::vector<double> coeffs{1.0};
  const auto multiply = [&coeffs](const std::vector<double>& factor) {
    std::vector<double> out(coeffs.size() + factor.size() - 1, 0.0);
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      for (std::size_t j = 0; j < factor.size(); ++j) {
        out[i + j] += coeffs[i] * factor[j];
      }
    }
    coeffs = std::move(out);
  };
  std::size_t positive = 0;
  std::size_t negative = 0;
  for (const Complex& r : roots) {
    if (r.imag() > 0.0) {
      multiply({std::norm(r), -2.0 * r.real(), 1.0});
      ++positive;
    } else if (r.imag() < 0.0) {
      ++negative;
    } else {
      multiply({-r.real(), 1.0});
    }
  }
  if (positive != negative) {
    throw Error(Errc::kInvalidArgument,
                "poly_from_roots: roots are not closed under conjugation");
  }
  return coeffs;
}

/// Characteristic polynomial det(sI - X), ascending monic coefficients,
/// assembled from the eigenvalues by convolving real linear/quadratic
/// factors.
inline std::vector<double> char_poly(const Matrix& x) {
  require_square(x, "char_poly: X");
  const ComplexVector lambdas = eigenvalues(x);
  return poly_from_roots(
      std::vector<Complex>(lambdas.data(), lambdas.data() + lambdas.size()));
}

/// sum_l coeffs[l] S^l v by Horner recursion.
inline Vector matrix_poly_eval(const std::vector<double>& coeffs,
                               const Matrix& s, const Vector& v) {
  Vector acc = Vector::Zero(v.size());
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) {
    acc = s * acc + (*it) * v;
  }
  return acc;
}

/// sum_l coeffs[l] X^l as a matrix (Horner).
inline Matrix matrix_poly(const std::vector<double>& coeffs, const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix acc = Matrix::Zero(n, n);
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) {
    acc = x * acc;
    acc.diagonal().array() += *it;
  }
  return acc;
}

/// beta such that X + p beta^T has the requested spectrum, by Ackermann's
/// formula beta^T = -e_n^T ctrb(X, p)^{-1} phi_d(X).
inline Vector pole_place(const Matrix& x, const Vector& p,
                         const std::vector<Complex>& targets) {
  require_square(x, "pole_place: X");
  const Eigen::Index n = x.rows();
  if (p.size() != n || static_cast<Eigen::Index>(targets.size()) != n) {
    throw Error(Errc::kDimensionMismatch, "pole_place: sizes");
  }
  if (!is_controllable(x, p)) {
    throw Error(Errc::kNotControllable, "pole_place: (X, p) not controllable");
  }
  const Matrix r = ctrb(x, p);
  const Matrix phi = matrix_poly(poly_from_roots(targets), x);
  Vector en = Vector::Zero(n);
  en(n - 1) = 1.0;
  const Vector row = r.transpose().fullPivLu().solve(en);  // e_n^T R^-1
  return -(row.transpose() * phi).transpose();
}

// ---------------------------------------------------------------------------
// Intertwining maps T X = Y T, T p = q

struct Intertwiner {
  Matrix t;
  double condition = 1.0;     ///< cond(ctrb(X, p))
  bool used_fallback = false; ///< stacked least squares instead of R_Y R_X^-1
};

/// Stacked least-squares route: [X^T (x) I - I (x) Y; p^T (x) I] vec(T) =
/// [0; q].
inline Matrix intertwine_stacked(const Matrix& x, const Vector& p,
                                 const Matrix& y, const Vector& q) {
  const Eigen::Index n = x.rows();
  const Eigen::Index r = y.rows();
  const Eigen::Index unknowns = r * n;
  Matrix sys = Matrix::Zero(unknowns + r, unknowns);
  const Matrix eye_r = Matrix::Identity(r, r);
  // vec(T X) = (X^T (x) I_r) vec(T); vec(Y T) = (I_n (x) Y) vec(T).
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      sys.block(i * r, j * r, r, r) += x(j, i) * eye_r;
    }
    sys.block(i * r, i * r, r, r) -= y;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    sys.block(unknowns, j * r, r, r) = p(j) * eye_r;
  }
  Vector rhs = Vector::Zero(unknowns + r);
  rhs.tail(r) = q;
  const Vector vec = sys.completeOrthogonalDecomposition().solve(rhs);
  return Eigen::Map<const Matrix>(vec.data(), r, n);
}

/// Solves T X = Y T, T p = q for T (rows(Y) x n) assuming (X, p) is
/// controllable and phi_X(Y) q = 0. Uses T = R_Y R_X^-1 unless R_X is
/// ill-conditioned, in which case the stacked least-squares system is used.
inline Intertwiner intertwine(const Matrix& x, const Vector& p,
                              const Matrix& y, const Vector& q) {
  require_square(x, "intertwine: X");
  require_square(y, "intertwine: Y");
  const Eigen::Index n = x.rows();
  if (p.size() != n || q.size() != y.rows()) {
    throw Error(Errc::kDimensionMismatch, "intertwine: sizes");
  }
  Intertwiner out;
  if (n == 0 || y.rows() == 0) {
    out.t = Matrix::Zero(y.rows(), n);
    return out;
  }
  const Matrix rx = ctrb(x, p);
  out.condition = condition_number(rx);
  if (out.condition > tol::kIllConditioned) {
    out.used_fallback = true;
    out.t = intertwine_stacked(x, p, y, q);
    return out;
  }
  const Matrix ry = krylov(y, q, n);
  // T R_X = R_Y  <=>  R_X^T T^T = R_Y^T
  out.t = rx.transpose().partialPivLu().solve(ry.transpose()).transpose();
  return out;
}

}  // namespace dkf
