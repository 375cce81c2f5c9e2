#pragma once

// Exact steady-state error covariance of the distributed estimator.
//
// Write X_i for the consensus state of node i and delta~_j = sum_i phi_j(i) X_i
// for its Laplacian modes. Mode 1 is the network sum and reproduces the
// Kalman estimate exactly, so only modes j >= 2 carry error. With
//
//   eps_i = G_i V^-1 x - xi_i      (local filter error, stable)
//   z_i   = beta^T eps_i + C_i^s A^s x^s + C_i w + v_i
//
// the closed loop is block upper-triangular:
//
//   delta~_j+ = M_j delta~_j + L'_j z,   M_j = (I - mu_j 1 Gamma)^(R-1) (S - mu_j 1 Gamma)
//   s+        = A_s s + B_w w + B_v v,   s = [eps; x^s]
//   z         = Z s + C w + v
//
// where R is the number of exchange rounds per sample. The Lyapunov
// equation of the stacked system is solved block by block: first the
// s-part, then the (delta, s) cross term, then every n x n sub-block of the
// delta part, which is folded into the per-node covariance on the fly. The
// dense augmented matrix is never formed unless asked for.

#include <cmath>
#include <optional>
#include <vector>

#include "dkf/error.hpp"
#include "dkf/kalman.hpp"
#include "dkf/numerics.hpp"
#include "dkf/pipeline.hpp"
#include "dkf/simulator.hpp"

namespace dkf {

struct AugmentedSystem {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  Eigen::Index b = 0;
  Eigen::Index ns = 0;
  int rounds = 1;
  std::vector<Matrix> modes;  ///< M_j, j = 2..m
  Matrix lprime;              ///< (m-1) n b x m
  Matrix z;                   ///< m x (mn + ns)
  Matrix as;                  ///< (mn + ns) square
  Matrix bs_w;                ///< (mn + ns) x n
  Matrix bs_v;                ///< (mn + ns) x m
  Matrix c;                   ///< m x n
  Matrix q;
  Matrix r;
  Matrix phi;                 ///< Laplacian eigenvectors
  double radius = 0.0;        ///< spectral radius of the stacked system

  Eigen::Index delta_dim() const { return (m - 1) * n * b; }
  Eigen::Index s_dim() const { return m * n + ns; }
  Eigen::Index dim() const { return delta_dim() + s_dim(); }

  Matrix dense_ar() const {
    const Eigen::Index dd = delta_dim();
    Matrix ar = Matrix::Zero(dim(), dim());
    for (Eigen::Index a = 0; a < (m - 1) * b; ++a) {
      ar.block(a * n, a * n, n, n) = modes[static_cast<std::size_t>(a / b)];
    }
    ar.topRightCorner(dd, s_dim()) = lprime * z;
    ar.bottomRightCorner(s_dim(), s_dim()) = as;
    return ar;
  }
  Matrix dense_bw() const {
    Matrix out(dim(), n);
    out << lprime * c, bs_w;
    return out;
  }
  Matrix dense_bv() const {
    Matrix out(dim(), m);
    out << lprime, bs_v;
    return out;
  }
};

inline AugmentedSystem build_augmented(const DesignSet& d, int rounds = 1) {
  if (rounds < 1) throw Error(Errc::kConfig, "rounds must be >= 1");
  const Realization& r = d.realization;
  const Eigen::Index n = r.n;
  const Eigen::Index m = r.m;
  const Eigen::Index b = r.b;
  const Eigen::Index ns = d.split.ns();
  AugmentedSystem aug;
  aug.n = n;
  aug.m = m;
  aug.b = b;
  aug.ns = ns;
  aug.rounds = rounds;
  aug.c = d.model.c;
  aug.q = d.model.q;
  aug.r = d.model.r;
  aug.phi = d.graph.phi;

  const Vector one = Vector::Ones(n);
  const Matrix eye = Matrix::Identity(n, n);
  aug.lprime = Matrix::Zero((m - 1) * n * b, m);
  for (Eigen::Index j = 1; j < m; ++j) {
    const double mu = d.graph.mu(j);
    const Matrix shrink = eye - mu * one * r.gamma;
    Matrix power = eye;
    for (int k = 1; k < rounds; ++k) power = shrink * power;
    aug.modes.push_back(power * (r.s - mu * one * r.gamma));
    for (Eigen::Index l = 0; l < b; ++l) {
      const Eigen::Index row = ((j - 1) * b + l) * n;
      for (Eigen::Index i = 0; i < m; ++i) {
        aug.lprime.block(row, i, n, 1) =
            d.graph.phi(i, j) * power * r.inj[static_cast<std::size_t>(i)].col(l);
      }
    }
  }

  const Matrix cs_as = d.split.cs * d.split.as;  // m x ns
  aug.z = Matrix::Zero(m, m * n + ns);
  aug.as = Matrix::Zero(m * n + ns, m * n + ns);
  aug.bs_w = Matrix::Zero(m * n + ns, n);
  aug.bs_v = Matrix::Zero(m * n + ns, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    aug.z.block(i, i * n, 1, n) = r.beta.transpose();
    aug.as.block(i * n, i * n, n, n) = d.bundle.lambda;
    aug.as.block(i * n, m * n, n, ns) = -one * cs_as.row(i);
    aug.bs_w.middleRows(i * n, n) =
        d.bundle.g_plant[static_cast<std::size_t>(i)] - one * d.model.c.row(i);
    aug.bs_v.block(i * n, i, n, 1) = -one;
  }
  aug.z.rightCols(ns) = cs_as;
  aug.as.bottomRightCorner(ns, ns) = d.split.as;
  aug.bs_w.bottomRows(ns) = d.split.noise_to_stable();

  aug.radius = std::max(spectral_radius(d.bundle.lambda),
                        ns > 0 ? spectral_radius(d.split.as) : 0.0);
  for (const Matrix& mj : aug.modes) {
    aug.radius = std::max(aug.radius, spectral_radius(mj));
  }
  if (!(aug.radius < 1.0 - tol::kUnitCircle)) {
    throw Error(Errc::kUnstableAugmented,
                "error dynamics have spectral radius " +
                    std::to_string(aug.radius));
  }
  return aug;
}

struct CovarianceReport {
  Matrix wr;      ///< augmented covariance; filled only for small systems
  Matrix wss;     ///< covariance of [eps; x^s]
  Matrix wbar;    ///< mn x mn, covariance of xbreve_i - xhat stacked
  Matrix wbreve;  ///< wbar + 1 1^T (x) Ppost
  Matrix ppost;
  Vector per_node_trace;  ///< tr of the diagonal blocks of wbreve

  Matrix node_block(Eigen::Index i) const {
    const Eigen::Index n = ppost.rows();
    return wbreve.block(i * n, i * n, n, n);
  }
  double wbar_trace() const { return wbar.trace(); }
};

inline constexpr Eigen::Index kDenseCovarianceLimit = 1500;

inline CovarianceReport asymptotic_covariance(const AugmentedSystem& aug,
                                              const Realization& real,
                                              const Matrix& ppost) {
  const Eigen::Index n = aug.n;
  const Eigen::Index m = aug.m;
  const Eigen::Index b = aug.b;
  const Eigen::Index nsub = (m - 1) * b;  // n x n sub-blocks of delta
  const Eigen::Index ds = aug.s_dim();

  CovarianceReport rep;
  rep.ppost = ppost;
  rep.wss = solve_dlyap(aug.as, aug.bs_w * aug.q * aug.bs_w.transpose() +
                                    aug.bs_v * aug.r * aug.bs_v.transpose());

  const bool dense = aug.dim() <= kDenseCovarianceLimit;
  if (dense) {
    rep.wr = Matrix::Zero(aug.dim(), aug.dim());
    rep.wr.bottomRightCorner(ds, ds) = rep.wss;
  }

  rep.wbar = Matrix::Zero(m * n, m * n);
  if (m > 1) {
    std::vector<SchurForm> mode_schur;
    for (const Matrix& mj : aug.modes) mode_schur.emplace_back(mj);
    const SchurForm as_schur(aug.as);
    const auto mode_of = [&](Eigen::Index a) {
      return static_cast<std::size_t>(a / b);
    };

    // Cross covariance E[delta s^T] and K_a = W_{a,s} Z^T.
    const Matrix noise_cross = aug.c * aug.q * aug.bs_w.transpose() +
                               aug.r * aug.bs_v.transpose() +
                               aug.z * rep.wss * aug.as.transpose();
    std::vector<Matrix> lp(static_cast<std::size_t>(nsub));
    std::vector<Matrix> mk(static_cast<std::size_t>(nsub));
    for (Eigen::Index a = 0; a < nsub; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      lp[ua] = aug.lprime.middleRows(a * n, n);
      const Matrix w0s =
          solve_stein(mode_schur[mode_of(a)], as_schur, lp[ua] * noise_cross);
      if (dense) rep.wr.block(a * n, aug.delta_dim(), n, ds) = w0s;
      mk[ua] = aug.modes[mode_of(a)] * (w0s * aug.z.transpose());
    }
    if (dense) {
      rep.wr.bottomLeftCorner(ds, aug.delta_dim()) =
          rep.wr.topRightCorner(aug.delta_dim(), ds).transpose();
    }
    const Matrix sigma_z = aug.z * rep.wss * aug.z.transpose() +
                           aug.c * aug.q * aug.c.transpose() + aug.r;
    std::vector<Matrix> left(static_cast<std::size_t>(nsub));
    for (Eigen::Index a = 0; a < nsub; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      left[ua] = lp[ua] * sigma_z + mk[ua];
    }

    // Per node output blocks O^(i)_l.
    std::vector<Matrix> omap;
    for (Eigen::Index i = 0; i < m; ++i) omap.push_back(real.output_map(i));

    // t[i][c] = sum_a phi_j(a)(i) O^(i)_l(a) W[a, c]
    std::vector<std::vector<Matrix>> t(static_cast<std::size_t>(m));
    std::vector<Matrix> g(static_cast<std::size_t>(m * b));
    for (Eigen::Index c = 0; c < nsub; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      for (auto& gi : g) gi.setZero(n, n);
      for (Eigen::Index a = 0; a < nsub; ++a) {
        const auto ua = static_cast<std::size_t>(a);
        const Matrix rhs = left[ua] * lp[uc].transpose() +
                           lp[ua] * mk[uc].transpose();
        const Matrix wac =
            solve_stein(mode_schur[mode_of(a)], mode_schur[mode_of(c)], rhs);
        if (dense) rep.wr.block(a * n, c * n, n, n) = wac;
        const Eigen::Index j = a / b + 1;
        const Eigen::Index l = a % b;
        for (Eigen::Index i = 0; i < m; ++i) {
          g[static_cast<std::size_t>(i * b + l)] += aug.phi(i, j) * wac;
        }
      }
      for (Eigen::Index i = 0; i < m; ++i) {
        Matrix acc = Matrix::Zero(n, n);
        for (Eigen::Index l = 0; l < b; ++l) {
          acc.noalias() += omap[static_cast<std::size_t>(i)].middleCols(l * n, n) *
                           g[static_cast<std::size_t>(i * b + l)];
        }
        t[static_cast<std::size_t>(i)].push_back(std::move(acc));
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index i2 = i; i2 < m; ++i2) {
        Matrix blk = Matrix::Zero(n, n);
        for (Eigen::Index c = 0; c < nsub; ++c) {
          const Eigen::Index j = c / b + 1;
          const Eigen::Index l = c % b;
          blk.noalias() += aug.phi(i2, j) *
                           t[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] *
                           omap[static_cast<std::size_t>(i2)].middleCols(l * n, n).transpose();
        }
        rep.wbar.block(i * n, i2 * n, n, n) = blk;
        rep.wbar.block(i2 * n, i * n, n, n) = blk.transpose();
      }
    }
    if (dense) rep.wr = symmetrize(rep.wr);
  }
  rep.wbar = symmetrize(rep.wbar);
  rep.wbreve = rep.wbar;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index i2 = 0; i2 < m; ++i2) {
      rep.wbreve.block(i * n, i2 * n, n, n) += ppost;
    }
  }
  rep.per_node_trace = Vector(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    rep.per_node_trace(i) = rep.wbreve.block(i * n, i * n, n, n).trace();
  }
  return rep;
}

inline CovarianceReport asymptotic_covariance(const DesignSet& d,
                                              int rounds = 1) {
  return asymptotic_covariance(build_augmented(d, rounds), d.realization,
                               d.kalman.ppost);
}

/// Per-node deviation covariance from the dense augmented covariance; the
/// reference path used to check the streamed computation.
inline Matrix wbar_from_dense(const AugmentedSystem& aug,
                              const Realization& real, const Matrix& wr) {
  const Eigen::Index n = aug.n;
  const Eigen::Index m = aug.m;
  Matrix proj = Matrix::Zero(m * n, aug.dim());
  for (Eigen::Index i = 0; i < m; ++i) {
    const Matrix o = real.output_map(i);
    for (Eigen::Index j = 1; j < m; ++j) {
      proj.block(i * n, (j - 1) * n * aug.b, n, n * aug.b) = aug.phi(i, j) * o;
    }
  }
  return symmetrize(proj * wr * proj.transpose());
}

struct PerformanceRatio {
  std::optional<double> local;  ///< tr(P^_i) / tr(P); absent when not detectable
  double distributed = 0.0;     ///< tr(P(breve)_i) / tr(P)
};

inline std::vector<PerformanceRatio> performance_ratios(
    const CovarianceReport& rep,
    const std::vector<std::optional<KalmanDesign>>& local,
    const Matrix& ppost) {
  const double base = ppost.trace();
  std::vector<PerformanceRatio> out(static_cast<std::size_t>(rep.per_node_trace.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].distributed = rep.per_node_trace(static_cast<Eigen::Index>(i)) / base;
    if (i < local.size() && local[i]) out[i].local = local[i]->ppost.trace() / base;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Empirical counterpart

struct EmpiricalCovariance {
  std::vector<Matrix> cov;          ///< [i] unbiased pooled covariance
  std::vector<Matrix> stderr_cov;   ///< [i] batch-means standard error, per entry
  std::size_t samples = 0;          ///< pooled samples per node
};

/// Pooled covariance of xbreve_i(k) - x(k) over trials and steps in
/// [begin, end]; each trial is one batch for the standard error.
inline EmpiricalCovariance empirical_covariance(
    const std::vector<SimulationTrace>& traces, int begin, int end) {
  if (traces.size() < 2) {
    throw Error(Errc::kInvalidArgument, "empirical_covariance needs >= 2 trials");
  }
  const std::size_t m = traces.front().xbreve.front().size();
  const Eigen::Index n = traces.front().x.front().size();
  EmpiricalCovariance out;
  out.cov.assign(m, Matrix::Zero(n, n));
  out.stderr_cov.assign(m, Matrix::Zero(n, n));
  std::vector<Vector> mean(m, Vector::Zero(n));
  std::vector<std::vector<Matrix>> batch(m);
  std::size_t count = 0;
  for (const SimulationTrace& tr : traces) {
    const int last = std::min<int>(end, static_cast<int>(tr.size()) - 1);
    std::vector<Matrix> trial(m, Matrix::Zero(n, n));
    std::size_t trial_count = 0;
    for (int k = begin; k <= last; ++k) {
      for (std::size_t i = 0; i < m; ++i) {
        const Vector e = tr.xbreve[static_cast<std::size_t>(k)][i] -
                         tr.x[static_cast<std::size_t>(k)];
        mean[i] += e;
        out.cov[i].noalias() += e * e.transpose();
        trial[i].noalias() += e * e.transpose();
      }
      ++trial_count;
    }
    count += trial_count;
    for (std::size_t i = 0; i < m; ++i) {
      batch[i].push_back(trial[i] / static_cast<double>(std::max<std::size_t>(trial_count, 1)));
    }
  }
  out.samples = count;
  const double nsamp = static_cast<double>(count);
  const double nbatch = static_cast<double>(traces.size());
  for (std::size_t i = 0; i < m; ++i) {
    mean[i] /= nsamp;
    out.cov[i] = (out.cov[i] - nsamp * mean[i] * mean[i].transpose()) / (nsamp - 1.0);
    Matrix avg = Matrix::Zero(n, n);
    for (const Matrix& bm : batch[i]) avg += bm;
    avg /= nbatch;
    Matrix var = Matrix::Zero(n, n);
    for (const Matrix& bm : batch[i]) var += (bm - avg).cwiseAbs2();
    out.stderr_cov[i] = (var / (nbatch - 1.0) / nbatch).cwiseSqrt();
  }
  return out;
}

}  // namespace dkf
