#pragma once

// Plant, sensor and communication-graph models.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dkf/error.hpp"
#include "dkf/numerics.hpp"

namespace dkf {

/// LTI Gaussian plant x+ = A x + w, y = C x + v with one scalar row of C per
/// sensor.
struct SystemModel {
  Matrix a;
  Matrix c;
  Matrix q;
  Matrix r;

  Eigen::Index n() const { return a.rows(); }
  Eigen::Index m() const { return c.rows(); }
  RowVector sensor_row(Eigen::Index i) const { return c.row(i); }
};

inline SystemModel build_system(Matrix a, Matrix c, Matrix q, Matrix r) {
  const Eigen::Index n = a.rows();
  if (n == 0 || a.cols() != n || c.cols() != n || c.rows() == 0 ||
      q.rows() != n || q.cols() != n || r.rows() != c.rows() ||
      r.cols() != c.rows()) {
    throw Error(Errc::kDimensionMismatch,
                "build_system: expected A n x n, C m x n, Q n x n, R m x m");
  }
  if (!a.allFinite() || !c.allFinite() || !q.allFinite() || !r.allFinite()) {
    throw Error(Errc::kInvalidArgument, "build_system: non-finite entries");
  }
  if (!is_symmetric(q) || min_symmetric_eigenvalue(q) < -1e-12) {
    throw Error(Errc::kBadNoise, "Q must be symmetric positive semidefinite");
  }
  if (!is_symmetric(r) || min_symmetric_eigenvalue(r) <= 0.0) {
    throw Error(Errc::kBadNoise, "R must be symmetric positive definite");
  }
  if (!is_observable(a, c)) {
    throw Error(Errc::kNotObservable, "(A, C) is not observable");
  }
  return SystemModel{std::move(a), std::move(c), symmetrize(q), symmetrize(r)};
}

/// Plant coordinates split into unstable and stable parts:
/// V^-1 A V = diag(Au, As), C V = [Cu Cs].
struct SplitModel {
  Matrix v;
  Matrix v_inv;
  Matrix au;
  Matrix as;
  Matrix j;   ///< [0 I_ns], selects x^s from split coordinates
  Matrix cu;  ///< m x nu, row i is C_i^u
  Matrix cs;  ///< m x ns, row i is C_i^s

  Eigen::Index nu() const { return au.rows(); }
  Eigen::Index ns() const { return as.rows(); }
  /// Maps original-coordinate process noise to the stable block: J V^-1.
  Matrix noise_to_stable() const { return j * v_inv; }
};

inline SplitModel split_model(const SystemModel& model) {
  SpectralSplit sp = spectral_split(model.a);
  SplitModel out;
  const Eigen::Index n = model.n();
  const Eigen::Index nu = sp.unstable.rows();
  const Eigen::Index ns = n - nu;
  out.v = std::move(sp.v);
  out.v_inv = std::move(sp.v_inv);
  out.au = std::move(sp.unstable);
  out.as = std::move(sp.stable);
  out.j = Matrix::Zero(ns, n);
  out.j.rightCols(ns) = Matrix::Identity(ns, ns);
  const Matrix cv = model.c * out.v;
  out.cu = cv.leftCols(nu);
  out.cs = cv.rightCols(ns);
  return out;
}

// ---------------------------------------------------------------------------
// Communication graph

inline constexpr double kConnectivityTol = 1e-10;

struct SensorGraph {
  Matrix adjacency;
  Matrix laplacian;
  Vector mu;   ///< Laplacian spectrum, ascending
  Matrix phi;  ///< orthonormal eigenvectors, phi.col(0) = 1/sqrt(m)

  Eigen::Index size() const { return adjacency.rows(); }
  double mu2() const { return mu.size() > 1 ? mu(1) : 0.0; }
  double mu_max() const { return mu.size() > 0 ? mu(mu.size() - 1) : 0.0; }
  bool connected() const { return mu.size() <= 1 || mu(1) > kConnectivityTol; }
};

inline SensorGraph build_graph(Matrix adjacency) {
  const Eigen::Index m = adjacency.rows();
  if (m == 0 || adjacency.cols() != m) {
    throw Error(Errc::kDimensionMismatch, "adjacency must be square, non-empty");
  }
  if (!adjacency.allFinite()) {
    throw Error(Errc::kInvalidArgument, "adjacency has non-finite entries");
  }
  if ((adjacency - adjacency.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error(Errc::kInvalidArgument, "adjacency must be symmetric");
  }
  if (adjacency.minCoeff() < 0.0) {
    throw Error(Errc::kInvalidArgument, "adjacency must be nonnegative");
  }
  if (adjacency.diagonal().cwiseAbs().maxCoeff() != 0.0) {
    throw Error(Errc::kInvalidArgument, "adjacency must have zero diagonal");
  }
  SensorGraph g;
  g.adjacency = symmetrize(adjacency);
  g.laplacian = -g.adjacency;
  g.laplacian.diagonal() = g.adjacency.rowwise().sum();
  Eigen::SelfAdjointEigenSolver<Matrix> es(g.laplacian);
  g.mu = es.eigenvalues();
  g.phi = es.eigenvectors();
  // The Laplacian is PSD; clip rounding noise on the zero eigenvalue.
  g.mu(0) = std::abs(g.mu(0)) <= kConnectivityTol ? 0.0 : g.mu(0);
  if (!g.connected()) {
    throw Error(Errc::kDisconnected,
                "graph is disconnected (mu_2 = " + std::to_string(g.mu(1)) +
                    ")");
  }
  g.phi.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(m)));
  return g;
}

/// Cycle on m nodes with uniform edge weight; m = 2 is a single edge.
inline SensorGraph ring_graph(Eigen::Index m, double weight = 1.0) {
  if (m < 1 || !(weight > 0.0)) {
    throw Error(Errc::kInvalidArgument, "ring_graph: need m >= 1, weight > 0");
  }
  Matrix adj = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; m > 1 && i < m; ++i) {
    const Eigen::Index j = (i + 1) % m;
    adj(i, j) = weight;
    adj(j, i) = weight;
  }
  return build_graph(std::move(adj));
}

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// m points uniform on [0, side)^2.
inline std::vector<Point2> random_points(Eigen::Index m, double side,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, side);
  std::vector<Point2> pts(static_cast<std::size_t>(m));
  for (auto& p : pts) {
    p.x = uni(rng);
    p.y = uni(rng);
  }
  return pts;
}

/// Unit-weight disk graph: nodes closer than `radius` are linked.
inline SensorGraph geometric_graph(const std::vector<Point2>& pts,
                                   double radius) {
  const auto m = static_cast<Eigen::Index>(pts.size());
  Matrix adj = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const auto& a = pts[static_cast<std::size_t>(i)];
      const auto& b = pts[static_cast<std::size_t>(j)];
      if (std::hypot(a.x - b.x, a.y - b.y) <= radius) {
        adj(i, j) = 1.0;
        adj(j, i) = 1.0;
      }
    }
  }
  return build_graph(std::move(adj));
}

inline SensorGraph random_geometric_graph(Eigen::Index m, double radius,
                                          std::uint64_t seed,
                                          double side = 1.0) {
  return geometric_graph(random_points(m, side, seed), radius);
}

// ---------------------------------------------------------------------------
// Heat diffusion on an N x N grid with zero-flux boundary

/// Explicit-Euler diffusion u+ = u + (alpha/h^2) * (neighbour sum - 4u).
/// The zero-flux boundary uses a mirrored ghost node (u_-1 = u_1), so a
/// boundary node counts its inner neighbour twice. The constant field is
/// invariant. State ordering: index(i, j) = i * N + j.
inline Matrix heat_diffusion_matrix(Eigen::Index grid, double alpha, double h) {
  const Eigen::Index n = grid * grid;
  Matrix lap = Matrix::Zero(n, n);
  const auto idx = [grid](Eigen::Index i, Eigen::Index j) {
    return i * grid + j;
  };
  const auto mirror = [grid](Eigen::Index k) {
    if (k < 0) return -k;
    if (k >= grid) return 2 * (grid - 1) - k;
    return k;
  };
  for (Eigen::Index i = 0; i < grid; ++i) {
    for (Eigen::Index j = 0; j < grid; ++j) {
      const Eigen::Index self = idx(i, j);
      const std::pair<Eigen::Index, Eigen::Index> nbrs[] = {
          {i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (const auto& [ni, nj] : nbrs) {
        lap(self, self) += 1.0;
        lap(self, idx(mirror(ni), mirror(nj))) -= 1.0;
      }
    }
  }
  return Matrix::Identity(n, n) - (alpha / (h * h)) * lap;
}

/// Bilinear interpolation row for a sensor at `p` (physical coordinates in
/// [0, (N-1) h)^2), scaled by 1/h^2.
inline RowVector heat_sensor_row(Eigen::Index grid, double h, Point2 p) {
  RowVector row = RowVector::Zero(grid * grid);
  const double gx = p.x / h;
  const double gy = p.y / h;
  const auto i = std::min<Eigen::Index>(
      static_cast<Eigen::Index>(std::floor(gx)), grid - 2);
  const auto j = std::min<Eigen::Index>(
      static_cast<Eigen::Index>(std::floor(gy)), grid - 2);
  const double dx = gx - static_cast<double>(i);
  const double dy = gy - static_cast<double>(j);
  const double scale = 1.0 / (h * h);
  row(i * grid + j) += scale * (1.0 - dx) * (1.0 - dy);
  row((i + 1) * grid + j) += scale * dx * (1.0 - dy);
  row(i * grid + j + 1) += scale * (1.0 - dx) * dy;
  row((i + 1) * grid + j + 1) += scale * dx * dy;
  return row;
}

}  // namespace dkf
