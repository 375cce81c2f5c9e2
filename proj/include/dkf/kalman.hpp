#pragma once

// Centralized steady-state Kalman filter and per-sensor local baselines.
//
// Naming: `sigma` is the steady-state *prediction* covariance (the Riccati
// fixed point) and `ppost` the *posterior* covariance (I - K C) sigma. The
// gain K = sigma C^T (C sigma C^T + R)^-1 makes
//   xhat(k+1) = (A - K C A) xhat(k) + K y(k+1)
// the standard predict/update filter, and ppost is the error covariance of
// xhat(k) - x(k).

#include <optional>
#include <string>
#include <vector>

#include "dkf/error.hpp"
#include "dkf/numerics.hpp"
#include "dkf/plant.hpp"

namespace dkf {

struct KalmanDesign {
  Matrix sigma;
  Matrix ppost;
  Matrix k;    ///< n x m, column i is K_i
  Matrix acl;  ///< A - K C A
};

inline KalmanDesign design_kalman(const Matrix& a, const Matrix& c,
                                  const Matrix& q, const Matrix& r) {
  KalmanDesign d;
  d.sigma = solve_dare(a, c, q, r);
  const Matrix innov = c * d.sigma * c.transpose() + r;
  d.k = innov.llt().solve(c * d.sigma).transpose();
  const Eigen::Index n = a.rows();
  d.ppost = symmetrize((Matrix::Identity(n, n) - d.k * c) * d.sigma);
  d.acl = a - d.k * c * a;
  const double rho = spectral_radius(d.acl);
  if (!(rho < 1.0)) {
    throw Error(Errc::kUnstable,
                "closed-loop Kalman matrix has spectral radius " +
                    std::to_string(rho));
  }
  return d;
}

inline KalmanDesign design_kalman(const SystemModel& model) {
  return design_kalman(model.a, model.c, model.q, model.r);
}

/// xhat(k+1) = (A - K C A) xhat(k) + K y(k+1)
inline Vector step_centralized(const KalmanDesign& design, const Vector& xhat,
                               const Vector& y_next) {
  return design.acl * xhat + design.k * y_next;
}

/// Steady-state filter using only sensor i. Throws NotDetectable when
/// (A, C_i) is not detectable.
inline KalmanDesign design_local_kf(const SystemModel& model,
                                    Eigen::Index sensor) {
  if (sensor < 0 || sensor >= model.m()) {
    throw Error(Errc::kInvalidArgument, "design_local_kf: sensor index");
  }
  const Matrix ci = model.c.row(sensor);
  if (!is_detectable(model.a, ci)) {
    throw Error(Errc::kNotDetectable,
                "sensor " + std::to_string(sensor + 1) +
                    " cannot detect the unstable modes");
  }
  const Matrix ri = model.r.block(sensor, sensor, 1, 1);
  return design_kalman(model.a, ci, model.q, ri);
}

/// One optional local design per sensor; empty where not detectable.
inline std::vector<std::optional<KalmanDesign>> local_kf_baselines(
    const SystemModel& model) {
  std::vector<std::optional<KalmanDesign>> out;
  out.reserve(static_cast<std::size_t>(model.m()));
  for (Eigen::Index i = 0; i < model.m(); ++i) {
    try {
      out.emplace_back(design_local_kf(model, i));
    } catch (const Error& e) {
      if (e.code() != Errc::kNotDetectable) throw;
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

}  // namespace dkf
