#pragma once

// End-to-end design: Kalman filter, decomposition, consensus gain, and the
// per-node realization that both the simulator and the covariance analysis
// run on.
//
// Every node keeps an n x b state X_i (b = m for Algorithm 1, b = n for
// Algorithm 2). One exchange step is
//
//   X_i+ = S X_i + inj_i z_i + 1 u_i^T,   u_i = sum_j a_ij (Delta_j - Delta_i)^T,
//   Delta_i = Gamma X_i  (1 x b, the broadcast message),
//
// and the node output is m * sum_l O_l X_i[:, l]. Algorithm 1 uses
// inj_i = 1 e_i^T and O_l = F_l; Algorithm 2 uses column j of inj_i equal
// to p_ij(S) 1 and O_j = e_j beta^T.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dkf/consensus.hpp"
#include "dkf/decomposition.hpp"
#include "dkf/error.hpp"
#include "dkf/kalman.hpp"
#include "dkf/numerics.hpp"
#include "dkf/plant.hpp"

namespace dkf {

enum class Variant { kAlg1, kAlg2 };
enum class VariantChoice { kAuto, kAlg1, kAlg2 };

inline std::string variant_name(Variant v) {
  return v == Variant::kAlg1 ? "alg1" : "alg2";
}

/// Message length min{m, n}: Algorithm 2 when n < m.
inline Variant auto_variant(Eigen::Index n, Eigen::Index m) {
  return n < m ? Variant::kAlg2 : Variant::kAlg1;
}

struct Realization {
  Variant variant = Variant::kAlg1;
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  Eigen::Index b = 0;  ///< message length
  Matrix s;
  Vector beta;
  RowVector gamma;
  std::vector<Matrix> inj;  ///< per node, n x b
  std::vector<Matrix> out;  ///< per block, n x n
  std::vector<Matrix> f;    ///< F_i, used by the local replacement
  bool replace_own = false;

  /// O^(i), n x nb, acting on vec(X_i); includes the factor m and, with
  /// local replacement, the zeroed own block.
  Matrix output_map(Eigen::Index i) const {
    Matrix o(n, n * b);
    const double scale = static_cast<double>(m);
    for (Eigen::Index l = 0; l < b; ++l) {
      o.middleCols(l * n, n) = scale * out[static_cast<std::size_t>(l)];
    }
    if (replace_own) o.middleCols(i * n, n).setZero();
    return o;
  }
};

inline Realization make_realization(const DecompositionBundle& bundle,
                                    const ReducedBundle* reduced,
                                    const ConsensusDesign& consensus,
                                    Variant variant, bool replace_own) {
  Realization r;
  r.variant = variant;
  r.n = bundle.n();
  r.m = bundle.m();
  r.s = bundle.s;
  r.beta = bundle.beta;
  r.gamma = consensus.gamma;
  r.f = bundle.f;
  r.replace_own = replace_own;
  const Vector one = Vector::Ones(r.n);
  if (variant == Variant::kAlg1) {
    r.b = r.m;
    for (Eigen::Index i = 0; i < r.m; ++i) {
      Matrix inj = Matrix::Zero(r.n, r.b);
      inj.col(i) = one;
      r.inj.push_back(std::move(inj));
    }
    r.out = bundle.f;
  } else {
    if (reduced == nullptr) {
      throw Error(Errc::kInvalidArgument, "Algorithm 2 needs the reduced model");
    }
    if (replace_own) {
      throw Error(Errc::kConfig,
                  "local replacement is defined for Algorithm 1 only");
    }
    r.b = r.n;
    for (Eigen::Index i = 0; i < r.m; ++i) {
      r.inj.push_back(reduced->t_block(i, r.n));
    }
    for (Eigen::Index j = 0; j < r.n; ++j) {
      r.out.push_back(reduced->h.middleCols(j * r.n, r.n));
    }
  }
  return r;
}

struct DesignOptions {
  std::optional<double> zeta;
  StablePoleRule poles;
  VariantChoice variant = VariantChoice::kAuto;
  bool replace_own = false;
};

struct DesignSet {
  SystemModel model;
  SensorGraph graph;
  KalmanDesign kalman;
  SplitModel split;
  DecompositionBundle bundle;
  std::optional<ReducedBundle> reduced;
  ConsensusDesign consensus;
  Realization realization;

  Variant variant() const { return realization.variant; }
};

inline DesignSet build_designs(SystemModel model, SensorGraph graph,
                               const DesignOptions& options = {}) {
  if (graph.size() != model.m()) {
    throw Error(Errc::kDimensionMismatch,
                "graph has " + std::to_string(graph.size()) +
                    " nodes but the model has " + std::to_string(model.m()) +
                    " sensors");
  }
  DesignSet d{std::move(model), std::move(graph), {}, {}, {}, {}, {}, {}};
  d.kalman = design_kalman(d.model);
  d.split = split_model(d.model);
  d.bundle = build_decomposition(d.kalman, d.split, options.poles);
  d.consensus = design_consensus(d.bundle.s, d.graph, options.zeta);

  Variant variant = auto_variant(d.model.n(), d.model.m());
  if (options.variant == VariantChoice::kAlg1) variant = Variant::kAlg1;
  if (options.variant == VariantChoice::kAlg2) variant = Variant::kAlg2;
  if (variant == Variant::kAlg2) d.reduced = reduce_model(d.bundle);
  d.realization =
      make_realization(d.bundle, d.reduced ? &*d.reduced : nullptr,
                       d.consensus, variant, options.replace_own);
  return d;
}

}  // namespace dkf
