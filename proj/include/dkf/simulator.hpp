#pragma once

// Plant, centralized filter and distributed estimators in synchronous
// lockstep, plus a Monte-Carlo harness.
//
// Random streams: trial t of a run with master seed s uses seed s + t. The
// noise engine draws x(0), then per step w(k) followed by v(k+1); link
// failures come from a separate stream of the same trial seed.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <memory>
#include <thread>
#include <vector>

#include "dkf/consensus.hpp"
#include "dkf/error.hpp"
#include "dkf/kalman.hpp"
#include "dkf/numerics.hpp"
#include "dkf/pipeline.hpp"
#include "dkf/plant.hpp"
#include "dkf/random.hpp"

namespace dkf {

struct NoiseModel {
  GaussianSampler w;
  GaussianSampler v;
  GaussianSampler x0;

  NoiseModel() = default;
  NoiseModel(const SystemModel& model, const Matrix& x0_cov)
      : w(model.q), v(model.r), x0(x0_cov) {}
};

struct TruthStep {
  Vector x;
  Vector y;
};

/// x+ = A x + w, y+ = C x+ + v.
inline TruthStep step_truth(const SystemModel& model, const NoiseModel& noise,
                            const Vector& x, std::mt19937_64& rng) {
  TruthStep out;
  out.x = model.a * x + noise.w.draw(rng);
  out.y = model.c * out.x + noise.v.draw(rng);
  return out;
}

struct NodeState {
  Vector xi;        ///< local filter estimate
  Matrix state;     ///< n x b consensus state
  Vector xbreve;    ///< node estimate of x
  RowVector msg;    ///< Delta_i = Gamma X_i
};

inline NodeState initial_node(const Realization& r) {
  NodeState s;
  s.xi = Vector::Zero(r.n);
  s.state = Matrix::Zero(r.n, r.b);
  s.xbreve = Vector::Zero(r.n);
  s.msg = RowVector::Zero(r.b);
  return s;
}

/// u_i = sum_j w_ij (Delta_j - Delta_i).
inline RowVector coupling_input(const Matrix& weights, Eigen::Index i,
                                const std::vector<NodeState>& nodes) {
  RowVector u = RowVector::Zero(nodes[static_cast<std::size_t>(i)].msg.size());
  for (Eigen::Index j = 0; j < weights.cols(); ++j) {
    const double w = weights(i, j);
    if (w == 0.0) continue;
    u += w * (nodes[static_cast<std::size_t>(j)].msg -
              nodes[static_cast<std::size_t>(i)].msg);
  }
  return u;
}

/// Node output m * sum_l O_l X[:, l], with block i swapped for xi_i when
/// local replacement is on.
inline Vector node_output(const Realization& r, Eigen::Index i,
                          const NodeState& node, bool raw = false) {
  Vector out = Vector::Zero(r.n);
  for (Eigen::Index l = 0; l < r.b; ++l) {
    if (!raw && r.replace_own && l == i) continue;
    out.noalias() += r.out[static_cast<std::size_t>(l)] * node.state.col(l);
  }
  out *= static_cast<double>(r.m);
  if (!raw && r.replace_own) out += r.f[static_cast<std::size_t>(i)] * node.xi;
  return out;
}

/// One sampling step of node i: local filter, then consensus state update
/// with the coupling input u computed from step-k messages. Messages are
/// refreshed by the caller once all nodes have stepped.
inline void step_node(const Realization& r, Eigen::Index i, NodeState& node,
                      double y_next, const RowVector& u) {
  if (node.state.rows() != r.n || node.state.cols() != r.b ||
      u.size() != r.b) {
    throw Error(Errc::kDimensionMismatch, "step_node: state or input size");
  }
  const double z = y_next - r.beta.dot(node.xi);
  node.xi = r.s * node.xi;
  node.xi.array() += z;
  Matrix next = r.s * node.state;
  next.noalias() += r.inj[static_cast<std::size_t>(i)] * z;
  next.rowwise() += u;
  node.state = std::move(next);
  node.xbreve = node_output(r, i, node);
}

inline void step_node_alg1(const Realization& r, Eigen::Index i,
                           NodeState& node, double y_next, const RowVector& u) {
  if (r.variant != Variant::kAlg1) {
    throw Error(Errc::kDimensionMismatch, "realization is not Algorithm 1");
  }
  step_node(r, i, node, y_next, u);
}

inline void step_node_alg2(const Realization& r, Eigen::Index i,
                           NodeState& node, double y_next, const RowVector& u) {
  if (r.variant != Variant::kAlg2) {
    throw Error(Errc::kDimensionMismatch, "realization is not Algorithm 2");
  }
  step_node(r, i, node, y_next, u);
}

struct TrialConfig {
  int horizon = 100;
  std::uint64_t seed = 0;
  int rounds = 1;               ///< consensus exchanges per sample
  double drop = 0.0;            ///< link failure probability
  Matrix x0_cov;                ///< empty means identity
};

inline void validate(const TrialConfig& cfg) {
  if (cfg.horizon < 0) throw Error(Errc::kConfig, "horizon must be >= 0");
  if (cfg.rounds < 1) throw Error(Errc::kConfig, "rounds must be >= 1");
  if (!(cfg.drop >= 0.0 && cfg.drop < 1.0)) {
    throw Error(Errc::kConfig, "drop probability must be in [0, 1)");
  }
}

inline std::unique_ptr<SyncStrategy> make_strategy(const TrialConfig& cfg) {
  if (cfg.drop > 0.0) return bernoulli_drop_strategy(cfg.drop, cfg.seed);
  return static_strategy();
}

/// State of one trial: plant, centralized filter, and all nodes.
class DistributedRun {
 public:
  DistributedRun(const DesignSet& designs, const NoiseModel& noise,
                 const TrialConfig& cfg, std::unique_ptr<SyncStrategy> strategy)
      : d_(designs),
        noise_(noise),
        rounds_(cfg.rounds),
        rng_(derive_seed(cfg.seed, kNoiseStream)),
        strategy_(std::move(strategy)) {
    const Realization& r = d_.realization;
    x_ = noise_.x0.draw(rng_);
    xhat_ = Vector::Zero(r.n);
    y_ = Vector::Zero(r.m);
    nodes_.assign(static_cast<std::size_t>(r.m), initial_node(r));
  }

  void step() {
    const Realization& r = d_.realization;
    const TruthStep truth = step_truth(d_.model, noise_, x_, rng_);
    x_ = truth.x;
    y_ = truth.y;
    xhat_ = step_centralized(d_.kalman, xhat_, y_);

    strategy_->link_weights(d_.graph.adjacency, weights_);
    inputs_.resize(nodes_.size());
    for (Eigen::Index i = 0; i < r.m; ++i) {
      inputs_[static_cast<std::size_t>(i)] = coupling_input(weights_, i, nodes_);
    }
    for (Eigen::Index i = 0; i < r.m; ++i) {
      step_node(r, i, nodes_[static_cast<std::size_t>(i)], y_(i),
                inputs_[static_cast<std::size_t>(i)]);
    }
    refresh_messages();
    for (int round = 1; round < rounds_; ++round) {
      strategy_->link_weights(d_.graph.adjacency, weights_);
      for (Eigen::Index i = 0; i < r.m; ++i) {
        inputs_[static_cast<std::size_t>(i)] = coupling_input(weights_, i, nodes_);
      }
      for (Eigen::Index i = 0; i < r.m; ++i) {
        NodeState& node = nodes_[static_cast<std::size_t>(i)];
        node.state.rowwise() += inputs_[static_cast<std::size_t>(i)];
        node.xbreve = node_output(r, i, node);
      }
      refresh_messages();
    }
  }

  const Vector& x() const { return x_; }
  const Vector& y() const { return y_; }
  const Vector& xhat() const { return xhat_; }
  const std::vector<NodeState>& nodes() const { return nodes_; }
  const Realization& realization() const { return d_.realization; }

  /// (1/m) sum_i of the unreplaced node outputs.
  Vector network_average() const {
    const Realization& r = d_.realization;
    Vector avg = Vector::Zero(r.n);
    for (Eigen::Index i = 0; i < r.m; ++i) {
      avg += node_output(r, i, nodes_[static_cast<std::size_t>(i)], true);
    }
    return avg / static_cast<double>(r.m);
  }

 private:
  void refresh_messages() {
    for (NodeState& node : nodes_) {
      node.msg = d_.realization.gamma * node.state;
    }
  }

  const DesignSet& d_;
  const NoiseModel& noise_;
  int rounds_;
  std::mt19937_64 rng_;
  std::unique_ptr<SyncStrategy> strategy_;
  Vector x_;
  Vector y_;
  Vector xhat_;
  std::vector<NodeState> nodes_;
  std::vector<RowVector> inputs_;
  Matrix weights_;
};

inline Matrix default_x0_cov(const TrialConfig& cfg, Eigen::Index n) {
  return cfg.x0_cov.size() == 0 ? Matrix::Identity(n, n) : cfg.x0_cov;
}

struct SimulationTrace {
  std::uint64_t seed = 0;
  int horizon = 0;
  Variant variant = Variant::kAlg1;
  std::vector<Vector> x;       ///< k = 0..horizon
  std::vector<Vector> y;       ///< y[k] for k >= 1; y[0] is zero
  std::vector<Vector> xhat;
  std::vector<std::vector<Vector>> xbreve;  ///< [k][node]
  double max_average_gap = 0.0;  ///< max_k |avg_i xbreve_i - xhat| / (1 + |xhat|)

  std::size_t size() const { return x.size(); }
};

inline SimulationTrace run_trial(const DesignSet& designs,
                                 const TrialConfig& cfg,
                                 const SyncStrategy* prototype = nullptr) {
  validate(cfg);
  const NoiseModel noise(designs.model, default_x0_cov(cfg, designs.model.n()));
  auto strategy = prototype ? prototype->fork(cfg.seed) : make_strategy(cfg);
  DistributedRun run(designs, noise, cfg, std::move(strategy));
  SimulationTrace tr;
  tr.seed = cfg.seed;
  tr.horizon = cfg.horizon;
  tr.variant = designs.variant();
  const auto record = [&] {
    tr.x.push_back(run.x());
    tr.y.push_back(run.y());
    tr.xhat.push_back(run.xhat());
    std::vector<Vector> outs;
    for (const NodeState& node : run.nodes()) outs.push_back(node.xbreve);
    tr.xbreve.push_back(std::move(outs));
    const double gap = (run.network_average() - run.xhat()).norm() /
                       (1.0 + run.xhat().norm());
    tr.max_average_gap = std::max(tr.max_average_gap, gap);
  };
  record();
  for (int k = 0; k < cfg.horizon; ++k) {
    run.step();
    record();
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct SteadyWindow {
  int begin = 50;  ///< inclusive
  int end = 100;   ///< inclusive
};

/// Sums over a block of trials; reduced in a fixed order.
struct MonteCarloSums {
  std::size_t trials = 0;
  std::vector<Matrix> node_sq;  ///< [k] m x n, sum of squared node errors
  std::vector<Vector> kf_sq;    ///< [k] n, sum of squared Kalman errors
  std::vector<Matrix> err2;     ///< [i] window sum of e e^T, e = xbreve_i - x
  std::vector<Matrix> dev2;     ///< [i] window sum of d d^T, d = xbreve_i - xhat
  std::vector<Matrix> cross;    ///< [i] window sum of d (xhat - x)^T
  Matrix kf2;                   ///< window sum of (xhat - x)(xhat - x)^T
  std::size_t window_samples = 0;  ///< per node
  double max_average_gap = 0.0;

  void init(Eigen::Index n, Eigen::Index m, int horizon) {
    node_sq.assign(static_cast<std::size_t>(horizon + 1), Matrix::Zero(m, n));
    kf_sq.assign(static_cast<std::size_t>(horizon + 1), Vector::Zero(n));
    err2.assign(static_cast<std::size_t>(m), Matrix::Zero(n, n));
    dev2 = err2;
    cross = err2;
    kf2 = Matrix::Zero(n, n);
  }

  void merge(const MonteCarloSums& o) {
    trials += o.trials;
    for (std::size_t k = 0; k < node_sq.size(); ++k) {
      node_sq[k] += o.node_sq[k];
      kf_sq[k] += o.kf_sq[k];
    }
    for (std::size_t i = 0; i < err2.size(); ++i) {
      err2[i] += o.err2[i];
      dev2[i] += o.dev2[i];
      cross[i] += o.cross[i];
    }
    kf2 += o.kf2;
    window_samples += o.window_samples;
    max_average_gap = std::max(max_average_gap, o.max_average_gap);
  }
};

struct MonteCarloResult {
  std::size_t trials = 0;
  SteadyWindow window;
  std::vector<Matrix> node_mse;  ///< [k] m x n per-state MSE of each node
  std::vector<Vector> kf_mse;    ///< [k] per-state MSE of the centralized filter
  std::vector<Matrix> err_cov;   ///< [i] window second moment of xbreve_i - x
  std::vector<Matrix> dev_cov;   ///< [i] window second moment of xbreve_i - xhat
  std::vector<Matrix> cross_cov; ///< [i] window E[(xbreve_i - xhat)(xhat - x)^T]
  Matrix kf_cov;
  /// Batch-means standard errors (one batch per chunk of trials).
  Vector err_trace_se;          ///< [i] of tr(err_cov[i])
  Vector dev_trace_se;          ///< [i] of tr(dev_cov[i])
  std::vector<Matrix> cross_se; ///< [i] entrywise
  double max_average_gap = 0.0;

  /// Mean over the window of node i's per-state MSE.
  Vector steady_node_mse(Eigen::Index i) const {
    return err_cov[static_cast<std::size_t>(i)].diagonal();
  }
  double dev_trace_total() const {
    double t = 0.0;
    for (const Matrix& d : dev_cov) t += d.trace();
    return t;
  }
};

inline constexpr std::size_t kTrialsPerChunk = 32;

inline MonteCarloSums run_chunk(const DesignSet& designs,
                                const NoiseModel& noise,
                                const TrialConfig& cfg,
                                const SyncStrategy& prototype,
                                std::size_t first, std::size_t count,
                                const SteadyWindow& window) {
  const Eigen::Index n = designs.model.n();
  const Eigen::Index m = designs.model.m();
  MonteCarloSums sums;
  sums.init(n, m, cfg.horizon);
  for (std::size_t t = first; t < first + count; ++t) {
    TrialConfig tc = cfg;
    tc.seed = cfg.seed + t;
    DistributedRun run(designs, noise, tc, prototype.fork(tc.seed));
    for (int k = 0; k <= cfg.horizon; ++k) {
      if (k > 0) run.step();
      const Vector kf_err = run.xhat() - run.x();
      sums.kf_sq[static_cast<std::size_t>(k)] += kf_err.cwiseAbs2();
      const bool in_window = k >= window.begin && k <= window.end;
      if (in_window) sums.kf2.noalias() += kf_err * kf_err.transpose();
      for (Eigen::Index i = 0; i < m; ++i) {
        const Vector& xb = run.nodes()[static_cast<std::size_t>(i)].xbreve;
        const Vector e = xb - run.x();
        sums.node_sq[static_cast<std::size_t>(k)].row(i) +=
            e.cwiseAbs2().transpose();
        if (in_window) {
          const Vector dvec = xb - run.xhat();
          sums.err2[static_cast<std::size_t>(i)].noalias() += e * e.transpose();
          sums.dev2[static_cast<std::size_t>(i)].noalias() +=
              dvec * dvec.transpose();
          sums.cross[static_cast<std::size_t>(i)].noalias() +=
              dvec * kf_err.transpose();
        }
      }
      if (in_window) ++sums.window_samples;
      const double gap = (run.network_average() - run.xhat()).norm() /
                         (1.0 + run.xhat().norm());
      sums.max_average_gap = std::max(sums.max_average_gap, gap);
    }
    ++sums.trials;
  }
  return sums;
}

inline MonteCarloResult run_monte_carlo(const DesignSet& designs,
                                        const TrialConfig& cfg,
                                        std::size_t trials,
                                        SteadyWindow window = {},
                                        unsigned threads = 0) {
  validate(cfg);
  if (trials < 1) throw Error(Errc::kConfig, "trials must be >= 1");
  window.end = std::min(window.end, cfg.horizon);
  window.begin = std::min(window.begin, window.end);
  const Eigen::Index n = designs.model.n();
  const Eigen::Index m = designs.model.m();
  const NoiseModel noise(designs.model, default_x0_cov(cfg, n));
  const auto prototype = make_strategy(cfg);

  const std::size_t chunks = (trials + kTrialsPerChunk - 1) / kTrialsPerChunk;
  std::vector<MonteCarloSums> parts(chunks);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t c = next++; c < chunks; c = next++) {
      const std::size_t first = c * kTrialsPerChunk;
      const std::size_t count = std::min(kTrialsPerChunk, trials - first);
      parts[c] = run_chunk(designs, noise, cfg, *prototype, first, count, window);
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, chunks));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  MonteCarloSums total;
  total.init(n, m, cfg.horizon);
  for (const auto& p : parts) total.merge(p);

  MonteCarloResult res;
  res.trials = total.trials;
  res.window = window;
  const double tn = static_cast<double>(total.trials);
  for (std::size_t k = 0; k < total.node_sq.size(); ++k) {
    res.node_mse.push_back(total.node_sq[k] / tn);
    res.kf_mse.push_back(total.kf_sq[k] / tn);
  }
  const double ws = static_cast<double>(total.window_samples);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto u = static_cast<std::size_t>(i);
    res.err_cov.push_back(total.err2[u] / ws);
    res.dev_cov.push_back(total.dev2[u] / ws);
    res.cross_cov.push_back(total.cross[u] / ws);
  }
  res.kf_cov = total.kf2 / ws;
  res.max_average_gap = total.max_average_gap;

  res.err_trace_se = Vector::Zero(m);
  res.dev_trace_se = Vector::Zero(m);
  res.cross_se.assign(static_cast<std::size_t>(m), Matrix::Zero(n, n));
  if (parts.size() >= 2) {
    const double nb = static_cast<double>(parts.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto u = static_cast<std::size_t>(i);
      double se = 0.0;
      double sd = 0.0;
      Matrix sc = Matrix::Zero(n, n);
      for (const auto& p : parts) {
        const double w = static_cast<double>(p.window_samples);
        const double de = p.err2[u].trace() / w - res.err_cov[u].trace();
        const double dd = p.dev2[u].trace() / w - res.dev_cov[u].trace();
        se += de * de;
        sd += dd * dd;
        sc += (p.cross[u] / w - res.cross_cov[u]).cwiseAbs2();
      }
      res.err_trace_se(i) = std::sqrt(se / (nb - 1.0) / nb);
      res.dev_trace_se(i) = std::sqrt(sd / (nb - 1.0) / nb);
      res.cross_se[u] = (sc / (nb - 1.0) / nb).cwiseSqrt();
    }
  }
  return res;
}

}  // namespace dkf
