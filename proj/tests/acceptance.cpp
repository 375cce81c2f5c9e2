// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only N,...] [--known-unattainable N,...]
//
// Exit status is 1 when any criterion fails, except those listed with
// --known-unattainable; their FAIL line is still printed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dkf/analysis.hpp"
#include "dkf/scenario.hpp"
#include "dkf/simulator.hpp"
#include "test_util.hpp"

using namespace dkf;

namespace {

namespace tolerance {
constexpr double kLossless = 1e-7;
constexpr double kImpulse = 1e-7;
constexpr double kAverage = 1e-8;
constexpr double kCovarianceRel = 0.10;
constexpr double kRho1Lo = 1.8;
constexpr double kRho1Hi = 2.1;
constexpr double kImprovement = 0.4;
constexpr double kRoundsRatio = 0.2;
constexpr double kDare = 1e-9;
constexpr double kDlyap = 1e-6;
constexpr double kPolePlace = 1e-6;
constexpr double kSplitSpectrum = 1e-8;
constexpr double kSplitReconstruct = 1e-8;
}  // namespace tolerance

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

DesignSet ring_designs(VariantChoice v) {
  DesignOptions opt;
  opt.zeta = 0.5;
  opt.variant = v;
  return build_designs(testing::ring_example_model(), ring_graph(4), opt);
}

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

Outcome lossless() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  auto check = [&](const SystemModel& model, std::uint64_t seed) {
    const KalmanDesign kf = design_kalman(model);
    const DecompositionBundle b = build_decomposition(kf, split_model(model));
    worst = std::max(worst, verify_lossless(b, model, kf, 200, seed, INFINITY).worst_ratio);
  };
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 5);
    const Eigen::Index m = testing::uniform_int(rng, 1, 6);
    check(testing::random_system(n, m, rng), 1000 + t);
  }
  check(testing::ring_example_model(), 7);
  return {worst <= tolerance::kLossless, "51 systems, worst ratio " + fmt(worst)};
}

Outcome reduction() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Eigen::Index m = testing::uniform_int(rng, n + 1, 6);
    const SystemModel model = testing::random_system(n, m, rng);
    const KalmanDesign kf = design_kalman(model);
    const DecompositionBundle b = build_decomposition(kf, split_model(model));
    const ReducedBundle r = reduce_model(b);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto full = impulse_full(b, i, 50);
      const auto red = impulse_reduced(r, b.s, b.beta, i, 50);
      for (int k = 0; k < 50; ++k) {
        worst = std::max(worst, (full[k] - red[k]).norm() / (1.0 + full[k].norm()));
      }
    }
  }
  return {worst <= tolerance::kImpulse, "20 systems, worst impulse gap " + fmt(worst)};
}

Outcome exact_average() {
  double worst = 0.0;
  for (VariantChoice v : {VariantChoice::kAlg1, VariantChoice::kAlg2}) {
    const DesignSet d = ring_designs(v);
    for (double drop : {0.0, 0.3}) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TrialConfig cfg;
        cfg.horizon = 100;
        cfg.seed = seed;
        cfg.drop = drop;
        const SimulationTrace tr = run_trial(d, cfg);
        for (std::size_t k = 0; k < tr.size(); ++k) {
          Vector avg = Vector::Zero(tr.xhat[k].size());
          for (const Vector& xb : tr.xbreve[k]) avg += xb;
          avg /= static_cast<double>(tr.xbreve[k].size());
          worst = std::max(worst, (avg - tr.xhat[k]).norm());
        }
      }
    }
  }
  return {worst <= tolerance::kAverage, "2 variants x 2 strategies x 20 seeds, worst gap " + fmt(worst)};
}

Outcome gain_feasibility() {
  std::mt19937_64 rng(4);
  int designed = 0;
  int rejected = 0;
  int silent = 0;
  double worst = 0.0;
  while (designed < 100) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Eigen::Index m = testing::uniform_int(rng, 2, 8);
    const SystemModel model = testing::random_system(n, m, rng, 0.3, 1.6);
    const SensorGraph g = testing::random_connected_graph(m, rng, 0.6);
    const KalmanDesign kf = design_kalman(model);
    const DecompositionBundle b = build_decomposition(kf, split_model(model));
    if (check_condition(b.s, g).feasible) {
      worst = std::max(worst, design_consensus(b.s, g).worst_radius());
      ++designed;
      continue;
    }
    try {
      design_consensus(b.s, g);
      ++silent;
    } catch (const Error& e) {
      if (e.code() == Errc::kInfeasibleCondition) {
        ++rejected;
      } else {
        ++silent;
      }
    }
  }
  // Infeasible by construction: mahler 4 on rings of 4 or more nodes, bound <= 3.
  for (Eigen::Index m = 4; m <= 8; ++m) {
    Matrix a(2, 2);
    a << 4.0, 0.0, 0.0, 0.5;
    const Matrix c = testing::random_matrix(m, 2, rng);
    try {
      build_designs(build_system(a, c, Matrix::Identity(2, 2), Matrix::Identity(m, m)),
                    ring_graph(m));
      ++silent;
    } catch (const Error& e) {
      if (e.code() == Errc::kInfeasibleCondition) {
        ++rejected;
      } else {
        ++silent;
      }
    }
  }
  return {worst < 1.0 && silent == 0,
          "100 feasible pairs, worst radius " + fmt(worst) + "; " + std::to_string(rejected) +
              " infeasible pairs rejected, " + std::to_string(silent) + " not rejected"};
}

Outcome example1_covariance() {
  const ScenarioConfig cfg = example1_scenario();
  const DesignSet d = scenario_designs(cfg);
  const CovarianceReport rep = asymptotic_covariance(d);
  const MonteCarloResult mc = run_monte_carlo(d, cfg.trial(), cfg.sim.trials, {50, 100});
  double worst = 0.0;
  for (Eigen::Index i = 0; i < d.model.m(); ++i) {
    const Vector analytic = rep.node_block(i).diagonal();
    const Vector empirical = mc.steady_node_mse(i);
    worst = std::max(worst, (empirical.array() / analytic.array() - 1.0).abs().maxCoeff());
  }
  return {worst <= tolerance::kCovarianceRel,
          std::to_string(cfg.sim.trials) + " trials, worst relative gap " + fmt(worst)};
}

/// Example 2 design, shared with the message-length check.
const DesignSet& example2_designs() {
  static const DesignSet d = scenario_designs(example2_scenario());
  return d;
}

Outcome heat_reproduction() {
  const ScenarioConfig cfg = example2_scenario();
  const DesignSet& d = example2_designs();
  const CovarianceReport rep = asymptotic_covariance(d);
  const auto ratios = performance_ratios(rep, local_kf_baselines(d.model), d.kalman.ppost);
  const MonteCarloResult mc = run_monte_carlo(d, cfg.trial(), cfg.sim.trials, {50, 100});
  const double base = d.kalman.ppost.trace();
  bool ordered = true;
  double lo = INFINITY;
  double hi = -INFINITY;
  double improvement = 0.0;
  double mc_gap = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!ratios[i].local) {
      ordered = false;
      continue;
    }
    const double r1 = *ratios[i].local;
    const double r2 = ratios[i].distributed;
    const double r2_mc = mc.err_cov[i].trace() / base;
    ordered = ordered && r2 < r1 && r2_mc < r1;
    lo = std::min(lo, r1);
    hi = std::max(hi, r1);
    improvement += r1 - r2;
    mc_gap = std::max(mc_gap, std::abs(r2_mc / r2 - 1.0));
  }
  improvement /= static_cast<double>(ratios.size());
  const bool in_range = lo >= tolerance::kRho1Lo && hi <= tolerance::kRho1Hi;
  const bool improved = improvement >= tolerance::kImprovement;
  std::ostringstream os;
  os << "rho2<rho1 " << (ordered ? "yes" : "no") << "; rho1 in [" << fmt(lo) << ", " << fmt(hi)
     << "] " << (in_range ? "inside" : "outside") << " [1.8, 2.1]; mean improvement "
     << fmt(improvement) << (improved ? " >= 0.4" : " < 0.4") << "; MC vs analytic rho2 "
     << fmt(mc_gap);
  return {ordered && in_range && improved, os.str()};
}

Outcome rounds_limit() {
  std::vector<double> alg1;
  std::vector<double> alg2;
  const DesignSet d1 = ring_designs(VariantChoice::kAlg1);
  const DesignSet d2 = ring_designs(VariantChoice::kAlg2);
  for (int r : {1, 2, 4, 8}) {
    alg1.push_back(asymptotic_covariance(d1, r).wbar_trace());
    alg2.push_back(asymptotic_covariance(d2, r).wbar_trace());
  }
  bool decreasing = true;
  for (std::size_t k = 1; k < alg1.size(); ++k) decreasing = decreasing && alg1[k] < alg1[k - 1];
  const bool small = alg1.back() <= tolerance::kRoundsRatio * alg1.front();
  std::ostringstream os;
  os << "alg1 tr(Wbar) " << fmt(alg1[0]) << " " << fmt(alg1[1]) << " " << fmt(alg1[2]) << " "
     << fmt(alg1[3]) << " (ratio " << fmt(alg1[3] / alg1[0]) << "); alg2 " << fmt(alg2[0]) << " "
     << fmt(alg2[3]);
  return {decreasing && small, os.str()};
}

Eigen::Index payload_length(const DesignSet& d) {
  const NoiseModel noise(d.model, Matrix::Identity(d.model.n(), d.model.n()));
  TrialConfig cfg;
  cfg.horizon = 1;
  DistributedRun run(d, noise, cfg, static_strategy());
  run.step();
  Eigen::Index len = run.nodes().front().msg.size();
  for (const NodeState& node : run.nodes()) {
    if (node.msg.size() != len) return -1;
  }
  return len;
}

Outcome message_length() {
  std::vector<std::pair<std::string, DesignSet>> cases;
  cases.emplace_back("ring/alg1", ring_designs(VariantChoice::kAlg1));
  cases.emplace_back("ring/alg2", ring_designs(VariantChoice::kAlg2));
  cases.emplace_back("ring/auto", ring_designs(VariantChoice::kAuto));
  ScenarioConfig ex1 = example1_scenario();
  cases.emplace_back("example1", scenario_designs(ex1));
  std::mt19937_64 rng(8);
  for (int t = 0; t < 6; ++t) {
    const Eigen::Index n = testing::uniform_int(rng, 1, 4);
    const Eigen::Index m = testing::uniform_int(rng, 2, 6);
    try {
      cases.emplace_back("random", build_designs(testing::random_system(n, m, rng, 0.3, 1.2),
                                                 testing::random_connected_graph(m, rng, 0.8)));
    } catch (const Error& e) {
      if (e.code() != Errc::kInfeasibleCondition) throw;
    }
  }
  bool ok = true;
  std::ostringstream os;
  auto check = [&](const std::string& name, const DesignSet& d, bool is_auto) {
    const Eigen::Index n = d.model.n();
    const Eigen::Index m = d.model.m();
    const Eigen::Index want = d.variant() == Variant::kAlg1 ? m : n;
    const Eigen::Index got = payload_length(d);
    ok = ok && got == want && d.realization.b == want;
    if (is_auto) ok = ok && got == std::min(m, n);
    if (name != "random") os << name << " " << got << " ";
  };
  for (const auto& [name, d] : cases) check(name, d, name != "ring/alg1" && name != "ring/alg2");
  check("example2/alg1", example2_designs(), false);
  os << "(" << cases.size() - 4 << " random auto cases)";
  return {ok, os.str()};
}

Outcome numerics_properties() {
  std::mt19937_64 rng(9);
  double dare = 0.0;
  double dlyap = 0.0;
  double place = 0.0;
  double spec = 0.0;
  double recon = 0.0;
  for (int t = 0; t < 200; ++t) {
    {
      const SystemModel s = testing::random_system(testing::uniform_int(rng, 1, 5),
                                                   testing::uniform_int(rng, 1, 6), rng, 0.2, 1.5);
      const Matrix sigma = solve_dare(s.a, s.c, s.q, s.r);
      dare = std::max(dare, dare_residual(s.a, s.c, s.q, s.r, sigma).norm() / (1.0 + sigma.norm()));
    }
    {
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
      dlyap = std::max(dlyap, (solve_dlyap(f, v) - series).norm() / (1.0 + series.norm()));
    }
    {
      const Eigen::Index n = testing::uniform_int(rng, 1, 6);
      const Matrix x = testing::random_matrix(n, n, rng);
      const Vector p = testing::random_matrix(n, 1, rng);
      std::vector<Complex> targets;
      for (Eigen::Index i = 0; i < n; ++i) targets.emplace_back(testing::uniform(rng, -0.9, 0.9), 0.0);
      const Vector k = pole_place(x, p, targets);
      place = std::max(place, spectrum_distance(eigenvalues(x + p * k.transpose()), targets));
    }
    {
      const Eigen::Index n = testing::uniform_int(rng, 1, 6);
      const Matrix a = testing::random_dynamics(n, rng, 0.3, 1.6);
      const SpectralSplit sp = spectral_split(a);
      const Eigen::Index nu = sp.unstable.rows();
      Matrix blk = Matrix::Zero(n, n);
      blk.topLeftCorner(nu, nu) = sp.unstable;
      blk.bottomRightCorner(n - nu, n - nu) = sp.stable;
      const ComplexVector ea = eigenvalues(a);
      spec = std::max(spec, spectrum_distance(eigenvalues(blk),
                                              std::vector<Complex>(ea.data(), ea.data() + n)));
      recon = std::max(recon, (sp.v * blk * sp.v_inv - a).norm() / a.norm());
    }
  }
  const bool ok = dare <= tolerance::kDare && dlyap <= tolerance::kDlyap &&
                  place <= tolerance::kPolePlace && spec <= tolerance::kSplitSpectrum &&
                  recon <= tolerance::kSplitReconstruct;
  return {ok, "200 each: dare " + fmt(dare) + ", dlyap " + fmt(dlyap) + ", pole place " +
                  fmt(place) + ", split spectrum " + fmt(spec) + ", split reconstruction " +
                  fmt(recon)};
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::set<int> known;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--only") {
      only = parse_list(argv[i + 1]);
    } else if (flag == "--known-unattainable") {
      known = parse_list(argv[i + 1]);
    } else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"losslessness", lossless},
      {"model reduction", reduction},
      {"exact average", exact_average},
      {"gain feasibility", gain_feasibility},
      {"example1 covariance", example1_covariance},
      {"heat reproduction", heat_reproduction},
      {"rounds limit", rounds_limit},
      {"message length", message_length},
      {"numerics properties", numerics_properties},
  };
  int unexpected = 0;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    const int id = static_cast<int>(c) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[c].first << ": "
              << o.detail << " [" << fmt(secs) << " s]";
    if (!o.pass && known.count(id)) std::cout << " (known unattainable)";
    std::cout << std::endl;
    if (!o.pass && !known.count(id)) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}
