// dkf: design, simulate and analyze distributed steady-state Kalman filters.
//
//   dkf check     --config cfg.json
//   dkf design    --config cfg.json [--out DIR]
//   dkf simulate  --config cfg.json --out DIR [--trials N] [--seed S] [--rounds R] [--drop P]
//   dkf reproduce example1|example2 [--out DIR] [--trials N] [--seed S]
//
// Exit status: 0 ok, 2 bad input, 3 infeasible design, 4 numerical failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dkf/analysis.hpp"
#include "dkf/scenario.hpp"
#include "dkf/simulator.hpp"

namespace fs = std::filesystem;
using namespace dkf;

namespace {

struct Overrides {
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::optional<double> drop;

  void apply(ScenarioConfig& cfg) const {
    if (trials) {
      if (*trials < 1) throw Error(Errc::kConfig, "--trials must be >= 1");
      cfg.sim.trials = *trials;
    }
    if (seed) cfg.sim.seed = *seed;
    if (rounds) {
      if (*rounds < 1) throw Error(Errc::kConfig, "--rounds must be >= 1");
      cfg.sim.rounds = *rounds;
    }
    if (drop) {
      if (!(*drop >= 0.0 && *drop < 1.0)) throw Error(Errc::kConfig, "--drop must be in [0, 1)");
      cfg.sim.drop = *drop;
    }
  }
};

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::kConfig, "cannot create output directory '" + dir + "'");
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(Errc::kConfig, "cannot write '" + p.string() + "'");
  return out;
}

void write_json(const fs::path& p, const Json& j) {
  auto out = open_out(p);
  out << j.dump(2) << "\n";
}

int cmd_check(const std::string& config) {
  const ScenarioConfig cfg = load_scenario(config);
  const DesignSet d = scenario_designs(cfg);
  std::cout << feasibility_report(d);
  return 0;
}

int cmd_design(const std::string& config, const std::string& out) {
  const ScenarioConfig cfg = load_scenario(config);
  const DesignSet d = scenario_designs(cfg);
  std::cout << feasibility_report(d);
  const fs::path dir = prepare_dir(out);
  write_json(dir / "design.json", design_json(d));
  std::cout << "wrote " << (dir / "design.json").string() << "\n";
  return 0;
}

/// Design, one recorded trial, Monte Carlo and analytic covariance.
struct RunArtifacts {
  DesignSet designs;
  SimulationTrace trace;
  MonteCarloResult mc;
  CovarianceReport cov;
  std::vector<PerformanceRatio> ratios;
};

RunArtifacts run_all(const ScenarioConfig& cfg) {
  RunArtifacts a{scenario_designs(cfg), {}, {}, {}, {}};
  const TrialConfig trial = cfg.trial();
  a.trace = run_trial(a.designs, trial);
  SteadyWindow window;
  window.end = cfg.sim.horizon;
  window.begin = cfg.sim.horizon / 2;
  a.mc = run_monte_carlo(a.designs, trial, cfg.sim.trials, window);
  a.cov = asymptotic_covariance(a.designs, cfg.sim.rounds);
  a.ratios = performance_ratios(a.cov, local_kf_baselines(a.designs.model),
                                a.designs.kalman.ppost);
  return a;
}

Json covariance_with_empirical(const RunArtifacts& a, const ScenarioConfig& cfg) {
  Json j = covariance_json(a.cov, a.ratios);
  Json emp = Json::array();
  for (Eigen::Index i = 0; i < a.designs.model.m(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    emp.push_back({{"trace", a.mc.err_cov[u].trace()},
                   {"stderr", a.mc.err_trace_se(i)},
                   {"diag", detail::to_json(Vector(a.mc.err_cov[u].diagonal()))}});
  }
  j["empirical"] = {{"trials", a.mc.trials},
                    {"windowBegin", a.mc.window.begin},
                    {"windowEnd", a.mc.window.end},
                    {"nodes", emp}};
  j["roundsPerSample"] = cfg.sim.rounds;
  j["analyticAssumesStaticLinks"] = cfg.sim.drop > 0.0;
  return j;
}

void write_run(const RunArtifacts& a, const ScenarioConfig& cfg, const fs::path& dir) {
  write_json(dir / "design.json", design_json(a.designs));
  {
    auto out = open_out(dir / "trace.csv");
    write_trace_csv(a.trace, out);
  }
  {
    auto out = open_out(dir / "mse.csv");
    write_mse_csv(a.mc, out);
  }
  write_json(dir / "covariance.json", covariance_with_empirical(a, cfg));
}

int cmd_simulate(const std::string& config, const std::string& out,
                 const Overrides& ov) {
  ScenarioConfig cfg = load_scenario(config);
  ov.apply(cfg);
  const RunArtifacts a = run_all(cfg);
  const fs::path dir = prepare_dir(out);
  write_run(a, cfg, dir);
  std::cout << "variant " << variant_name(a.designs.variant()) << ", "
            << cfg.sim.trials << " trials, horizon " << cfg.sim.horizon
            << "\nwrote trace.csv, mse.csv, covariance.json, design.json to "
            << dir.string() << "\n";
  return 0;
}

void print_node_table(const RunArtifacts& a) {
  const Eigen::Index m = a.designs.model.m();
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "node  analytic tr(W_ii)  monte-carlo  (stderr)\n";
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto u = static_cast<std::size_t>(i);
    std::cout << std::setw(4) << i + 1 << "  " << std::setw(17)
              << a.cov.per_node_trace(i) << "  " << std::setw(11)
              << a.mc.err_cov[u].trace() << "  (" << a.mc.err_trace_se(i) << ")\n";
  }
}

int cmd_reproduce(const std::string& which, const std::optional<std::string>& out,
                  const Overrides& ov) {
  ScenarioConfig cfg;
  if (which == "example1") {
    cfg = example1_scenario();
  } else if (which == "example2") {
    cfg = example2_scenario();
  } else {
    throw Error(Errc::kConfig, "unknown example '" + which + "'");
  }
  ov.apply(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const RunArtifacts a = run_all(cfg);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << feasibility_report(a.designs);
  std::cout << "trials " << cfg.sim.trials << ", horizon " << cfg.sim.horizon
            << ", seed " << cfg.sim.seed << "\n";
  print_node_table(a);
  std::cout << "centralized tr(P) = " << a.designs.kalman.ppost.trace() << "\n";
  if (which == "example2") {
    const double base = a.designs.kalman.ppost.trace();
    double improvement = 0.0;
    std::cout << "sensor  rho_1 (local)  rho_2 (analytic)  rho_2 (monte-carlo)  improvement\n";
    for (std::size_t i = 0; i < a.ratios.size(); ++i) {
      const auto& r = a.ratios[i];
      const double local = r.local.value_or(std::nan(""));
      improvement += local - r.distributed;
      std::cout << std::setw(6) << i + 1 << "  " << std::setw(13) << local << "  "
                << std::setw(16) << r.distributed << "  " << std::setw(19)
                << a.mc.err_cov[i].trace() / base << "  " << std::setw(11)
                << local - r.distributed << "\n";
    }
    std::cout << "mean improvement " << improvement / static_cast<double>(a.ratios.size())
              << "\n";
  }
  std::cout << "elapsed " << std::setprecision(1) << secs << " s\n";
  if (out) {
    const fs::path dir = prepare_dir(*out);
    write_run(a, cfg, dir);
    write_json(dir / "scenario.json", scenario_to_json(cfg));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed steady-state Kalman filter toolkit"};
  app.require_subcommand(1);

  std::string config;
  std::string out = ".";
  std::optional<std::string> reproduce_out;
  std::string example;
  Overrides ov;

  auto* check = app.add_subcommand("check", "feasibility verdict only");
  check->add_option("--config", config, "scenario JSON")->required();

  auto* design = app.add_subcommand("design", "write design.json and a feasibility report");
  design->add_option("--config", config, "scenario JSON")->required();
  design->add_option("--out", out, "output directory");

  const auto add_overrides = [&ov](CLI::App* sub) {
    sub->add_option("--trials", ov.trials, "Monte-Carlo trials");
    sub->add_option("--seed", ov.seed, "master seed");
    sub->add_option("--rounds", ov.rounds, "consensus rounds per sample");
    sub->add_option("--drop", ov.drop, "link failure probability");
  };

  auto* simulate = app.add_subcommand("simulate", "simulate and analyze a scenario");
  simulate->add_option("--config", config, "scenario JSON")->required();
  simulate->add_option("--out", out, "output directory")->required();
  add_overrides(simulate);

  auto* reproduce = app.add_subcommand("reproduce", "run a built-in example");
  reproduce->add_option("example", example, "example1 or example2")->required();
  reproduce->add_option("--out", reproduce_out, "output directory");
  add_overrides(reproduce);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*check) return cmd_check(config);
    if (*design) return cmd_design(config, out);
    if (*simulate) return cmd_simulate(config, out, ov);
    if (*reproduce) return cmd_reproduce(example, reproduce_out, ov);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
