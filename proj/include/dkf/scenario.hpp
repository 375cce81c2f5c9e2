#pragma once

// Scenario configuration (JSON), the two built-in examples, and the
// artifact writers used by the command-line tool.
//
// Config layout:
//   {
//     "name": "...",
//     "system": {"A": [[...]], "C": [[...]], "Q": [[...]], "R": [[...]]},
//     "graph":  {"kind": "ring", "weight": 1}
//             | {"kind": "custom", "adjacency": [[...]]}
//             | {"kind": "random_geometric", "radius": r, "seed": s, "side": 1},
//     "design": {"zeta": z, "stablePoles": [p, [re, im], ...],
//                "variant": "auto|alg1|alg2", "replaceOwn": false},
//     "sim":    {"horizon": 100, "trials": 1, "seed": 0,
//                "roundsPerSample": 1, "dropProb": 0}
//   }
// Matrices are row-major nested arrays. Every section except "system" is
// optional.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dkf/analysis.hpp"
#include "dkf/error.hpp"
#include "dkf/pipeline.hpp"
#include "dkf/plant.hpp"
#include "dkf/simulator.hpp"

namespace dkf {

using Json = nlohmann::json;

inline constexpr Eigen::Index kMaxConfigDim = 64;

struct GraphSpec {
  std::string kind = "ring";
  double weight = 1.0;
  Matrix adjacency;  ///< kind == "custom"
  double radius = 0.0;
  std::uint64_t seed = 0;
  double side = 1.0;
};

struct SimSpec {
  int horizon = 100;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  int rounds = 1;
  double drop = 0.0;
};

struct ScenarioConfig {
  std::string name = "scenario";
  Matrix a;
  Matrix c;
  Matrix q;
  Matrix r;
  GraphSpec graph;
  DesignOptions design;
  SimSpec sim;
  std::vector<Point2> sensors;  ///< heat example only, for reporting

  TrialConfig trial() const {
    TrialConfig t;
    t.horizon = sim.horizon;
    t.seed = sim.seed;
    t.rounds = sim.rounds;
    t.drop = sim.drop;
    return t;
  }
};

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

[[noreturn]] inline void config_error(const std::string& what) {
  throw Error(Errc::kConfig, what);
}

inline void check_keys(const Json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || item.key() == k;
    if (!ok) config_error("unknown key '" + item.key() + "' in " + where);
  }
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) config_error(where + " must be a number");
  return j.get<double>();
}

inline std::int64_t integer(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) config_error(where + " must be an integer");
  return j.get<std::int64_t>();
}

inline Matrix matrix(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) config_error(where + " must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (!j[0].is_array() || j[0].empty()) config_error(where + " rows must be non-empty arrays");
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  if (rows > kMaxConfigDim || cols > kMaxConfigDim) {
    config_error(where + " exceeds " + std::to_string(kMaxConfigDim) + "x" +
                 std::to_string(kMaxConfigDim));
  }
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      config_error(where + " is not rectangular");
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      out(i, k) = number(row[static_cast<std::size_t>(k)],
                         where + "[" + std::to_string(i) + "][" + std::to_string(k) + "]");
    }
  }
  return out;
}

inline Json to_json(const Matrix& x) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index k = 0; k < x.cols(); ++k) row.push_back(x(i, k));
    out.push_back(std::move(row));
  }
  return out;
}

inline Json to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Json to_json(const RowVector& v) { return to_json(Vector(v.transpose())); }

inline Json to_json(const std::vector<Complex>& z) {
  Json out = Json::array();
  for (const Complex& c : z) {
    if (c.imag() == 0.0) {
      out.push_back(c.real());
    } else {
      out.push_back(Json::array({c.real(), c.imag()}));
    }
  }
  return out;
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const Json& j) {
  using namespace detail;
  check_keys(j, "config", {"name", "system", "graph", "design", "sim"});
  ScenarioConfig cfg;
  if (j.contains("name")) {
    if (!j["name"].is_string()) config_error("name must be a string");
    cfg.name = j["name"].get<std::string>();
  }
  if (!j.contains("system")) config_error("missing 'system'");
  const Json& sys = j["system"];
  check_keys(sys, "system", {"A", "C", "Q", "R"});
  for (const char* key : {"A", "C", "Q", "R"}) {
    if (!sys.contains(key)) config_error(std::string("system.") + key + " is required");
  }
  cfg.a = matrix(sys["A"], "system.A");
  cfg.c = matrix(sys["C"], "system.C");
  cfg.q = matrix(sys["Q"], "system.Q");
  cfg.r = matrix(sys["R"], "system.R");

  if (j.contains("graph")) {
    const Json& g = j["graph"];
    check_keys(g, "graph", {"kind", "weight", "adjacency", "radius", "seed", "side"});
    if (g.contains("kind")) {
      if (!g["kind"].is_string()) config_error("graph.kind must be a string");
      cfg.graph.kind = g["kind"].get<std::string>();
    }
    if (cfg.graph.kind == "ring") {
      if (g.contains("weight")) cfg.graph.weight = number(g["weight"], "graph.weight");
    } else if (cfg.graph.kind == "custom") {
      if (!g.contains("adjacency")) config_error("graph.adjacency is required for kind custom");
      cfg.graph.adjacency = matrix(g["adjacency"], "graph.adjacency");
    } else if (cfg.graph.kind == "random_geometric") {
      if (!g.contains("radius")) config_error("graph.radius is required for kind random_geometric");
      cfg.graph.radius = number(g["radius"], "graph.radius");
      if (g.contains("seed")) {
        const auto s = integer(g["seed"], "graph.seed");
        if (s < 0) config_error("graph.seed must be >= 0");
        cfg.graph.seed = static_cast<std::uint64_t>(s);
      }
      if (g.contains("side")) cfg.graph.side = number(g["side"], "graph.side");
    } else {
      config_error("graph.kind must be ring, custom or random_geometric");
    }
  }

  if (j.contains("design")) {
    const Json& d = j["design"];
    check_keys(d, "design", {"zeta", "stablePoles", "variant", "replaceOwn"});
    if (d.contains("zeta") && !d["zeta"].is_null()) {
      cfg.design.zeta = number(d["zeta"], "design.zeta");
    }
    if (d.contains("stablePoles")) {
      const Json& p = d["stablePoles"];
      if (!p.is_array()) config_error("design.stablePoles must be an array");
      for (const Json& e : p) {
        if (e.is_number()) {
          cfg.design.poles.poles.emplace_back(e.get<double>(), 0.0);
        } else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
          cfg.design.poles.poles.emplace_back(e[0].get<double>(), e[1].get<double>());
        } else {
          config_error("design.stablePoles entries must be numbers or [re, im]");
        }
      }
    }
    if (d.contains("variant")) {
      if (!d["variant"].is_string()) config_error("design.variant must be a string");
      const std::string v = d["variant"].get<std::string>();
      if (v == "auto") cfg.design.variant = VariantChoice::kAuto;
      else if (v == "alg1") cfg.design.variant = VariantChoice::kAlg1;
      else if (v == "alg2") cfg.design.variant = VariantChoice::kAlg2;
      else config_error("design.variant must be auto, alg1 or alg2");
    }
    if (d.contains("replaceOwn")) {
      if (!d["replaceOwn"].is_boolean()) config_error("design.replaceOwn must be a boolean");
      cfg.design.replace_own = d["replaceOwn"].get<bool>();
    }
  }

  if (j.contains("sim")) {
    const Json& s = j["sim"];
    check_keys(s, "sim", {"horizon", "trials", "seed", "roundsPerSample", "dropProb"});
    if (s.contains("horizon")) cfg.sim.horizon = static_cast<int>(integer(s["horizon"], "sim.horizon"));
    if (s.contains("trials")) {
      const auto t = integer(s["trials"], "sim.trials");
      if (t < 1) config_error("sim.trials must be >= 1");
      cfg.sim.trials = static_cast<std::size_t>(t);
    }
    if (s.contains("seed")) {
      const auto v = integer(s["seed"], "sim.seed");
      if (v < 0) config_error("sim.seed must be >= 0");
      cfg.sim.seed = static_cast<std::uint64_t>(v);
    }
    if (s.contains("roundsPerSample")) {
      cfg.sim.rounds = static_cast<int>(integer(s["roundsPerSample"], "sim.roundsPerSample"));
    }
    if (s.contains("dropProb")) cfg.sim.drop = number(s["dropProb"], "sim.dropProb");
  }
  if (cfg.sim.horizon < 0) config_error("sim.horizon must be >= 0");
  if (cfg.sim.rounds < 1) config_error("sim.roundsPerSample must be >= 1");
  if (!(cfg.sim.drop >= 0.0 && cfg.sim.drop < 1.0)) config_error("sim.dropProb must be in [0, 1)");
  return cfg;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kConfig, "cannot open config '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw Error(Errc::kConfig, "cannot parse '" + path + "': " + e.what());
  }
  return parse_scenario(j);
}

inline Json scenario_to_json(const ScenarioConfig& cfg) {
  using detail::to_json;
  Json j;
  j["name"] = cfg.name;
  j["system"] = {{"A", to_json(cfg.a)}, {"C", to_json(cfg.c)},
                 {"Q", to_json(cfg.q)}, {"R", to_json(cfg.r)}};
  Json g = {{"kind", cfg.graph.kind}};
  if (cfg.graph.kind == "ring") g["weight"] = cfg.graph.weight;
  if (cfg.graph.kind == "custom") g["adjacency"] = to_json(cfg.graph.adjacency);
  if (cfg.graph.kind == "random_geometric") {
    g["radius"] = cfg.graph.radius;
    g["seed"] = cfg.graph.seed;
    g["side"] = cfg.graph.side;
  }
  j["graph"] = g;
  Json d;
  if (cfg.design.zeta) d["zeta"] = *cfg.design.zeta;
  if (!cfg.design.poles.poles.empty()) d["stablePoles"] = to_json(cfg.design.poles.poles);
  d["variant"] = cfg.design.variant == VariantChoice::kAuto   ? "auto"
                 : cfg.design.variant == VariantChoice::kAlg1 ? "alg1"
                                                              : "alg2";
  d["replaceOwn"] = cfg.design.replace_own;
  j["design"] = d;
  j["sim"] = {{"horizon", cfg.sim.horizon},
              {"trials", cfg.sim.trials},
              {"seed", cfg.sim.seed},
              {"roundsPerSample", cfg.sim.rounds},
              {"dropProb", cfg.sim.drop}};
  return j;
}

inline SystemModel scenario_model(const ScenarioConfig& cfg) {
  return build_system(cfg.a, cfg.c, cfg.q, cfg.r);
}

inline SensorGraph scenario_graph(const ScenarioConfig& cfg) {
  const Eigen::Index m = cfg.c.rows();
  if (cfg.graph.kind == "ring") return ring_graph(m, cfg.graph.weight);
  if (cfg.graph.kind == "custom") {
    if (cfg.graph.adjacency.rows() != m) {
      throw Error(Errc::kDimensionMismatch,
                  "graph.adjacency must be " + std::to_string(m) + "x" +
                      std::to_string(m));
    }
    return build_graph(cfg.graph.adjacency);
  }
  if (cfg.graph.kind == "random_geometric") {
    return random_geometric_graph(m, cfg.graph.radius, cfg.graph.seed, cfg.graph.side);
  }
  throw Error(Errc::kConfig, "unknown graph kind '" + cfg.graph.kind + "'");
}

inline DesignSet scenario_designs(const ScenarioConfig& cfg) {
  return build_designs(scenario_model(cfg), scenario_graph(cfg), cfg.design);
}

// ---------------------------------------------------------------------------
// Built-in examples

/// Two-state plant with one unstable mode, four sensors on a ring, zeta 0.5.
inline ScenarioConfig example1_scenario() {
  ScenarioConfig cfg;
  cfg.name = "example1";
  cfg.a.resize(2, 2);
  cfg.a << 0.9, 0.0, 0.0, 1.1;
  cfg.c.resize(4, 2);
  cfg.c << 1, 0, 0, 1, 1, 1, 1, -1;
  cfg.q = 0.25 * Matrix::Identity(2, 2);
  cfg.r = 4.0 * Matrix::Identity(4, 4);
  cfg.graph.kind = "ring";
  cfg.design.zeta = 0.5;
  cfg.sim.horizon = 100;
  cfg.sim.trials = 5000;
  cfg.sim.seed = 2024;
  return cfg;
}

struct HeatParams {
  Eigen::Index grid = 5;
  double alpha = 0.2;
  double h = 1.0;
  Eigen::Index sensors = 15;
  double radius = 2.5;   ///< communication radius, physical units
  std::uint64_t seed = 1;
  int max_seed_retries = 1000;
};

/// Heat diffusion on a 5 x 5 grid observed by 15 randomly placed sensors.
/// Placements are drawn from `seed`, `seed + 1`, ... until the disk graph is
/// connected.
inline ScenarioConfig example2_scenario(const HeatParams& p = {}) {
  ScenarioConfig cfg;
  cfg.name = "example2";
  const double side = static_cast<double>(p.grid - 1) * p.h;
  SensorGraph graph;
  std::uint64_t seed = p.seed;
  for (int attempt = 0;; ++attempt, ++seed) {
    if (attempt >= p.max_seed_retries) {
      throw Error(Errc::kDisconnected, "no connected sensor placement found");
    }
    cfg.sensors = random_points(p.sensors, side, seed);
    try {
      graph = geometric_graph(cfg.sensors, p.radius);
      break;
    } catch (const Error& e) {
      if (e.code() != Errc::kDisconnected) throw;
    }
  }
  const Eigen::Index n = p.grid * p.grid;
  cfg.a = heat_diffusion_matrix(p.grid, p.alpha, p.h);
  cfg.c.resize(p.sensors, n);
  for (Eigen::Index i = 0; i < p.sensors; ++i) {
    cfg.c.row(i) = heat_sensor_row(p.grid, p.h, cfg.sensors[static_cast<std::size_t>(i)]);
  }
  cfg.q = 0.2 * Matrix::Identity(n, n);
  cfg.r = 3.0 * Matrix::Identity(p.sensors, p.sensors);
  cfg.graph.kind = "custom";
  cfg.graph.adjacency = graph.adjacency;
  cfg.design.variant = VariantChoice::kAlg1;
  cfg.design.replace_own = true;
  cfg.sim.horizon = 100;
  cfg.sim.trials = 2000;
  cfg.sim.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------------------
// Artifacts

inline Json design_json(const DesignSet& d) {
  using detail::to_json;
  Json j;
  j["n"] = d.model.n();
  j["m"] = d.model.m();
  j["variant"] = variant_name(d.variant());
  j["messageLength"] = d.realization.b;
  j["replaceOwn"] = d.realization.replace_own;
  j["kalman"] = {{"sigma", to_json(d.kalman.sigma)},
                 {"ppost", to_json(d.kalman.ppost)},
                 {"K", to_json(d.kalman.k)},
                 {"closedLoopRadius", spectral_radius(d.kalman.acl)}};
  Json fs = Json::array();
  for (const Matrix& f : d.bundle.f) fs.push_back(to_json(f));
  Json gs = Json::array();
  for (const Matrix& g : d.bundle.g) gs.push_back(to_json(g));
  j["decomposition"] = {{"Lambda", to_json(d.bundle.lambda)},
                        {"lambdaPoly", d.bundle.lambda_poly},
                        {"beta", to_json(d.bundle.beta)},
                        {"S", to_json(d.bundle.s)},
                        {"sPoles", to_json(d.bundle.s_targets)},
                        {"phiS", d.bundle.s_poly},
                        {"F", fs},
                        {"G", gs},
                        {"fCondition", d.bundle.f_condition},
                        {"fFallback", d.bundle.f_fallback},
                        {"betaFallback", d.bundle.beta_fallback}};
  const ConsensusDesign& c = d.consensus;
  j["consensus"] = {{"zeta", c.zeta},
                    {"mahler", c.mahler},
                    {"bound", std::isinf(c.bound) ? Json("inf") : Json(c.bound)},
                    {"feasible", true},
                    {"gamma", to_json(c.gamma)},
                    {"radii", c.radii},
                    {"mareIterations", c.mare_iterations},
                    {"mareMargin", c.mare_margin}};
  j["graph"] = {{"adjacency", to_json(d.graph.adjacency)},
                {"laplacianSpectrum", to_json(d.graph.mu)}};
  return j;
}

/// Human-readable feasibility summary.
inline std::string feasibility_report(const DesignSet& d) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "n = " << d.model.n() << ", m = " << d.model.m() << ", variant "
     << variant_name(d.variant()) << " (message length " << d.realization.b
     << ")\n";
  os << "mahler measure  " << d.consensus.mahler << "\n";
  os << "graph bound     " << d.consensus.bound << "\n";
  os << "zeta            " << d.consensus.zeta << "\n";
  os << "mode radii     ";
  for (double r : d.consensus.radii) os << " " << r;
  os << "\nfeasible        yes\n";
  return os.str();
}

inline Json covariance_json(const CovarianceReport& rep,
                            const std::vector<PerformanceRatio>& ratios) {
  using detail::to_json;
  Json j;
  j["perNodeTrace"] = to_json(rep.per_node_trace);
  j["wbarTrace"] = rep.wbar_trace();
  j["ppostTrace"] = rep.ppost.trace();
  j["ppost"] = to_json(rep.ppost);
  Json blocks = Json::array();
  for (Eigen::Index i = 0; i < rep.per_node_trace.size(); ++i) {
    blocks.push_back(to_json(rep.node_block(i)));
  }
  j["nodeBlocks"] = blocks;
  Json rho = Json::array();
  for (const auto& r : ratios) {
    rho.push_back({{"local", r.local ? Json(*r.local) : Json(nullptr)},
                   {"distributed", r.distributed}});
  }
  j["ratios"] = rho;
  return j;
}

inline void write_trace_csv(const SimulationTrace& tr, std::ostream& os) {
  const Eigen::Index n = tr.x.front().size();
  const std::size_t m = tr.xbreve.front().size();
  os << "k";
  for (Eigen::Index s = 1; s <= n; ++s) os << ",x_" << s;
  for (Eigen::Index s = 1; s <= n; ++s) os << ",xhat_" << s;
  for (std::size_t i = 1; i <= m; ++i) {
    for (Eigen::Index s = 1; s <= n; ++s) os << ",node" << i << "_xbreve_" << s;
  }
  os << "\n" << std::setprecision(12);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    os << k;
    for (Eigen::Index s = 0; s < n; ++s) os << "," << tr.x[k](s);
    for (Eigen::Index s = 0; s < n; ++s) os << "," << tr.xhat[k](s);
    for (const Vector& xb : tr.xbreve[k]) {
      for (Eigen::Index s = 0; s < n; ++s) os << "," << xb(s);
    }
    os << "\n";
  }
}

/// Per-step mean-square error (summed over states) of the centralized filter
/// and every node.
inline void write_mse_csv(const MonteCarloResult& mc, std::ostream& os) {
  const Eigen::Index m = mc.node_mse.front().rows();
  os << "k,kf";
  for (Eigen::Index i = 1; i <= m; ++i) os << ",node" << i;
  os << "\n" << std::setprecision(12);
  for (std::size_t k = 0; k < mc.node_mse.size(); ++k) {
    os << k << "," << mc.kf_mse[k].sum();
    for (Eigen::Index i = 0; i < m; ++i) os << "," << mc.node_mse[k].row(i).sum();
    os << "\n";
  }
}

}  // namespace dkf
