#pragma once

/// @file
/// Experiment driver behind the command-line tool: case construction,
/// certification, simulation and run summaries.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ofo/certify.hpp"
#include "ofo/closed_loop.hpp"
#include "ofo/json_io.hpp"
#include "ofo/oracle.hpp"
#include "ofo/powergrid.hpp"
#include "ofo/saddleflow.hpp"

namespace ofo {

struct RunConfig {
  std::string case_name = "ieee9";
  std::string mode = "soft";
  double eta = 4.0;
  double mu = 4.0;
  double gamma = 1e-2;
  std::optional<double> epsilon;  // case default when unset
  bool certify = false;
  double rho = 1e-3;
  bool bisect = false;
  double rho_min = 1e-4;
  double rho_max = 0.5;
  int omega_points = 400;
  bool unified_lipschitz = false;
  std::optional<double> t_end;  // case default when unset
  std::optional<double> dt;     // derived from the loop when unset
  bool oracle = true;
  int oracle_stride = 10;
  long seed = 0;
  bool require_cert = false;
  std::string csv, summary, cert;
};

/// Merges a JSON object into `cfg`; unknown keys are rejected.
inline void merge_config(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw DimensionError("config: expected a JSON object");
  static const std::set<std::string> known = {
      "case", "mode", "eta", "mu", "gamma", "eps", "certify", "rho", "bisect",
      "rho_min", "rho_max", "omega_points", "unified_lipschitz", "t_end", "dt",
      "oracle", "oracle_stride", "seed", "require_cert", "csv", "summary", "cert"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw DimensionError("config: unknown key '" + it.key() + "'");
  }
  try {
    if (j.contains("case")) cfg.case_name = j["case"].get<std::string>();
    if (j.contains("mode")) cfg.mode = j["mode"].get<std::string>();
    if (j.contains("eta")) cfg.eta = j["eta"].get<double>();
    if (j.contains("mu")) cfg.mu = j["mu"].get<double>();
    if (j.contains("gamma")) cfg.gamma = j["gamma"].get<double>();
    if (j.contains("eps")) cfg.epsilon = j["eps"].get<double>();
    if (j.contains("certify")) cfg.certify = j["certify"].get<bool>();
    if (j.contains("rho")) cfg.rho = j["rho"].get<double>();
    if (j.contains("bisect")) cfg.bisect = j["bisect"].get<bool>();
    if (j.contains("rho_min")) cfg.rho_min = j["rho_min"].get<double>();
    if (j.contains("rho_max")) cfg.rho_max = j["rho_max"].get<double>();
    if (j.contains("omega_points")) cfg.omega_points = j["omega_points"].get<int>();
    if (j.contains("unified_lipschitz")) cfg.unified_lipschitz = j["unified_lipschitz"].get<bool>();
    if (j.contains("t_end")) cfg.t_end = j["t_end"].get<double>();
    if (j.contains("dt")) cfg.dt = j["dt"].get<double>();
    if (j.contains("oracle")) cfg.oracle = j["oracle"].get<bool>();
    if (j.contains("oracle_stride")) cfg.oracle_stride = j["oracle_stride"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<long>();
    if (j.contains("require_cert")) cfg.require_cert = j["require_cert"].get<bool>();
    if (j.contains("csv")) cfg.csv = j["csv"].get<std::string>();
    if (j.contains("summary")) cfg.summary = j["summary"].get<std::string>();
    if (j.contains("cert")) cfg.cert = j["cert"].get<std::string>();
  } catch (const json::exception& e) {
    throw DimensionError(std::string("config: ") + e.what());
  }
}

inline void validate_config(const RunConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DimensionError(std::string("config: ") + name + " must be positive");
    }
  };
  (void)parse_mode(c.mode);
  positive(c.eta, "eta");
  positive(c.mu, "mu");
  if (!(c.gamma >= 0.0)) throw DimensionError("config: gamma must be >= 0");
  if (c.epsilon) positive(*c.epsilon, "eps");
  positive(c.rho, "rho");
  positive(c.rho_min, "rho_min");
  if (!(c.rho_max > c.rho_min)) throw DimensionError("config: rho_max must exceed rho_min");
  if (c.omega_points < 2) throw DimensionError("config: omega_points must be >= 2");
  if (c.t_end) positive(*c.t_end, "t_end");
  if (c.dt) positive(*c.dt, "dt");
  if (c.oracle_stride < 1) throw DimensionError("config: oracle_stride must be >= 1");
  if (c.certify && parse_mode(c.mode) == OpfMode::none) {
    throw DimensionError("config: mode 'none' has no controller to certify");
  }
}

/// Where an output lives: y1 (channel 1) or y2 (channel 2), row index.
struct OutputRef {
  int channel = 2;
  Index index = 0;
};

struct CaseSetup {
  std::string name;
  OpfMode mode;
  ClosedLoop loop;
  Scenario scenario;
  bool freeze_controller = false;
  std::vector<OutputRef> limited;  // constrained outputs
  VectorXd base_lo, base_hi;
  std::vector<LineLimitEvent> limit_events;
  OutputRef freq;  // regulated output
};

namespace detail {

inline double output_value(const TrajectoryLog& log, std::size_t k, OutputRef r) {
  return r.channel == 1 ? log.y1[k][r.index] : log.y2[k][r.index];
}

inline CaseSetup grid_setup(const std::string& name, const GridModel& grid,
                            const Ieee9Script& script, const RunConfig& cfg) {
  const OpfMode mode = parse_mode(cfg.mode);
  OpfParams prm;
  prm.eta = cfg.eta;
  prm.mu = cfg.mu;
  prm.gamma = cfg.gamma;
  prm.epsilon = cfg.epsilon.value_or(1e-2);
  const OpfMode built = mode == OpfMode::none ? OpfMode::soft : mode;
  ClosedLoop loop = build_dcopf(grid, built, prm, script.line_events);
  const double t_end = cfg.t_end.value_or(script.t_end);
  const double dt = cfg.dt.value_or(default_step(loop));
  Scenario sc = stationary_start_scenario(loop, script.w, t_end, dt);
  const Index L = grid.n_line();
  std::vector<OutputRef> limited;
  for (Index l = 0; l < L; ++l) limited.push_back({built == OpfMode::soft ? 1 : 2, l});
  const OutputRef freq{2, built == OpfMode::soft ? 0 : L};
  return {name,  mode,          std::move(loop), std::move(sc), mode == OpfMode::none,
          limited, grid.p_min(), grid.p_max(),    script.line_events, freq};
}

}  // namespace detail

/// Scalar plant ẋ = -x + u + w with y_lim = y_reg = x, cost ½u²,
/// limit |y_lim| ≤ 0.5 and w = 0.3 + 0.2 cos(0.5 t).
///
/// soft:        h = soft box on y_lim, g = {0} on y_reg.
/// approximate: g = box × {0} on (y_lim, y_reg); with γ = 0 the output
///              map has rank one for two constraints.
inline CaseSetup toy_scalar_setup(const RunConfig& cfg) {
  const OpfMode mode = parse_mode(cfg.mode);
  const OpfMode built = mode == OpfMode::none ? OpfMode::soft : mode;
  const MatrixXd one = MatrixXd::Ones(1, 1), zero = MatrixXd::Zero(1, 1);
  const ProxSpec f = ProxSpec::quadratic(one, VectorXd::Zero(1));
  const VectorXd lo = VectorXd::Constant(1, -0.5), hi = VectorXd::Constant(1, 0.5);
  const double eps = cfg.epsilon.value_or(1.0);
  std::optional<ClosedLoop> loop;
  if (built == OpfMode::soft) {
    StateSpace sys(-one, one, one, one, one, zero, zero);
    loop.emplace(std::move(sys),
                 make_delta_map(f, ProxSpec::soft_box(cfg.eta, lo, hi),
                                ProxSpec::zero_set(1), cfg.mu),
                 eps);
  } else {
    StateSpace sys(-one, one, one, MatrixXd::Zero(0, 1), MatrixXd::Ones(2, 1),
                   MatrixXd::Zero(0, 1), MatrixXd::Zero(2, 1));
    const ProxSpec g =
        ProxSpec::composite({ProxSpec::box(lo, hi), ProxSpec::zero_set(1)});
    std::optional<MatrixXd> gq;
    if (cfg.gamma > 0.0) {
      MatrixXd Q = MatrixXd::Zero(2, 2);
      Q(0, 0) = cfg.gamma;
      gq = Q;
    }
    loop.emplace(std::move(sys), make_delta_map(f, ProxSpec::empty(), g, cfg.mu), eps,
                 gq);
  }
  DisturbanceSegment seg{0.0, VectorXd::Constant(1, 0.3), VectorXd::Constant(1, 0.2),
                         0.5, {}};
  const DisturbanceSignal w({seg});
  const double t_end = cfg.t_end.value_or(40.0);
  const double dt = cfg.dt.value_or(default_step(*loop));
  // The rank-deficient loop has no unique optimum; start from rest there.
  Scenario sc;
  if (loop->rank_condition()) {
    sc = stationary_start_scenario(*loop, w, t_end, dt);
  } else {
    sc.t_end = t_end;
    sc.dt = dt;
    sc.w = w;
    sc.z0 = {VectorXd::Zero(1), VectorXd::Zero(1), VectorXd::Zero(loop->p2())};
  }
  return {"toy-scalar", mode, std::move(*loop), std::move(sc), mode == OpfMode::none,
          {{built == OpfMode::soft ? 1 : 2, 0}}, lo, hi, {}, {2, built == OpfMode::soft ? 0 : 1}};
}

inline CaseSetup build_case(const RunConfig& cfg) {
  if (cfg.case_name == "ieee9") {
    return detail::grid_setup("ieee9", ieee9_grid(), ieee9_script(), cfg);
  }
  if (cfg.case_name == "toy-scalar") return toy_scalar_setup(cfg);
  const GridCase gc = load_grid_case(cfg.case_name);
  Ieee9Script script = gc.script;
  if (!gc.has_script) {
    script.line_events.clear();
    script.w = DisturbanceSignal::constant(
        VectorXd::Zero(static_cast<Index>(gc.grid.load_buses.size())));
  }
  return detail::grid_setup(cfg.case_name, gc.grid, script, cfg);
}

inline std::vector<double> frequency_grid(const ClosedLoop& loop, int points) {
  return default_frequency_grid(loop.interconnection().A, points);
}

/// Certificate at cfg.rho, or at the largest certifiable ρ when bisecting.
inline Certificate certify_case(const CaseSetup& cs, const RunConfig& cfg) {
  const Interconnection inter = cs.loop.interconnection();
  LmiOptions opt;
  opt.unified_lipschitz = cfg.unified_lipschitz;
  const double Lf_hat = cs.loop.delta().Lf_hat(), Lh = cs.loop.delta().Lh;
  double rho = cfg.rho;
  if (cfg.bisect) {
    try {
      rho = find_max_rho(
          [&](double r) { return lmi_feasibility(inter, r, Lf_hat, Lh, opt).feasible; },
          cfg.rho_min, cfg.rho_max);
    } catch (const NonConvergenceError&) {
      rho = cfg.rho_min;
    }
  }
  Certificate c = lmi_feasibility(inter, rho, Lf_hat, Lh, opt);
  if (c.feasible) {
    const auto fdi = fdi_sampled_check(inter, rho, certificate_multiplier(inter, c),
                                       frequency_grid(cs.loop, cfg.omega_points));
    if (!fdi.holds) {
      c.diagnostics = "sampled frequency check failed at omega = " +
                      std::to_string(fdi.worst_omega);
    }
  }
  return c;
}

/// Limits of every constrained output at time t.
inline std::pair<VectorXd, VectorXd> limits_at(const CaseSetup& cs, double t) {
  VectorXd lo = cs.base_lo, hi = cs.base_hi;
  for (const auto& e : cs.limit_events) {
    if (e.t <= t + 1e-9 * std::max(1.0, e.t)) {
      lo[e.line] = e.p_min;
      hi[e.line] = e.p_max;
    }
  }
  return {lo, hi};
}

inline json run_summary(const CaseSetup& cs, const TrajectoryLog& log,
                        const std::optional<Certificate>& cert) {
  double max_freq = 0.0, integral = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < log.size(); ++k) {
    max_freq = std::max(max_freq, std::abs(detail::output_value(log, k, cs.freq)));
    const auto [lo, hi] = limits_at(cs, log.times[k]);
    double v = 0.0;
    for (std::size_t l = 0; l < cs.limited.size(); ++l) {
      const double p = detail::output_value(log, k, cs.limited[l]);
      v += std::max({p - hi[static_cast<Index>(l)], lo[static_cast<Index>(l)] - p, 0.0});
    }
    if (k > 0) integral += 0.5 * (v + prev) * (log.times[k] - log.times[k - 1]);
    prev = v;
  }
  json s = {{"case", cs.name},
            {"mode", to_string(cs.mode)},
            {"t_end", cs.scenario.t_end},
            {"dt", cs.scenario.dt},
            {"rows", log.size()},
            {"max_freq_dev", max_freq},
            {"line_violation_integral", integral},
            {"final_err", log.err.empty() ? json(nullptr) : json(log.err.back())},
            {"certified", cert ? json(cert->feasible) : json(false)},
            {"rho", cert ? json(cert->rho) : json(nullptr)},
            {"kappaP", cert && cert->feasible ? json(cert->kappaP) : json(nullptr)}};
  return s;
}

struct RunResult {
  CaseSetup setup;
  TrajectoryLog log;
  std::optional<Certificate> cert;
  json summary;
};

/// Thrown by run_experiment when --require-cert is set and certification fails.
class CertificationFailure : public std::runtime_error {
 public:
  CertificationFailure(const std::string& what, Certificate c)
      : std::runtime_error(what), cert_(std::move(c)) {}
  const Certificate& certificate() const { return cert_; }

 private:
  Certificate cert_;
};

inline RunResult run_experiment(const RunConfig& cfg) {
  validate_config(cfg);
  CaseSetup cs = build_case(cfg);
  std::optional<Certificate> cert;
  if (cfg.certify || cfg.require_cert) {
    cert = certify_case(cs, cfg);
    if (cfg.require_cert && !cert->feasible) {
      throw CertificationFailure("certification failed: " + cert->diagnostics, *cert);
    }
  }
  IntegrateOptions io;
  io.with_oracle = cfg.oracle && !cs.freeze_controller && cs.loop.rank_condition();
  io.oracle_stride = static_cast<std::size_t>(cfg.oracle_stride);
  io.freeze_controller = cs.freeze_controller;
  TrajectoryLog log = integrate(cs.loop, cs.scenario, io);
  json summary = run_summary(cs, log, cert);
  return {std::move(cs), std::move(log), std::move(cert), std::move(summary)};
}

/// Compares two run summaries on the same case and scenario.
inline json compare_summaries(const json& a, const json& b) {
  for (const char* key : {"case", "t_end", "dt"}) {
    if (!a.contains(key) || !b.contains(key) || a[key] != b[key]) {
      throw DimensionError(std::string("compare: runs differ in '") + key + "'");
    }
  }
  auto lower = [](double x, double y) -> std::string {
    const double tol = 1e-9 * std::max({1.0, std::abs(x), std::abs(y)});
    if (std::abs(x - y) <= tol) return "tie";
    return x < y ? "a" : "b";
  };
  json out = {{"case", a["case"]}, {"a", a.value("mode", "")}, {"b", b.value("mode", "")}};
  std::string both;
  bool first = true;
  for (const char* key : {"line_violation_integral", "max_freq_dev"}) {
    const double x = a.at(key).get<double>(), y = b.at(key).get<double>();
    const std::string w = lower(x, y);
    out[key] = {{"a", x}, {"b", y}, {"lower", w}};
    if (first) {
      both = w;
      first = false;
    } else if (both != w) {
      both = "none";
    }
  }
  out["wins_both"] = both == "tie" ? "tie" : both;
  return out;
}

inline void write_outputs(const RunResult& r, const RunConfig& cfg) {
  auto open = [](const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DimensionError("cannot write '" + path + "'");
    return os;
  };
  if (!cfg.csv.empty()) {
    auto os = open(cfg.csv);
    write_csv(os, r.log);
  }
  if (!cfg.summary.empty()) {
    auto os = open(cfg.summary);
    os << r.summary.dump(2) << '\n';
  }
  if (!cfg.cert.empty() && r.cert) {
    auto os = open(cfg.cert);
    os << certificate_to_json(*r.cert).dump(2) << '\n';
  }
}

}  // namespace ofo
