// Command-line front end: run, certify, compare, case-info.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <string>

#include "ofo/simcli.hpp"

namespace {

using ofo::json;

enum Exit { kOk = 0, kFailure = 1, kInvalid = 2, kDiverged = 3, kUncertified = 4 };

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump()
            << '\n';
  return code;
}

struct Flags {
  std::string config;
  ofo::RunConfig cli;
  double eps = 0.0, t_end = 0.0, dt = 0.0;
  bool no_oracle = false;
  std::vector<std::pair<CLI::Option*, std::string>> given;
};

void add_common(CLI::App* app, Flags& f) {
  auto opt = [&](CLI::Option* o, const char* key) { f.given.emplace_back(o, key); };
  app->add_option("--config", f.config, "JSON config file (flags override it)");
  opt(app->add_option("--case", f.cli.case_name, "ieee9, toy-scalar or a case file"), "case");
  opt(app->add_option("--mode", f.cli.mode, "none, soft or approximate"), "mode");
  opt(app->add_option("--eta", f.cli.eta, "soft penalty weight"), "eta");
  opt(app->add_option("--mu", f.cli.mu, "augmented Lagrangian parameter"), "mu");
  opt(app->add_option("--gamma", f.cli.gamma, "dual regularization"), "gamma");
  opt(app->add_option("--eps", f.eps, "time-scale ratio"), "eps");
  opt(app->add_flag("--certify", f.cli.certify, "run the LMI certificate"), "certify");
  opt(app->add_option("--rho", f.cli.rho, "certified decay rate"), "rho");
  opt(app->add_flag("--bisect", f.cli.bisect, "search the largest certifiable rho"), "bisect");
  opt(app->add_option("--rho-min", f.cli.rho_min), "rho_min");
  opt(app->add_option("--rho-max", f.cli.rho_max), "rho_max");
  opt(app->add_option("--omega-points", f.cli.omega_points, "frequency grid size"),
      "omega_points");
  opt(app->add_flag("--unified-lipschitz", f.cli.unified_lipschitz), "unified_lipschitz");
  opt(app->add_option("--t-end", f.t_end, "simulation horizon"), "t_end");
  opt(app->add_option("--dt", f.dt, "integrator step"), "dt");
  opt(app->add_flag("--no-oracle", f.no_oracle, "skip the reference optimum"), "oracle");
  opt(app->add_option("--oracle-stride", f.cli.oracle_stride), "oracle_stride");
  opt(app->add_option("--seed", f.cli.seed, "accepted for reproducibility"), "seed");
  opt(app->add_flag("--require-cert", f.cli.require_cert, "exit 4 without a certificate"),
      "require_cert");
  opt(app->add_option("--csv", f.cli.csv, "trajectory CSV path"), "csv");
  opt(app->add_option("--summary", f.cli.summary, "summary JSON path"), "summary");
  opt(app->add_option("--cert", f.cli.cert, "certificate JSON path"), "cert");
}

/// defaults < config file < flags
ofo::RunConfig resolve(const Flags& f) {
  ofo::RunConfig cfg;
  if (!f.config.empty()) {
    std::ifstream in(f.config);
    if (!in) throw ofo::DimensionError("cannot open config '" + f.config + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ofo::DimensionError("config '" + f.config + "': " + e.what());
    }
    ofo::merge_config(cfg, j);
  }
  json over = json::object();
  for (const auto& [o, key] : f.given) {
    if (o->count() == 0) continue;
    if (key == "case") over[key] = f.cli.case_name;
    else if (key == "mode") over[key] = f.cli.mode;
    else if (key == "eta") over[key] = f.cli.eta;
    else if (key == "mu") over[key] = f.cli.mu;
    else if (key == "gamma") over[key] = f.cli.gamma;
    else if (key == "eps") over[key] = f.eps;
    else if (key == "certify") over[key] = f.cli.certify;
    else if (key == "rho") over[key] = f.cli.rho;
    else if (key == "bisect") over[key] = f.cli.bisect;
    else if (key == "rho_min") over[key] = f.cli.rho_min;
    else if (key == "rho_max") over[key] = f.cli.rho_max;
    else if (key == "omega_points") over[key] = f.cli.omega_points;
    else if (key == "unified_lipschitz") over[key] = f.cli.unified_lipschitz;
    else if (key == "t_end") over[key] = f.t_end;
    else if (key == "dt") over[key] = f.dt;
    else if (key == "oracle") over[key] = !f.no_oracle;
    else if (key == "oracle_stride") over[key] = f.cli.oracle_stride;
    else if (key == "seed") over[key] = f.cli.seed;
    else if (key == "require_cert") over[key] = f.cli.require_cert;
    else if (key == "csv") over[key] = f.cli.csv;
    else if (key == "summary") over[key] = f.cli.summary;
    else if (key == "cert") over[key] = f.cli.cert;
  }
  ofo::merge_config(cfg, over);
  ofo::validate_config(cfg);
  return cfg;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ofo::DimensionError("cannot open '" + path + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw ofo::DimensionError("'" + path + "': " + e.what());
  }
}

int cmd_run(const Flags& f) {
  const ofo::RunConfig cfg = resolve(f);
  try {
    const ofo::RunResult r = ofo::run_experiment(cfg);
    ofo::write_outputs(r, cfg);
    if (cfg.summary.empty()) std::cout << r.summary.dump(2) << '\n';
    return kOk;
  } catch (const ofo::DivergenceError& e) {
    if (!cfg.csv.empty()) {
      std::ofstream os(cfg.csv);
      ofo::write_csv(os, e.log());
    }
    return fail(kDiverged, "divergence", e.what());
  } catch (const ofo::CertificationFailure& e) {
    if (!cfg.cert.empty()) {
      std::ofstream os(cfg.cert);
      os << ofo::certificate_to_json(e.certificate()).dump(2) << '\n';
    }
    return fail(kUncertified, "certification", e.what());
  }
}

int cmd_certify(const Flags& f) {
  ofo::RunConfig cfg = resolve(f);
  const ofo::CaseSetup cs = ofo::build_case(cfg);
  const ofo::Certificate c = ofo::certify_case(cs, cfg);
  const std::string text = ofo::certificate_to_json(c).dump(2);
  if (cfg.cert.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream os(cfg.cert);
    os << text << '\n';
  }
  if (cfg.require_cert && !c.feasible) {
    return fail(kUncertified, "certification", c.diagnostics);
  }
  return kOk;
}

int cmd_case_info(const Flags& f) {
  ofo::RunConfig cfg = resolve(f);
  const ofo::CaseSetup cs = ofo::build_case(cfg);
  const auto& loop = cs.loop;
  const auto inter = loop.interconnection();
  json info = {{"case", cs.name},
               {"mode", ofo::to_string(cs.mode)},
               {"n", loop.n()},
               {"m", loop.m()},
               {"p1", loop.p1()},
               {"p2", loop.p2()},
               {"q", loop.sys().q()},
               {"plant_abscissa", loop.sys().spectral_abscissa()},
               {"epsilon", loop.epsilon()},
               {"mu", loop.mu()},
               {"m_strong", loop.delta().m_strong},
               {"Lf_hat", loop.delta().Lf_hat()},
               {"Lh", loop.delta().Lh},
               {"regularized", loop.regularized()},
               {"rank_condition", loop.rank_condition()},
               {"dt", cs.scenario.dt},
               {"t_end", cs.scenario.t_end},
               {"loop_spectral_radius", ofo::spectral_radius(inter.A)}};
  std::cout << info.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online feedback optimization: simulate and certify saddle-flow controllers"};
  app.require_subcommand(1);
  Flags run_f, cert_f, info_f;
  auto* run = app.add_subcommand("run", "simulate a case and write CSV/JSON results");
  add_common(run, run_f);
  auto* cert = app.add_subcommand("certify", "search an LMI certificate");
  add_common(cert, cert_f);
  auto* info = app.add_subcommand("case-info", "print model dimensions and checks");
  add_common(info, info_f);
  std::string a_path, b_path, out_path;
  auto* cmp = app.add_subcommand("compare", "compare two run summaries");
  cmp->add_option("a", a_path, "first summary JSON")->required();
  cmp->add_option("b", b_path, "second summary JSON")->required();
  cmp->add_option("--out", out_path, "write the comparison here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kInvalid, "invalid_config", e.what());
  }

  try {
    if (*run) return cmd_run(run_f);
    if (*cert) return cmd_certify(cert_f);
    if (*info) return cmd_case_info(info_f);
    if (*cmp) {
      const json out = ofo::compare_summaries(read_json(a_path), read_json(b_path));
      if (out_path.empty()) {
        std::cout << out.dump(2) << '\n';
      } else {
        std::ofstream(out_path) << out.dump(2) << '\n';
      }
      return kOk;
    }
  } catch (const ofo::DimensionError& e) {
    return fail(kInvalid, "invalid_config", e.what());
  } catch (const ofo::ScheduleError& e) {
    return fail(kInvalid, "invalid_config", e.what());
  } catch (const ofo::DivergenceError& e) {
    return fail(kDiverged, "divergence", e.what());
  } catch (const std::exception& e) {
    return fail(kFailure, "failure", e.what());
  }
  return kFailure;
}
