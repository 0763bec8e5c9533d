// Command-line driver for the example scenarios: axiom checks, simulation,
// transport diagnostics, extremal synthesis, maximum-principle verification,
// cone separation, and the full pipeline.

#include "algc/scenarios.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace algc;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string scenario;
  int steps = 0;
  double tol = 0;
};

ConfigMap assemble_config(const CommonOpts& opt) {
  ConfigMap cfg;
  if (!opt.config_path.empty()) cfg = parse_config_file(opt.config_path);
  if (!opt.scenario.empty()) cfg["scenario.name"] = opt.scenario;
  if (opt.steps > 0) cfg["numerics.steps"] = std::to_string(opt.steps);
  if (opt.tol > 0) cfg["numerics.tol"] = format_number(opt.tol);
  if (!opt.out_dir.empty()) {
    cfg["outputs.dir"] = opt.out_dir;
  } else if (!cfg.count("outputs.dir")) {
    if (const char* env = std::getenv("ALGOC_OUT_DIR")) cfg["outputs.dir"] = env;
  }
  return cfg;
}

int finish(const RunReport& rep) {
  std::cout << rep.to_text();
  return rep.pass() ? 0 : 1;
}

int cmd_list() {
  for (const auto& [name, desc] : list_builtins())
    std::cout << name << "  -  " << desc << "\n";
  return 0;
}

int cmd_check_axioms(const ConfigMap& cfg) {
  BuiltScenario sc = make_scenario(cfg_str(cfg, "scenario.name", ""), cfg);
  RunReport rep;
  rep.scenario = sc.name;
  run_axiom_stage(sc, rep);
  if (cfg.count("numerics.tol")) {
    const double tol = cfg_num(cfg, "numerics.tol", 1e-6);
    for (auto& c : rep.checks) {
      c.threshold = tol;
      c.pass = c.value <= tol;
    }
  }
  return finish(rep);
}

int cmd_simulate(const ConfigMap& cfg) {
  BuiltScenario sc = make_scenario(cfg_str(cfg, "scenario.name", ""), cfg);
  if (cfg.count("numerics.steps")) sc.steps = cfg_int(cfg, "numerics.steps", sc.steps);
  RunReport rep;
  rep.scenario = sc.name;
  run_simulate_stage(sc, rep, cfg_str(cfg, "outputs.dir", ""), sc.steps);
  if (cfg.count("numerics.tol")) {
    const double tol = cfg_num(cfg, "numerics.tol", 1e-4);
    rep.checks.back().threshold = tol;
    rep.checks.back().pass = rep.checks.back().value <= tol;
  }
  return finish(rep);
}

int cmd_transport(const ConfigMap& cfg) {
  BuiltScenario sc = make_scenario(cfg_str(cfg, "scenario.name", ""), cfg);
  if (cfg.count("numerics.steps")) sc.steps = cfg_int(cfg, "numerics.steps", sc.steps);
  RunReport rep;
  rep.scenario = sc.name;
  run_transport_stage(sc, rep);
  return finish(rep);
}

int run_extremal_stage(const std::string& name, const BuiltScenario& sc, RunReport& rep,
                       const std::string& out_dir, const ConfigMap& cfg,
                       ExtremalResult* out_res = nullptr) {
  if (name == "so3_two_axis") {
    auto res = run_so3_extremal(sc, rep, out_dir, cfg);
    if (out_res) *out_res = std::move(res);
  } else if (name == "chaplygin_sleigh") {
    run_chaplygin_extremal(sc, rep, out_dir, cfg);
  } else if (name == "euler_poincare_rigid_body") {
    run_euler_poincare_extremal(sc, rep, out_dir, cfg);
  } else if (name == "tangent_lqr_1d") {
    run_lqr_extremal(sc, rep, out_dir);
  } else {
    std::cerr << "scenario '" << name << "' has no extremal stage\n";
    return 2;
  }
  return -1;
}

int cmd_extremal(const ConfigMap& cfg) {
  const std::string name = cfg_str(cfg, "scenario.name", "");
  BuiltScenario sc = make_scenario(name, cfg);
  if (cfg.count("numerics.steps")) sc.steps = cfg_int(cfg, "numerics.steps", sc.steps);
  RunReport rep;
  rep.scenario = name;
  const int rc = run_extremal_stage(name, sc, rep, cfg_str(cfg, "outputs.dir", ""), cfg);
  if (rc >= 0) return rc;
  return finish(rep);
}

int cmd_pmp_verify(const ConfigMap& cfg) {
  // the extremal stages already include the maximum-principle residuals
  return cmd_extremal(cfg);
}

int cmd_needle_cone(const ConfigMap& cfg) {
  const std::string name = cfg_str(cfg, "scenario.name", "");
  if (name != "so3_two_axis") {
    std::cerr << "needle-cone is wired for the so3_two_axis scenario\n";
    return 2;
  }
  BuiltScenario sc = make_scenario(name, cfg);
  if (cfg.count("numerics.steps")) sc.steps = cfg_int(cfg, "numerics.steps", sc.steps);
  RunReport rep;
  rep.scenario = name;
  auto res = solve_extremal(sc.problem, sc.x0, sc.xi_guess, sc.xi0, sc.mode, sc.t0, sc.t1,
                            sc.steps);
  run_so3_cone_stage(sc, res, rep, cfg_str(cfg, "outputs.dir", ""));
  return finish(rep);
}

int cmd_run(const ConfigMap& cfg) {
  return finish(run_scenario(cfg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optimal control on algebroids: scenario runner"};
  app.require_subcommand(1);

  CommonOpts opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "configuration file (key = value lines)");
    sub->add_option("--out", opt.out_dir, "output directory for CSV artifacts");
    sub->add_option("--steps", opt.steps, "integration steps");
    sub->add_option("--tol", opt.tol, "tolerance override for this command");
    sub->add_option("--scenario", opt.scenario, "built-in scenario name");
  };

  auto* list = app.add_subcommand("list", "list built-in scenarios");
  auto* axioms = app.add_subcommand("check-axioms", "structure-function axiom checks");
  auto* simulate = app.add_subcommand("simulate", "integrate the nominal control");
  auto* transport = app.add_subcommand("transport", "parallel-transport pairing diagnostics");
  auto* extremal = app.add_subcommand("extremal", "closed-loop extremal synthesis");
  auto* verify = app.add_subcommand("pmp-verify", "maximum-principle residual report");
  auto* cone = app.add_subcommand("needle-cone", "needle cone and separation certificate");
  auto* run = app.add_subcommand("run", "full pipeline");
  for (auto* sub : {axioms, simulate, transport, extremal, verify, cone, run}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (list->parsed()) return cmd_list();
    const ConfigMap cfg = assemble_config(opt);
    if (axioms->parsed()) return cmd_check_axioms(cfg);
    if (simulate->parsed()) return cmd_simulate(cfg);
    if (transport->parsed()) return cmd_transport(cfg);
    if (extremal->parsed()) return cmd_extremal(cfg);
    if (verify->parsed()) return cmd_pmp_verify(cfg);
    if (cone->parsed()) return cmd_needle_cone(cfg);
    if (run->parsed()) return cmd_run(cfg);
  } catch (const algc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const algc::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
