// qtsctl: command-line front end for simulations, experiments, tuning and identification.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qts/config.hpp"
#include "qts/harness.hpp"
#include "qts/sysid.hpp"

using namespace qts;
using nlohmann::json;

namespace {

// Thrown for failures that should exit with a specific error kind.
struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

int fail(const std::string & kind, const std::string & message, int code)
{
  std::cout << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return code;
}

ScenarioSpec load_scenario(const std::string & scenario, const std::string & config_path)
{
  json cfg = json::object();
  if (!config_path.empty()) { cfg = read_json_file(config_path); }
  if (!scenario.empty()) { cfg["scenario"] = scenario; }
  return scenario_from_config(cfg);
}

TrajectoryLog read_log(const std::string & path)
{
  std::ifstream in(path);
  if (!in) { throw UsageError("cannot open '" + path + "'"); }
  return read_csv(in);
}

json gains_json(const PidGains & g)
{
  return {{"Kp", g.Kp}, {"tau_i", g.tau_i}, {"tau_d", g.tau_d}, {"N", g.N_filter}, {"tau_t", g.tau_t},
          {"u_bar", g.u_bar}};
}

json tf_json(const SecondOrderTf & tf) { return {{"k", tf.k}, {"tau1", tf.tau1}, {"tau2", tf.tau2}}; }

json parameters_json(const ParameterSet & p)
{
  const Eigen::VectorXd th = p.flatten();
  json j = json::object();
  for (int i = 0; i < ParameterSet::kSize; ++i) { j[ParameterSet::names()[i]] = th(i); }
  return j;
}

// ------------------------------------------------------------------ subcommands

struct SimulateArgs
{
  std::string scenario = "sim1";
  std::string config;
  std::string controller = "pid";
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_simulate(const SimulateArgs & a)
{
  ScenarioSpec spec = load_scenario(a.scenario, a.config);
  spec.sim.seed = a.seed;
  const auto controller = make_controller(controller_from_string(a.controller), spec);
  const TrajectoryLog log = simulate_closed_loop(spec.plant, *controller, spec.sim);
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) { throw UsageError("cannot write '" + a.out + "'"); }
    write_csv(os, log);
  }
  int fallbacks = 0;
  for (const auto & s : log.stats) { fallbacks += s.fallback; }
  std::cout << json{{"scenario", spec.name},
                    {"controller", a.controller},
                    {"seed", a.seed},
                    {"samples", log.size()},
                    {"fallbacks", fallbacks},
                    {"metrics", to_json(compute_metrics(log))}}
                   .dump(2)
            << std::endl;
  return 0;
}

struct RunArgs
{
  std::string scenario;
  std::string config;
  std::vector<std::string> controllers;
  std::vector<std::uint64_t> seeds;
  std::string out_dir;
  bool verbose = false;
};

int cmd_run(const RunArgs & a)
{
  ScenarioSpec spec = load_scenario(a.scenario, a.config);
  if (!a.seeds.empty()) { spec.seeds = a.seeds; }
  if (!a.controllers.empty()) {
    spec.controllers.clear();
    for (const auto & c : a.controllers) { spec.controllers.push_back(controller_from_string(c)); }
  }
  ExperimentOptions opts;
  if (!a.out_dir.empty()) { opts.output_dir = a.out_dir; }
  opts.verbose = a.verbose;
  std::cout << run_experiment(spec, opts).to_json().dump(2) << std::endl;
  return 0;
}

int cmd_metrics(const std::vector<std::string> & logs)
{
  json out = json::array();
  for (const auto & path : logs) {
    out.push_back({{"log", path}, {"metrics", to_json(compute_metrics(read_log(path)))}});
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

struct TuneArgs
{
  std::string params = "nominal";
  std::vector<double> u_s{300.0, 300.0};
  double Tc = 50.0;
  double N = 5.0;
  double Ts = 5.0;
};

int cmd_tune(const TuneArgs & a)
{
  const ModelParams p = a.params.ends_with(".json") ? model_params_from_config(read_json_file(a.params))
                                                    : model_preset(a.params);
  const OperatingPoint op = OperatingPoint::at({a.u_s.at(0), a.u_s.at(1)}, Vec4::Zero(), p);
  const auto [g12, g21] = cross_coupling_tfs(linearize(p, op));
  const auto pid = DecentralizedPid::tuned(p, op, a.Ts, a.Tc, a.N);
  std::cout << json{{"operating_point",
                     {{"u_s", {op.u_s(0), op.u_s(1)}},
                      {"levels", {op.y_s(0), op.y_s(1), op.y_s(2), op.y_s(3)}}}},
                    {"loop1", {{"pairing", "y1 -> u2"}, {"tf", tf_json(g12)}, {"gains", gains_json(pid.loop1())}}},
                    {"loop2", {{"pairing", "y2 -> u1"}, {"tf", tf_json(g21)}, {"gains", gains_json(pid.loop2())}}}}
                   .dump(2)
            << std::endl;
  return 0;
}

struct IdentifyArgs
{
  std::string data;
  std::optional<std::uint64_t> synthetic_seed;
  std::vector<std::string> steady;
  std::vector<double> r2;
  std::string start = "nominal";
  int ekf_steps = 10;
  int samples = 2000;
  std::string out;
};

int cmd_identify(const IdentifyArgs & a)
{
  ParameterSet theta0;
  theta0.model = a.start.ends_with(".json") ? model_params_from_config(read_json_file(a.start))
                                            : model_preset(a.start);
  theta0.noise.sigma = Vec4::Constant(1.0);
  theta0.noise.sigma_d = Vec4::Constant(0.1);
  theta0.noise.r2 = Vec4::Constant(0.02);

  Dataset data;
  std::vector<Dataset> steady;
  if (a.synthetic_seed) {
    // known-truth data from the start model; useful for checking the estimator
    ParameterSet truth = theta0;
    truth.noise.sigma_d = Vec4::Constant(0.01);
    const auto seed = *a.synthetic_seed;
    data = generate_synthetic_dataset(truth, step_input_sequence(a.samples, 5.0, seed), 5.0, seed);
    for (std::uint64_t i = 0; i < 5; ++i) {
      steady.push_back(
          generate_synthetic_dataset(truth, Eigen::MatrixXd::Constant(200, 2, 300.0), 5.0, seed * 100 + i));
    }
    // perturb the start so the optimizer has work to do
    theta0.model.a *= 1.1;
    theta0.model.A *= 0.9;
  } else if (!a.data.empty()) {
    const TrajectoryLog log = read_log(a.data);
    data = dataset_from_log(log, log.size() > 1 ? log.t[1] - log.t[0] : 5.0);
    for (const auto & path : a.steady) {
      const TrajectoryLog s = read_log(path);
      steady.push_back(dataset_from_log(s, data.Ts, "steady"));
    }
  } else {
    throw UsageError("identify needs --data or --synthetic");
  }

  Vec4 r2_fixed;
  if (!a.r2.empty()) {
    if (a.r2.size() != 4) { throw UsageError("--r2 takes four values"); }
    r2_fixed = Vec4(a.r2[0], a.r2[1], a.r2[2], a.r2[3]);
  } else if (!steady.empty()) {
    r2_fixed = estimate_noise_covariance(steady);
  } else {
    throw UsageError("identify needs --steady segments or --r2 for the first stage");
  }

  EstimationSpec s1 = EstimationSpec::drift_stage();
  EstimationSpec s2 = EstimationSpec::diffusion_stage();
  s1.likelihood.ekf_steps = s2.likelihood.ekf_steps = a.ekf_steps;
  s1.tolerance = 1e-4;
  s2.tolerance = 1e-2;
  const TwoStageResult res = identify_two_stage(data, theta0, r2_fixed, s1, s2);

  const ModelParams & p = res.diffusion.theta.model;
  const Eigen::MatrixXd Ysim =
      simulate_noise_free(p, data.U, data.Ts, steady_state(data.U.row(0).transpose(), Vec4::Zero(), p));
  const json out = {{"samples", data.size()},
                    {"r2_fixed", {r2_fixed(0), r2_fixed(1), r2_fixed(2), r2_fixed(3)}},
                    {"stage1",
                     {{"value", res.drift.value},
                      {"iterations", res.drift.iterations},
                      {"converged", res.drift.converged}}},
                    {"stage2",
                     {{"value", res.diffusion.value},
                      {"iterations", res.diffusion.iterations},
                      {"converged", res.diffusion.converged}}},
                    {"parameters", parameters_json(res.diffusion.theta)},
                    {"gof", goodness_of_fit(data.Y, Ysim)}};
  if (!a.out.empty()) {
    write_json_file(a.out, {{"model", to_json(res.diffusion.theta.model)}, {"noise", to_json(res.diffusion.theta.noise)}});
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Quadruple-tank control workbench"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto * s = app.add_subcommand("simulate", "One closed-loop run; CSV log and metrics");
  s->add_option("--scenario", sim.scenario, "sim1 | sim2 | sim3 | sim4");
  s->add_option("--config", sim.config, "Scenario config (JSON)");
  s->add_option("--controller", sim.controller, "pid | lmpc | nmpc");
  s->add_option("--seed", sim.seed);
  s->add_option("-o,--out", sim.out, "CSV output path");

  RunArgs run;
  auto * r = app.add_subcommand("run", "All controllers over a seed list; CSV logs and metrics.json");
  r->add_option("--scenario", run.scenario);
  r->add_option("--config", run.config);
  r->add_option("--controllers", run.controllers)->delimiter(',');
  r->add_option("--seeds", run.seeds)->delimiter(',');
  r->add_option("-o,--out-dir", run.out_dir);
  r->add_flag("-v,--verbose", run.verbose);

  std::vector<std::string> logs;
  auto * m = app.add_subcommand("metrics", "NISE / NIAE / NISdU of CSV logs");
  m->add_option("logs", logs)->required();

  TuneArgs tune;
  auto * t = app.add_subcommand("tune", "SIMC PID gains at an operating point");
  t->add_option("--params", tune.params, "Preset name or JSON file");
  t->add_option("--u-s", tune.u_s)->expected(2)->delimiter(',');
  t->add_option("--tc", tune.Tc);
  t->add_option("--filter", tune.N);
  t->add_option("--ts", tune.Ts);

  IdentifyArgs id;
  std::uint64_t synthetic = 0;
  auto * i = app.add_subcommand("identify", "Two-stage maximum-likelihood estimation");
  i->add_option("--data", id.data, "Estimation data (simulator CSV)");
  auto * syn = i->add_option("--synthetic", synthetic, "Generate known-truth data with this seed");
  i->add_option("--steady", id.steady, "Steady-state CSV segments for R");
  i->add_option("--r2", id.r2, "Fixed measurement variances for stage 1")->delimiter(',');
  i->add_option("--start", id.start, "Initial model: preset name or JSON file");
  i->add_option("--ekf-steps", id.ekf_steps);
  i->add_option("--samples", id.samples, "Length of synthetic data");
  i->add_option("-o,--out", id.out, "Write the estimate as a parameter JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp & e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp & e) {
    return app.exit(e);
  } catch (const CLI::ParseError & e) {
    return fail("usage", e.what(), 2);
  }
  if (syn->count() > 0) { id.synthetic_seed = synthetic; }

  try {
    if (*s) { return cmd_simulate(sim); }
    if (*r) { return cmd_run(run); }
    if (*m) { return cmd_metrics(logs); }
    if (*t) { return cmd_tune(tune); }
    if (*i) { return cmd_identify(id); }
  } catch (const UsageError & e) {
    return fail("usage", e.what(), 2);
  } catch (const std::invalid_argument & e) {
    return fail("invalid_argument", e.what(), 1);
  } catch (const std::exception & e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
