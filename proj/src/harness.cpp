#include "qts/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "qts/config.hpp"

namespace qts {

Metrics compute_metrics(const TrajectoryLog & log)
{
  const std::size_t n = log.size();
  if (n < 2) { throw std::invalid_argument("compute_metrics: need at least two samples"); }
  Metrics m;
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 e = log.zbar[k] - log.y[k].head<2>();
    m.nise += e.squaredNorm();
    m.niae += e.lpNorm<1>();
  }
  m.nise /= static_cast<double>(n);
  m.niae /= static_cast<double>(n);
  for (std::size_t k = 1; k < n; ++k) { m.nisdu += (log.u[k] - log.u[k - 1]).squaredNorm(); }
  m.nisdu /= static_cast<double>(n - 1);
  return m;
}

std::string to_string(ControllerKind k)
{
  switch (k) {
  case ControllerKind::Pid: return "pid";
  case ControllerKind::Lmpc: return "lmpc";
  case ControllerKind::Nmpc: return "nmpc";
  }
  return "unknown";
}

ControllerKind controller_from_string(const std::string & s)
{
  if (s == "pid") { return ControllerKind::Pid; }
  if (s == "lmpc") { return ControllerKind::Lmpc; }
  if (s == "nmpc") { return ControllerKind::Nmpc; }
  throw std::invalid_argument("unknown controller '" + s + "' (expected pid, lmpc or nmpc)");
}

void ScenarioSpec::validate() const
{
  plant.params.validate();
  plant.noise.validate();
  controller_params.validate();
  filter_noise.validate();
  sim.validate();
  mpc.validate();
  if (!(plant.duration >= 2.0 * sim.Ts)) { throw std::invalid_argument("scenario: duration too short"); }
  if (seeds.empty()) { throw std::invalid_argument("scenario: empty seed list"); }
  if (controllers.empty()) { throw std::invalid_argument("scenario: no controllers selected"); }
  for (const auto & bp : plant.setpoints.breakpoints()) {
    if (bp.time > plant.duration) { throw std::invalid_argument("scenario: setpoint change after the end"); }
  }
}

namespace {

ScenarioSpec base_scenario(const std::string & name, double duration)
{
  ScenarioSpec s;
  s.name = name;
  s.plant.params = ModelParams::nominal();
  s.controller_params = s.plant.params;
  const OperatingPoint op = OperatingPoint::at(s.u_s, Vec4::Zero(), s.plant.params);
  s.plant.x0 = op.x_s;
  s.plant.duration = duration;
  s.plant.noise.sigma.setConstant(1.0);
  s.plant.noise.r2.setConstant(0.02);
  s.filter_noise.sigma.setConstant(1.0);
  s.filter_noise.sigma_d.setConstant(1.0);
  s.filter_noise.r2.setConstant(0.02);
  s.plant.setpoints = SetpointSchedule::constant(op.z_s);
  s.mpc.Ts = s.sim.Ts;
  return s;
}

// One CV moves at a time; every level pair keeps the steady inputs inside [160, 350].
SetpointSchedule tracking_schedule(const Vec2 & z_s)
{
  return SetpointSchedule({{0.0, z_s},
                           {500.0, {40.0, z_s(1)}},
                           {1300.0, {40.0, 40.0}},
                           {2100.0, {35.0, 40.0}},
                           {2900.0, {35.0, 33.0}},
                           {3700.0, {38.0, 33.0}},
                           {4500.0, {38.0, 38.0}},
                           {5300.0, {32.0, 38.0}},
                           {6100.0, {32.0, 32.0}}});
}

}  // namespace

ScenarioSpec build_scenario(const std::string & name)
{
  if (name == "sim1" || name == "sim2") {
    ScenarioSpec s = base_scenario(name, 7000.0);
    const Vec2 z_s = s.plant.setpoints.at(0.0);
    s.plant.setpoints = tracking_schedule(z_s);
    s.mpc.anticipatory = name == "sim1";
    return s;
  }
  if (name == "sim3") {
    ScenarioSpec s = base_scenario(name, 4000.0);
    const double T = s.plant.duration;
    const double step = kSim3DisturbanceStep;
    s.plant.disturbances = DisturbanceProfile({{0.0, Vec4::Zero()},
                                               {T / 3.0, Vec4(0.0, 0.0, step, 0.0)},
                                               {2.0 * T / 3.0, Vec4(0.0, 0.0, step, step)}});
    return s;
  }
  if (name == "sim4") {
    ScenarioSpec s = base_scenario(name, 4000.0);
    s.plant.noise.sigma.setConstant(20.0);
    s.filter_noise.sigma.setZero();
    s.filter_noise.sigma_d.setConstant(20.0);
    s.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    return s;
  }
  throw std::invalid_argument("unknown scenario '" + name + "' (expected sim1, sim2, sim3 or sim4)");
}

ScenarioSpec scenario_from_config(const nlohmann::json & j)
{
  ScenarioSpec s = build_scenario(j.value("scenario", std::string("sim1")));
  if (j.contains("params")) {
    s.plant.params = model_params_from_config(j.at("params"));
    s.controller_params = s.plant.params;
    s.plant.x0 = steady_state(s.u_s, Vec4::Zero(), s.plant.params);
  }
  if (j.contains("controller_params")) { s.controller_params = model_params_from_config(j.at("controller_params")); }
  if (j.contains("plant_noise")) { s.plant.noise = noise_params_from_json(j.at("plant_noise"), s.plant.noise); }
  if (j.contains("filter_noise")) { s.filter_noise = noise_params_from_json(j.at("filter_noise"), s.filter_noise); }
  if (j.contains("duration")) { s.plant.duration = j.at("duration").get<double>(); }
  if (j.contains("Ts")) { s.sim.Ts = s.mpc.Ts = j.at("Ts").get<double>(); }
  if (j.contains("substeps")) { s.sim.substeps = j.at("substeps").get<int>(); }
  if (j.contains("Tc")) { s.Tc = j.at("Tc").get<double>(); }
  if (j.contains("anticipatory")) { s.mpc.anticipatory = j.at("anticipatory").get<bool>(); }
  if (j.contains("seeds")) { s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>(); }
  if (j.contains("controllers")) {
    s.controllers.clear();
    for (const auto & c : j.at("controllers")) { s.controllers.push_back(controller_from_string(c.get<std::string>())); }
  }
  if (j.contains("setpoints")) {
    std::vector<SetpointSchedule::Breakpoint> bps;
    for (const auto & row : j.at("setpoints")) {
      const auto v = row.get<std::vector<double>>();
      if (v.size() != 3) { throw std::invalid_argument("setpoints rows are [t, z1, z2]"); }
      bps.push_back({v[0], {v[1], v[2]}});
    }
    s.plant.setpoints = SetpointSchedule(std::move(bps));
  }
  if (j.contains("disturbances")) {
    std::vector<DisturbanceProfile::Breakpoint> bps;
    for (const auto & row : j.at("disturbances")) {
      const auto v = row.get<std::vector<double>>();
      if (v.size() != 5) { throw std::invalid_argument("disturbance rows are [t, d1, d2, d3, d4]"); }
      bps.push_back({v[0], {v[1], v[2], v[3], v[4]}});
    }
    s.plant.disturbances = DisturbanceProfile(std::move(bps));
  }
  if (j.contains("mpc")) {
    const auto & m = j.at("mpc");
    if (m.contains("N")) { s.mpc.N = m.at("N").get<int>(); }
    if (m.contains("Q")) {
      const auto q = m.at("Q").get<std::vector<double>>();
      s.mpc.Q = Vec2(q.at(0), q.at(1)).asDiagonal();
    }
    if (m.contains("S")) {
      const auto q = m.at("S").get<std::vector<double>>();
      s.mpc.S = Vec2(q.at(0), q.at(1)).asDiagonal();
    }
  }
  s.validate();
  return s;
}

std::unique_ptr<Controller> make_controller(ControllerKind kind, const ScenarioSpec & spec)
{
  MpcSetup setup;
  setup.params = spec.controller_params;
  setup.filter_noise = spec.filter_noise;
  setup.u_s = spec.u_s;
  setup.cfg = spec.mpc;
  setup.cfg.Ts = spec.sim.Ts;
  setup.cfg.u_min = spec.plant.u_min;
  setup.cfg.u_max = spec.plant.u_max;

  switch (kind) {
  case ControllerKind::Pid: {
    const OperatingPoint op = OperatingPoint::at(spec.u_s, Vec4::Zero(), spec.controller_params);
    auto pid = DecentralizedPid::tuned(spec.controller_params, op, spec.sim.Ts, spec.Tc, spec.N_filter);
    return std::make_unique<DecentralizedPid>(pid);
  }
  case ControllerKind::Lmpc: return std::make_unique<LmpcController>(setup);
  case ControllerKind::Nmpc: return std::make_unique<NmpcController>(setup);
  }
  throw std::logic_error("make_controller: unhandled kind");
}

nlohmann::json to_json(const Metrics & m)
{
  return {{"NISE", m.nise}, {"NIAE", m.niae}, {"NISdU", m.nisdu}};
}

std::vector<Metrics> ExperimentResult::per_seed(ControllerKind k) const
{
  std::vector<Metrics> out;
  for (const auto & r : runs) {
    if (r.controller == k) { out.push_back(r.metrics); }
  }
  return out;
}

nlohmann::json ExperimentResult::to_json() const
{
  nlohmann::json j;
  j["scenario"] = scenario;
  j["runs"] = nlohmann::json::array();
  for (const auto & r : runs) {
    nlohmann::json row = qts::to_json(r.metrics);
    row["controller"] = qts::to_string(r.controller);
    row["seed"] = r.seed;
    row["fallbacks"] = r.fallbacks;
    j["runs"].push_back(row);
  }
  for (const auto & [k, s] : aggregate) {
    j["aggregate"][qts::to_string(k)] = {{"mean", qts::to_json(s.mean)}, {"std", qts::to_json(s.std)}, {"runs", s.runs}};
  }
  return j;
}

ExperimentResult run_experiment(const ScenarioSpec & spec, const ExperimentOptions & options)
{
  spec.validate();
  if (options.output_dir) { std::filesystem::create_directories(*options.output_dir); }

  ExperimentResult res;
  res.scenario = spec.name;
  for (const auto kind : spec.controllers) {
    for (const auto seed : spec.seeds) {
      auto controller = make_controller(kind, spec);
      SimConfig cfg = spec.sim;
      cfg.seed = seed;

      RunRecord rec{kind, seed, {}, 0, simulate_closed_loop(spec.plant, *controller, cfg)};
      rec.metrics = compute_metrics(rec.log);
      for (const auto & st : rec.log.stats) { rec.fallbacks += st.fallback ? 1 : 0; }

      if (options.output_dir) {
        const auto path = std::filesystem::path(*options.output_dir)
                        / (spec.name + "_" + to_string(kind) + "_seed" + std::to_string(seed) + ".csv");
        std::ofstream out(path);
        if (!out) { throw std::runtime_error("cannot write '" + path.string() + "'"); }
        write_csv(out, rec.log);
      }
      if (options.verbose) {
        std::cerr << spec.name << ' ' << to_string(kind) << " seed " << seed << ": NISE " << rec.metrics.nise
                  << " NIAE " << rec.metrics.niae << " NISdU " << rec.metrics.nisdu << '\n';
      }
      if (!options.keep_logs) { rec.log = TrajectoryLog{}; }
      res.runs.push_back(std::move(rec));
    }

    const auto ms = res.per_seed(kind);
    MetricsSummary sum;
    sum.runs = ms.size();
    for (const auto & m : ms) {
      sum.mean.nise += m.nise / ms.size();
      sum.mean.niae += m.niae / ms.size();
      sum.mean.nisdu += m.nisdu / ms.size();
    }
    if (ms.size() > 1) {
      for (const auto & m : ms) {
        sum.std.nise += std::pow(m.nise - sum.mean.nise, 2);
        sum.std.niae += std::pow(m.niae - sum.mean.niae, 2);
        sum.std.nisdu += std::pow(m.nisdu - sum.mean.nisdu, 2);
      }
      const double dof = static_cast<double>(ms.size() - 1);
      sum.std.nise = std::sqrt(sum.std.nise / dof);
      sum.std.niae = std::sqrt(sum.std.niae / dof);
      sum.std.nisdu = std::sqrt(sum.std.nisdu / dof);
    }
    res.aggregate[kind] = sum;
  }

  if (options.output_dir) {
    write_json_file((std::filesystem::path(*options.output_dir) / "metrics.json").string(), res.to_json());
  }
  return res;
}

}  // namespace qts
