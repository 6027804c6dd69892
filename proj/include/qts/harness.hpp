#pragma once

/**
 * @file
 * @brief Closed-loop scenarios, performance metrics and the multi-seed experiment runner.
 */

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qts/controllers.hpp"
#include "qts/simulator.hpp"

namespace qts {

struct Metrics
{
  double nise = 0.0;   ///< [cm^2]
  double niae = 0.0;   ///< [cm]
  double nisdu = 0.0;  ///< [(cm^3/s)^2]
};

/// Tracking error uses the measured lower-tank levels against the logged setpoints.
Metrics compute_metrics(const TrajectoryLog & log);

enum class ControllerKind { Pid, Lmpc, Nmpc };

std::string to_string(ControllerKind k);
ControllerKind controller_from_string(const std::string & s);

struct ScenarioSpec
{
  std::string name;
  PlantSetup plant;
  SimConfig sim;
  ModelParams controller_params;  ///< model known to the controllers
  NoiseParams filter_noise;       ///< sigma_a = [sigma; sigma_d], R = diag(r2)
  MpcConfig mpc;
  Vec2 u_s = Vec2::Constant(300.0);
  double Tc = 50.0;
  double N_filter = 5.0;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<ControllerKind> controllers{ControllerKind::Pid, ControllerKind::Lmpc, ControllerKind::Nmpc};

  void validate() const;
};

/// Default magnitude of the sim3 inflow steps [cm^3/s].
inline constexpr double kSim3DisturbanceStep = 30.0;

/// sim1 | sim2 | sim3 | sim4. Throws std::invalid_argument on other names.
ScenarioSpec build_scenario(const std::string & name);

/// Applies overrides from a scenario config object (see README for the keys).
ScenarioSpec scenario_from_config(const nlohmann::json & j);

std::unique_ptr<Controller> make_controller(ControllerKind kind, const ScenarioSpec & spec);

struct RunRecord
{
  ControllerKind controller;
  std::uint64_t seed;
  Metrics metrics;
  int fallbacks = 0;
  TrajectoryLog log;
};

struct MetricsSummary
{
  Metrics mean;
  Metrics std;
  std::size_t runs = 0;
};

struct ExperimentResult
{
  std::string scenario;
  std::vector<RunRecord> runs;
  std::map<ControllerKind, MetricsSummary> aggregate;

  /// Per-seed metrics of one controller, in seed order.
  std::vector<Metrics> per_seed(ControllerKind k) const;
  nlohmann::json to_json() const;
};

struct ExperimentOptions
{
  std::optional<std::string> output_dir;  ///< CSV per run + metrics.json
  bool keep_logs = false;
  bool verbose = false;
};

/// Every controller sees the same plant noise realization for a given seed.
ExperimentResult run_experiment(const ScenarioSpec & spec, const ExperimentOptions & options = {});

nlohmann::json to_json(const Metrics & m);

}  // namespace qts
