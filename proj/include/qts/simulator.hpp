#pragma once

/**
 * @file
 * @brief Stochastic ground-truth plant and the closed-loop runner.
 */

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "qts/controller.hpp"
#include "qts/model.hpp"
#include "qts/rng.hpp"

namespace qts {

struct SimConfig
{
  double Ts = 5.0;
  int substeps = 10;  ///< Euler-Maruyama steps per sample
  std::uint64_t seed = 1;

  void validate() const;
};

/// Piecewise-constant, right-continuous disturbance flows.
class DisturbanceProfile
{
public:
  struct Breakpoint
  {
    double time;
    Vec4 value;
  };

  DisturbanceProfile() : DisturbanceProfile({{0.0, Vec4::Zero()}}) {}
  explicit DisturbanceProfile(std::vector<Breakpoint> breakpoints);

  Vec4 at(double t) const;
  const std::vector<Breakpoint> & breakpoints() const { return breakpoints_; }

private:
  std::vector<Breakpoint> breakpoints_;
};

/// Everything the plant side of a closed-loop run needs.
struct PlantSetup
{
  ModelParams params;
  NoiseParams noise;
  Vec4 x0 = Vec4::Zero();
  SetpointSchedule setpoints;
  DisturbanceProfile disturbances;
  double duration = 0.0;  ///< [s]; number of samples is floor(duration / Ts)
  Vec2 u_min = Vec2::Constant(160.0);
  Vec2 u_max = Vec2::Constant(350.0);
};

/// Row k holds the sample at t_k; u_k is computed from y_k (measure, then actuate).
struct TrajectoryLog
{
  std::vector<double> t;
  std::vector<Vec4> x;
  std::vector<Vec4> y;
  std::vector<Vec2> u;
  std::vector<Vec4> d;
  std::vector<Vec2> zbar;
  std::vector<StepStats> stats;
  std::string controller;
  std::uint64_t seed = 0;

  std::size_t size() const { return t.size(); }
};

/// One Euler-Maruyama step, masses clamped at zero.
Vec4 sde_step(const Vec4 & x, const Vec2 & u, const Vec4 & d, const ModelParams & p,
              const NoiseParams & n, double dt, Rng & rng);

/// Noisy level measurement y = C x + v.
Vec4 measure(const Vec4 & x, const ModelParams & p, const NoiseParams & n, Rng & rng);

/// Process and measurement noise come from separate streams derived from cfg.seed,
/// so every controller sees the same noise realization for a given seed.
TrajectoryLog simulate_closed_loop(const PlantSetup & plant, Controller & controller,
                                   const SimConfig & cfg);

/// Column order: t, y1..y4, zbar1, zbar2, u1, u2, d1..d4, x1..x4.
void write_csv(std::ostream & os, const TrajectoryLog & log);
TrajectoryLog read_csv(std::istream & is);

nlohmann::json to_json(const TrajectoryLog & log);

}  // namespace qts
