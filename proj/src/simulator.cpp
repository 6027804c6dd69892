#include "qts/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace qts {

namespace {

template<typename Breakpoint>
void check_breakpoints(const std::vector<Breakpoint> & bps, const char * what)
{
  if (bps.empty() || bps.front().time != 0.0) {
    throw std::invalid_argument(std::string(what) + ": first breakpoint must be at t = 0");
  }
  for (std::size_t i = 1; i < bps.size(); ++i) {
    if (!(bps[i].time > bps[i - 1].time)) {
      throw std::invalid_argument(std::string(what) + ": breakpoint times must increase");
    }
  }
}

template<typename Breakpoint>
const Breakpoint & lookup(const std::vector<Breakpoint> & bps, double t)
{
  auto it = std::upper_bound(bps.begin(), bps.end(), t,
                             [](double value, const Breakpoint & b) { return value < b.time; });
  if (it == bps.begin()) { return bps.front(); }
  return *std::prev(it);
}

}  // namespace

SetpointSchedule::SetpointSchedule(std::vector<Breakpoint> breakpoints)
    : breakpoints_(std::move(breakpoints))
{
  check_breakpoints(breakpoints_, "SetpointSchedule");
}

Vec2 SetpointSchedule::at(double t) const
{
  if (breakpoints_.empty()) { throw std::logic_error("SetpointSchedule: empty schedule"); }
  return lookup(breakpoints_, t).value;
}

DisturbanceProfile::DisturbanceProfile(std::vector<Breakpoint> breakpoints)
    : breakpoints_(std::move(breakpoints))
{
  check_breakpoints(breakpoints_, "DisturbanceProfile");
}

Vec4 DisturbanceProfile::at(double t) const { return lookup(breakpoints_, t).value; }

void SimConfig::validate() const
{
  if (!(Ts > 0.0)) { throw std::invalid_argument("SimConfig: Ts must be positive"); }
  if (substeps < 1) { throw std::invalid_argument("SimConfig: substeps must be >= 1"); }
}

Vec4 sde_step(const Vec4 & x, const Vec2 & u, const Vec4 & d, const ModelParams & p,
              const NoiseParams & n, double dt, Rng & rng)
{
  Vec4 xi;
  for (int i = 0; i < 4; ++i) { xi(i) = rng.normal(); }
  const Vec4 next = x + drift(x, u, d, p) * dt + std::sqrt(dt) * n.sigma.cwiseProduct(xi);
  return next.cwiseMax(0.0);
}

Vec4 measure(const Vec4 & x, const ModelParams & p, const NoiseParams & n, Rng & rng)
{
  Vec4 v;
  for (int i = 0; i < 4; ++i) { v(i) = rng.normal(); }
  return measurement(x, p) + n.r2.cwiseSqrt().cwiseProduct(v);
}

TrajectoryLog simulate_closed_loop(const PlantSetup & plant, Controller & controller,
                                   const SimConfig & cfg)
{
  cfg.validate();
  plant.params.validate();
  plant.noise.validate();

  const auto samples = static_cast<std::size_t>(std::floor(plant.duration / cfg.Ts + 1e-9));
  const double dt = cfg.Ts / cfg.substeps;

  Rng process_rng(Rng::derive(cfg.seed, 0));
  Rng measurement_rng(Rng::derive(cfg.seed, 1));

  TrajectoryLog log;
  log.controller = controller.name();
  log.seed = cfg.seed;
  log.t.reserve(samples);

  Vec4 x = plant.x0;
  for (std::size_t k = 0; k < samples; ++k) {
    const double t_k = static_cast<double>(k) * cfg.Ts;
    const Vec4 y = measure(x, plant.params, plant.noise, measurement_rng);
    const SetpointPreview preview(plant.setpoints, t_k, cfg.Ts);

    Vec2 u = controller.step(y, preview, t_k);
    if (!u.allFinite()) {
      throw std::runtime_error("simulate_closed_loop: controller '" + controller.name()
                               + "' returned a non-finite input at t = " + std::to_string(t_k));
    }
    u = u.cwiseMax(plant.u_min).cwiseMin(plant.u_max);

    log.t.push_back(t_k);
    log.x.push_back(x);
    log.y.push_back(y);
    log.u.push_back(u);
    log.d.push_back(plant.disturbances.at(t_k));
    log.zbar.push_back(preview.current());
    log.stats.push_back(controller.last_stats());

    for (int s = 0; s < cfg.substeps; ++s) {
      const Vec4 d = plant.disturbances.at(t_k + s * dt);
      x = sde_step(x, u, d, plant.params, plant.noise, dt, process_rng);
    }
  }
  return log;
}

void write_csv(std::ostream & os, const TrajectoryLog & log)
{
  os << "t,y1,y2,y3,y4,zbar1,zbar2,u1,u2,d1,d2,d3,d4,x1,x2,x3,x4\n";
  os << std::setprecision(17);
  for (std::size_t k = 0; k < log.size(); ++k) {
    os << log.t[k];
    for (int i = 0; i < 4; ++i) { os << ',' << log.y[k](i); }
    for (int i = 0; i < 2; ++i) { os << ',' << log.zbar[k](i); }
    for (int i = 0; i < 2; ++i) { os << ',' << log.u[k](i); }
    for (int i = 0; i < 4; ++i) { os << ',' << log.d[k](i); }
    for (int i = 0; i < 4; ++i) { os << ',' << log.x[k](i); }
    os << '\n';
  }
}

TrajectoryLog read_csv(std::istream & is)
{
  std::string line;
  if (!std::getline(is, line)) { throw std::runtime_error("read_csv: empty input"); }
  if (line.rfind("t,y1,y2,y3,y4,zbar1,zbar2,u1,u2", 0) != 0) {
    throw std::runtime_error("read_csv: unexpected header '" + line + "'");
  }

  TrajectoryLog log;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) { continue; }
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) { v.push_back(std::stod(cell)); }
    if (v.size() != 17) {
      throw std::runtime_error("read_csv: row " + std::to_string(row) + " has "
                               + std::to_string(v.size()) + " columns, expected 17");
    }
    log.t.push_back(v[0]);
    log.y.emplace_back(v[1], v[2], v[3], v[4]);
    log.zbar.emplace_back(v[5], v[6]);
    log.u.emplace_back(v[7], v[8]);
    log.d.emplace_back(v[9], v[10], v[11], v[12]);
    log.x.emplace_back(v[13], v[14], v[15], v[16]);
    log.stats.emplace_back();
  }
  return log;
}

nlohmann::json to_json(const TrajectoryLog & log)
{
  const auto column = [&](auto getter) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t k = 0; k < log.size(); ++k) { arr.push_back(getter(k)); }
    return arr;
  };
  const auto vec = [](const auto & v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };

  nlohmann::json j;
  j["controller"] = log.controller;
  j["seed"] = log.seed;
  j["t"] = log.t;
  j["y"] = column([&](std::size_t k) { return vec(log.y[k]); });
  j["zbar"] = column([&](std::size_t k) { return vec(log.zbar[k]); });
  j["u"] = column([&](std::size_t k) { return vec(log.u[k]); });
  j["d"] = column([&](std::size_t k) { return vec(log.d[k]); });
  j["x"] = column([&](std::size_t k) { return vec(log.x[k]); });
  j["solver_iterations"] = column([&](std::size_t k) { return log.stats[k].solver_iterations; });
  j["fallback"] = column([&](std::size_t k) { return log.stats[k].fallback; });
  return j;
}

}  // namespace qts
