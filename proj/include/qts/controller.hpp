#pragma once

#include <string>
#include <vector>

#include "qts/types.hpp"

namespace qts {

/// Piecewise-constant, right-continuous setpoint schedule for the two CVs.
class SetpointSchedule
{
public:
  struct Breakpoint
  {
    double time;
    Vec2 value;
  };

  SetpointSchedule() = default;
  explicit SetpointSchedule(std::vector<Breakpoint> breakpoints);

  static SetpointSchedule constant(const Vec2 & value) { return SetpointSchedule({{0.0, value}}); }

  Vec2 at(double t) const;
  const std::vector<Breakpoint> & breakpoints() const { return breakpoints_; }

private:
  std::vector<Breakpoint> breakpoints_;
};

/// Setpoints seen by a controller at sample t_k: at(j) = zbar(t_k + j Ts).
class SetpointPreview
{
public:
  SetpointPreview(const SetpointSchedule & schedule, double t_k, double Ts)
      : schedule_(&schedule), t_k_(t_k), Ts_(Ts)
  {}

  Vec2 at(int j) const { return schedule_->at(t_k_ + j * Ts_); }
  Vec2 current() const { return at(0); }

private:
  const SetpointSchedule * schedule_;
  double t_k_;
  double Ts_;
};

/// Per-step diagnostics reported by a controller.
struct StepStats
{
  int solver_iterations = 0;
  int qp_iterations = 0;
  bool fallback = false;  ///< solver failed and the previous input was held
};

/// Common interface of the three control laws.
class Controller
{
public:
  virtual ~Controller() = default;

  /// Returns u_k within the controller's input bounds.
  virtual Vec2 step(const Vec4 & y, const SetpointPreview & preview, double t_k) = 0;
  virtual void reset() = 0;
  virtual std::string name() const = 0;
  virtual StepStats last_stats() const { return {}; }
};

}  // namespace qts
