#pragma once

/**
 * @file
 * @brief Decentralized PID, condensed linear MPC and multiple-shooting nonlinear MPC.
 */

#include <optional>
#include <string>
#include <vector>

#include "qts/controller.hpp"
#include "qts/estimators.hpp"
#include "qts/model.hpp"
#include "qts/solvers.hpp"

namespace qts {

struct PidGains
{
  double Kp = 0.0;        ///< [cm^3/s per cm]
  double tau_i = 1.0;     ///< [s]
  double tau_d = 0.0;     ///< [s]
  double N_filter = 5.0;
  double tau_t = 0.5;     ///< back-calculation time constant [s]
  double u_bar = 0.0;     ///< bias [cm^3/s]
  double u_min = 160.0;
  double u_max = 350.0;

  void validate() const;
};

struct PidState
{
  double I = 0.0;
  double D_prev = 0.0;
  double y_prev = 0.0;
  bool started = false;  ///< y_prev is taken from the first measurement
};

/// SIMC rules for a second-order lag, converted from cascade to parallel form.
PidGains simc_tune(const SecondOrderTf & tf, double Tc, double N_filter = 5.0);

struct PidOutput
{
  double u;
  PidState state;
};

/// One sample of the filtered-derivative PID with back-calculation anti-windup.
PidOutput pid_step(const PidState & state, const PidGains & gains, double zbar, double y, double Ts);

/// Loop 1 drives u2 from (y1, zbar1), loop 2 drives u1 from (y2, zbar2).
class DecentralizedPid : public Controller
{
public:
  DecentralizedPid(const PidGains & loop1, const PidGains & loop2, double Ts);

  /// SIMC tuning on the cross-coupling transfer functions at the operating point.
  static DecentralizedPid tuned(const ModelParams & p, const OperatingPoint & op, double Ts,
                                double Tc = 50.0, double N_filter = 5.0);

  Vec2 step(const Vec4 & y, const SetpointPreview & preview, double t_k) override;
  void reset() override { loop1_state_ = loop2_state_ = PidState{}; }
  std::string name() const override { return "pid"; }

  const PidGains & loop1() const { return loop1_; }
  const PidGains & loop2() const { return loop2_; }
  const PidState & loop1_state() const { return loop1_state_; }
  const PidState & loop2_state() const { return loop2_state_; }

private:
  PidGains loop1_, loop2_;
  PidState loop1_state_, loop2_state_;
  double Ts_;
};

struct MpcConfig
{
  Mat2 Q = Vec2(10.0, 10.0).asDiagonal();
  Mat2 S = Mat2::Identity();
  int N = 160;
  double Ts = 5.0;
  Vec2 u_min = Vec2::Constant(160.0);
  Vec2 u_max = Vec2::Constant(350.0);
  bool anticipatory = true;

  void validate() const;
};

/// Targets for stages 1..N; a reactive controller repeats the current setpoint.
std::vector<Vec2> horizon_targets(const SetpointPreview & preview, const MpcConfig & cfg);

/// Shift a stage-wise active set by one stage, repeating the last stage.
ActiveSet shift_active_set(const ActiveSet & active, int stage_size);

struct MpcSolution
{
  Vec2 u = Vec2::Zero();
  Eigen::VectorXd inputs;  ///< stacked optimal inputs (absolute)
  double objective = 0.0;
  StepStats stats;
};

/// Condensed QP over the input deviations of the ZOH-discretized linear model.
class LmpcSolver
{
public:
  LmpcSolver(const LinearModel & lm, const MpcConfig & cfg);

  /// X, D: state and disturbance deviations from the operating point; targets absolute.
  MpcSolution solve(const Vec4 & X, const Vec4 & D, const std::vector<Vec2> & targets,
                    const Vec2 & u_prev);

  /// The QP solved by `solve` for the same arguments, in input deviations.
  BoxQp build_qp(const Vec4 & X, const Vec4 & D, const std::vector<Vec2> & targets,
                 const Vec2 & u_prev) const;

  const DiscreteLinearModel & discrete() const { return dm_; }
  const LinearModel & linear() const { return lm_; }
  void reset() { warm_.clear(); }

private:
  LinearModel lm_;
  DiscreteLinearModel dm_;
  MpcConfig cfg_;
  StageJacobians sj_;
  Eigen::MatrixXd H_;
  ActiveSet warm_;
};

/// How the NMPC predicts: the tank model or its linearization (for equivalence checks).
enum class PredictionModel { Nonlinear, Linear };

class NmpcSolver
{
public:
  NmpcSolver(const ModelParams & p, const MpcConfig & cfg, PredictionModel kind = PredictionModel::Nonlinear,
             std::optional<LinearModel> lm = std::nullopt, int rk4_steps = 10);

  /// x, d absolute; targets absolute. Warm starts from the shifted previous solution.
  MpcSolution solve(const Vec4 & x, const Vec4 & d, const std::vector<Vec2> & targets,
                    const Vec2 & u_prev);

  /// RK4 shooting map over one sample with its exact sensitivities.
  ShootingStep shoot(const Vec4 & s, const Vec2 & u, const Vec4 & d) const;

  NlpProblem problem(const Vec4 & x, const Vec4 & d, const std::vector<Vec2> & targets,
                     const Vec2 & u_prev) const;

  /// [x; u; x; u; ...; x]
  Eigen::VectorXd initial_guess(const Vec4 & x, const Vec2 & u) const;

  const Eigen::VectorXd & last_solution() const { return w_; }
  const SqpResult & last_result() const { return result_; }
  void reset()
  {
    w_.resize(0);
    active_.clear();
  }

private:
  Vec4 rhs(const Vec4 & s, const Vec2 & u, const Vec4 & d) const;
  Mat4 rhs_jacobian(const Vec4 & s, const Vec2 & u, const Vec4 & d) const;

  ModelParams p_;
  MpcConfig cfg_;
  PredictionModel kind_;
  std::optional<LinearModel> lm_;
  Mat42 Bu_;
  int rk4_steps_;
  Eigen::VectorXd w_;
  ActiveSet active_;
  SqpResult result_;
};

/// Advance a multiple-shooting vector by one stage, duplicating the last input and state.
Eigen::VectorXd shift_shooting_vector(const Eigen::VectorXd & w, int N);

/// Filter tuning shared by the two MPCs: sigma_a = [sigma; sigma_d], R = diag(r2).
struct MpcSetup
{
  ModelParams params;
  NoiseParams filter_noise;
  Vec2 u_s = Vec2::Constant(300.0);
  MpcConfig cfg;
  InitialBelief prior;
};

/// LMPC with a CD-KF in deviation coordinates about the steady state at u_s.
class LmpcController : public Controller
{
public:
  explicit LmpcController(const MpcSetup & setup);

  Vec2 step(const Vec4 & y, const SetpointPreview & preview, double t_k) override;
  void reset() override;
  std::string name() const override { return "lmpc"; }
  StepStats last_stats() const override { return stats_; }

  /// Filtered belief after the latest measurement update (deviation coordinates).
  const GaussianBelief & belief() const { return filtered_; }

private:
  MpcSetup setup_;
  OperatingPoint op_;
  AugmentedModel model_;
  DiscreteAugmentedModel dm_;
  LmpcSolver solver_;
  GaussianBelief predicted_;
  GaussianBelief filtered_;
  Vec2 u_prev_;
  StepStats stats_;
};

/// NMPC with a CD-EKF on the nonlinear augmented model.
class NmpcController : public Controller
{
public:
  explicit NmpcController(const MpcSetup & setup);

  Vec2 step(const Vec4 & y, const SetpointPreview & preview, double t_k) override;
  void reset() override;
  std::string name() const override { return "nmpc"; }
  StepStats last_stats() const override { return stats_; }

  const GaussianBelief & belief() const { return filtered_; }

private:
  MpcSetup setup_;
  OperatingPoint op_;
  AugmentedModel model_;
  NmpcSolver solver_;
  GaussianBelief predicted_;
  GaussianBelief filtered_;
  Vec2 u_prev_;
  StepStats stats_;
};

}  // namespace qts
