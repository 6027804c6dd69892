#include "qts/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace qts {

void PidGains::validate() const
{
  if (!(tau_i > 0.0) || !(tau_d >= 0.0) || !(tau_t > 0.0) || !(N_filter > 0.0)) {
    throw std::invalid_argument("PidGains: need tau_i > 0, tau_d >= 0, tau_t > 0, N > 0");
  }
  if (!(u_min <= u_max)) { throw std::invalid_argument("PidGains: u_min > u_max"); }
}

PidGains simc_tune(const SecondOrderTf & tf, double Tc, double N_filter)
{
  if (tf.k == 0.0 || !std::isfinite(tf.k)) { throw std::invalid_argument("simc_tune: zero gain"); }
  if (!(Tc > 0.0)) { throw std::invalid_argument("simc_tune: Tc must be positive"); }

  // cascade form first
  const double Kc = tf.tau1 / (tf.k * Tc);
  const double ti = std::min(tf.tau1, 4.0 * Tc);
  const double td = tf.tau2;
  const double alpha = 1.0 + td / ti;

  PidGains g;
  g.Kp = Kc * alpha;
  g.tau_i = ti * alpha;
  g.tau_d = td / alpha;
  g.tau_t = 0.5 * g.tau_i;
  g.N_filter = N_filter;
  return g;
}

PidOutput pid_step(const PidState & state, const PidGains & gains, double zbar, double y, double Ts)
{
  const double y_prev = state.started ? state.y_prev : y;
  const double e = zbar - y;
  const double P = gains.Kp * e;
  const double denom = gains.tau_d + gains.N_filter * Ts;
  const double D = gains.tau_d / denom * state.D_prev
                 - gains.Kp * gains.tau_d * gains.N_filter / denom * (y - y_prev);
  const double v = gains.u_bar + P + state.I + D;
  const double u = std::clamp(v, gains.u_min, gains.u_max);

  PidOutput out;
  out.u = u;
  out.state.I = state.I + Ts * gains.Kp / gains.tau_i * e + Ts / gains.tau_t * (u - v);
  out.state.D_prev = D;
  out.state.y_prev = y;
  out.state.started = true;
  return out;
}

DecentralizedPid::DecentralizedPid(const PidGains & loop1, const PidGains & loop2, double Ts)
    : loop1_(loop1), loop2_(loop2), Ts_(Ts)
{
  loop1_.validate();
  loop2_.validate();
  if (!(Ts > 0.0)) { throw std::invalid_argument("DecentralizedPid: Ts must be positive"); }
}

DecentralizedPid DecentralizedPid::tuned(const ModelParams & p, const OperatingPoint & op, double Ts,
                                         double Tc, double N_filter)
{
  const auto [g12, g21] = cross_coupling_tfs(linearize(p, op));
  PidGains loop1 = simc_tune(g12, Tc, N_filter);
  PidGains loop2 = simc_tune(g21, Tc, N_filter);
  loop1.u_bar = op.u_s(1);
  loop2.u_bar = op.u_s(0);
  return DecentralizedPid(loop1, loop2, Ts);
}

Vec2 DecentralizedPid::step(const Vec4 & y, const SetpointPreview & preview, double)
{
  const Vec2 zbar = preview.current();
  const PidOutput o1 = pid_step(loop1_state_, loop1_, zbar(0), y(0), Ts_);
  const PidOutput o2 = pid_step(loop2_state_, loop2_, zbar(1), y(1), Ts_);
  loop1_state_ = o1.state;
  loop2_state_ = o2.state;
  return {o2.u, o1.u};
}

void MpcConfig::validate() const
{
  if (N < 1 || !(Ts > 0.0)) { throw std::invalid_argument("MpcConfig: need N >= 1 and Ts > 0"); }
  const Eigen::SelfAdjointEigenSolver<Mat2> eq(Q), es(S);
  if (eq.eigenvalues().minCoeff() < -1e-12 || es.eigenvalues().minCoeff() < -1e-12) {
    throw std::invalid_argument("MpcConfig: Q and S must be positive semidefinite");
  }
  if ((u_min.array() > u_max.array()).any()) { throw std::invalid_argument("MpcConfig: u_min > u_max"); }
}

std::vector<Vec2> horizon_targets(const SetpointPreview & preview, const MpcConfig & cfg)
{
  std::vector<Vec2> t(static_cast<std::size_t>(cfg.N));
  const Vec2 now = preview.at(0);
  for (int j = 1; j <= cfg.N; ++j) { t[j - 1] = cfg.anticipatory ? preview.at(j) : now; }
  return t;
}

ActiveSet shift_active_set(const ActiveSet & active, int stage_size)
{
  if (active.size() < static_cast<std::size_t>(stage_size)) { return active; }
  ActiveSet out(active.begin() + stage_size, active.end());
  out.insert(out.end(), active.end() - stage_size, active.end());
  return out;
}

// ---------------------------------------------------------------------------- LMPC

LmpcSolver::LmpcSolver(const LinearModel & lm, const MpcConfig & cfg)
    : lm_(lm), dm_(discretize_zoh(lm, cfg.Ts)), cfg_(cfg)
{
  cfg_.validate();
  sj_.A.assign(cfg.N, dm_.Abar);
  sj_.B.assign(cfg.N, dm_.Bbar);
  sj_.J.assign(cfg.N, lm_.Cz);
  H_ = condensed_hessian(sj_, cfg_.Q, cfg_.S);
}

BoxQp LmpcSolver::build_qp(const Vec4 & X, const Vec4 & D, const std::vector<Vec2> & targets,
                           const Vec2 & u_prev) const
{
  const int N = cfg_.N;
  if (static_cast<int>(targets.size()) != N) { throw std::invalid_argument("LmpcSolver: need N targets"); }

  // residuals of the free response (inputs at u_s, disturbance frozen)
  std::vector<Vec2> r(static_cast<std::size_t>(N));
  const Vec4 forced = dm_.Ebar * D;
  Vec4 Xf = X;
  for (int j = 0; j < N; ++j) {
    Xf = dm_.Abar * Xf + forced;
    r[j] = lm_.Cz * Xf - (targets[j] - lm_.op.z_s);
  }

  BoxQp qp;
  qp.H = H_;
  qp.g = condensed_tracking_gradient(sj_, cfg_.Q, r)
       + move_gradient(Eigen::VectorXd::Zero(2 * N), u_prev - lm_.op.u_s, cfg_.S);
  qp.lower = (cfg_.u_min - lm_.op.u_s).replicate(N, 1);
  qp.upper = (cfg_.u_max - lm_.op.u_s).replicate(N, 1);
  return qp;
}

MpcSolution LmpcSolver::solve(const Vec4 & X, const Vec4 & D, const std::vector<Vec2> & targets,
                              const Vec2 & u_prev)
{
  const BoxQp qp = build_qp(X, D, targets, u_prev);
  const ActiveSet warm = shift_active_set(warm_, kInputs);
  const QpSolution qs = solve_box_qp(qp, warm.empty() ? nullptr : &warm);

  MpcSolution sol;
  sol.stats.qp_iterations = qs.iterations;
  sol.stats.solver_iterations = qs.iterations;
  if (!qs.ok()) {
    sol.stats.fallback = true;
    sol.u = u_prev;
    warm_.clear();
    return sol;
  }
  warm_ = qs.active;
  sol.inputs = qs.x + lm_.op.u_s.replicate(cfg_.N, 1);
  sol.objective = qs.objective;
  sol.u = sol.inputs.head<2>().cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
  return sol;
}

// ---------------------------------------------------------------------------- NMPC

NmpcSolver::NmpcSolver(const ModelParams & p, const MpcConfig & cfg, PredictionModel kind,
                       std::optional<LinearModel> lm, int rk4_steps)
    : p_(p), cfg_(cfg), kind_(kind), lm_(std::move(lm)), rk4_steps_(rk4_steps)
{
  p_.validate();
  cfg_.validate();
  if (rk4_steps_ < 1) { throw std::invalid_argument("NmpcSolver: rk4_steps must be >= 1"); }
  if (kind_ == PredictionModel::Linear) {
    if (!lm_) { throw std::invalid_argument("NmpcSolver: linear prediction needs a LinearModel"); }
    Bu_ = lm_->B;
  } else {
    Bu_ = p_.rho * input_matrix(p_);
  }
}

Vec4 NmpcSolver::rhs(const Vec4 & s, const Vec2 & u, const Vec4 & d) const
{
  if (kind_ == PredictionModel::Linear) {
    return lm_->A * (s - lm_->op.x_s) + lm_->B * (u - lm_->op.u_s) + lm_->E * (d - lm_->op.d_s);
  }
  return drift(s, u, d, p_);
}

Mat4 NmpcSolver::rhs_jacobian(const Vec4 & s, const Vec2 & u, const Vec4 & d) const
{
  if (kind_ == PredictionModel::Linear) { return lm_->A; }
  return drift_jacobian(s, u, d, p_);
}

ShootingStep NmpcSolver::shoot(const Vec4 & s, const Vec2 & u, const Vec4 & d) const
{
  const double h = cfg_.Ts / rk4_steps_;
  Vec4 x = s;
  Mat4 Phi = Mat4::Identity();
  Mat42 Gam = Mat42::Zero();

  // RK4 on the state and its variational equations; this is the exact derivative of the map
  for (int i = 0; i < rk4_steps_; ++i) {
    const Vec4 k1 = rhs(x, u, d);
    const Mat4 J1 = rhs_jacobian(x, u, d);
    const Mat4 P1 = J1 * Phi;
    const Mat42 G1 = J1 * Gam + Bu_;

    const Vec4 x2 = x + 0.5 * h * k1;
    const Mat4 Phi2 = Phi + 0.5 * h * P1;
    const Mat42 Gam2 = Gam + 0.5 * h * G1;
    const Vec4 k2 = rhs(x2, u, d);
    const Mat4 J2 = rhs_jacobian(x2, u, d);
    const Mat4 P2 = J2 * Phi2;
    const Mat42 G2 = J2 * Gam2 + Bu_;

    const Vec4 x3 = x + 0.5 * h * k2;
    const Mat4 Phi3 = Phi + 0.5 * h * P2;
    const Mat42 Gam3 = Gam + 0.5 * h * G2;
    const Vec4 k3 = rhs(x3, u, d);
    const Mat4 J3 = rhs_jacobian(x3, u, d);
    const Mat4 P3 = J3 * Phi3;
    const Mat42 G3 = J3 * Gam3 + Bu_;

    const Vec4 x4 = x + h * k3;
    const Mat4 Phi4 = Phi + h * P3;
    const Mat42 Gam4 = Gam + h * G3;
    const Vec4 k4 = rhs(x4, u, d);
    const Mat4 J4 = rhs_jacobian(x4, u, d);
    const Mat4 P4 = J4 * Phi4;
    const Mat42 G4 = J4 * Gam4 + Bu_;

    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Phi += h / 6.0 * (P1 + 2.0 * P2 + 2.0 * P3 + P4);
    Gam += h / 6.0 * (G1 + 2.0 * G2 + 2.0 * G3 + G4);
  }
  return {x, Phi, Gam};
}

NlpProblem NmpcSolver::problem(const Vec4 & x, const Vec4 & d, const std::vector<Vec2> & targets,
                               const Vec2 & u_prev) const
{
  NlpProblem nlp;
  nlp.horizon = cfg_.N;
  nlp.initial_state = x;
  nlp.previous_input = u_prev;
  nlp.targets = targets;
  nlp.Q = cfg_.Q;
  nlp.S = cfg_.S;
  nlp.u_min = cfg_.u_min;
  nlp.u_max = cfg_.u_max;
  nlp.shoot = [this, d](int, const Vec4 & s, const Vec2 & u) { return shoot(s, u, d); };
  const Mat24 Cz = output_matrix(p_);
  nlp.output = [Cz](const Vec4 & s) { return std::make_pair(Vec2(Cz * s), Cz); };
  return nlp;
}

Eigen::VectorXd NmpcSolver::initial_guess(const Vec4 & x, const Vec2 & u) const
{
  const int N = cfg_.N;
  Eigen::VectorXd w((N + 1) * kStates + N * kInputs);
  for (int j = 0; j < N; ++j) {
    w.segment<4>(NlpProblem::state_offset(j)) = x;
    w.segment<2>(NlpProblem::input_offset(j)) = u.cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
  }
  w.segment<4>(NlpProblem::state_offset(N)) = x;
  return w;
}

Eigen::VectorXd shift_shooting_vector(const Eigen::VectorXd & w, int N)
{
  const Eigen::Index stage = kStates + kInputs;
  if (w.size() != (N + 1) * kStates + N * kInputs) {
    throw std::invalid_argument("shift_shooting_vector: length does not match the horizon");
  }
  Eigen::VectorXd out(w.size());
  // stages 1..N-1 move to 0..N-2, s_N moves to s_{N-1}
  out.head(w.size() - stage) = w.tail(w.size() - stage);
  out.segment<2>(NlpProblem::input_offset(N - 1)) = w.segment<2>(NlpProblem::input_offset(N - 1));
  out.segment<4>(NlpProblem::state_offset(N)) = w.segment<4>(NlpProblem::state_offset(N));
  return out;
}

MpcSolution NmpcSolver::solve(const Vec4 & x, const Vec4 & d, const std::vector<Vec2> & targets,
                              const Vec2 & u_prev)
{
  const NlpProblem nlp = problem(x, d, targets, u_prev);
  const Eigen::VectorXd w0 = w_.size() == nlp.size() ? shift_shooting_vector(w_, cfg_.N)
                                                     : initial_guess(x, u_prev);
  const ActiveSet warm = shift_active_set(active_, kInputs);

  MpcSolution sol;
  try {
    result_ = solve_sqp(nlp, w0, {}, warm.empty() ? nullptr : &warm);
  } catch (const std::exception &) {
    result_ = SqpResult{};
  }
  sol.stats.solver_iterations = result_.iterations;
  sol.stats.qp_iterations = result_.qp_iterations;
  if (!result_.converged || !result_.w.allFinite()) {
    sol.stats.fallback = true;
    sol.u = u_prev;
    reset();
    return sol;
  }
  w_ = result_.w;
  active_ = result_.active;
  sol.objective = result_.objective;
  sol.inputs.resize(2 * cfg_.N);
  for (int j = 0; j < cfg_.N; ++j) { sol.inputs.segment<2>(2 * j) = w_.segment<2>(NlpProblem::input_offset(j)); }
  sol.u = sol.inputs.head<2>().cwiseMax(cfg_.u_min).cwiseMin(cfg_.u_max);
  return sol;
}

// ---------------------------------------------------------------------------- closed-loop wrappers

namespace {

AugmentedModel filter_model(const MpcSetup & s, const OperatingPoint & op, DriftKind kind)
{
  AugmentedModel m;
  m.params = s.params;
  m.noise = s.filter_noise;
  m.drift = kind;
  m.linear = linearize(s.params, op);
  return m;
}

}  // namespace

LmpcController::LmpcController(const MpcSetup & setup)
    : setup_(setup),
      op_(OperatingPoint::at(setup.u_s, Vec4::Zero(), setup.params)),
      model_(filter_model(setup, op_, DriftKind::Linear)),
      dm_(discretize_augmented(model_, setup.cfg.Ts)),
      solver_(*model_.linear, setup.cfg)
{
  reset();
}

void LmpcController::reset()
{
  predicted_ = setup_.prior.make(Vec4::Zero(), Vec4::Zero(), model_);
  filtered_ = predicted_;
  u_prev_ = op_.u_s;
  solver_.reset();
  stats_ = {};
}

Vec2 LmpcController::step(const Vec4 & y, const SetpointPreview & preview, double)
{
  filtered_ = filter_update(predicted_, y - op_.y_s, model_).belief;
  const MpcSolution sol = solver_.solve(filtered_.state(), filtered_.disturbance(),
                                        horizon_targets(preview, setup_.cfg), u_prev_);
  stats_ = sol.stats;
  predicted_ = kf_predict(filtered_, sol.u - op_.u_s, dm_);
  u_prev_ = sol.u;
  return sol.u;
}

NmpcController::NmpcController(const MpcSetup & setup)
    : setup_(setup),
      op_(OperatingPoint::at(setup.u_s, Vec4::Zero(), setup.params)),
      model_(filter_model(setup, op_, DriftKind::Nonlinear)),
      solver_(setup.params, setup.cfg)
{
  reset();
}

void NmpcController::reset()
{
  predicted_ = setup_.prior.make(op_.x_s, Vec4::Zero(), model_);
  filtered_ = predicted_;
  u_prev_ = op_.u_s;
  solver_.reset();
  stats_ = {};
}

Vec2 NmpcController::step(const Vec4 & y, const SetpointPreview & preview, double)
{
  filtered_ = filter_update(predicted_, y, model_).belief;
  const MpcSolution sol = solver_.solve(filtered_.state(), filtered_.disturbance(),
                                        horizon_targets(preview, setup_.cfg), u_prev_);
  stats_ = sol.stats;
  predicted_ = ekf_predict(filtered_, sol.u, model_, setup_.cfg.Ts);
  u_prev_ = sol.u;
  return sol.u;
}

}  // namespace qts
