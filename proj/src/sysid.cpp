#include "qts/sysid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <Eigen/Cholesky>

#include "qts/rng.hpp"

namespace qts {

void Dataset::validate() const
{
  if (Y.cols() != 4 || U.cols() != 2) { throw std::invalid_argument("Dataset: Y must be N x 4 and U N x 2"); }
  if (Y.rows() != U.rows()) { throw std::invalid_argument("Dataset: Y and U row counts differ"); }
  if (!(Ts > 0.0)) { throw std::invalid_argument("Dataset: Ts must be positive"); }
  if (!Y.allFinite() || !U.allFinite()) { throw std::invalid_argument("Dataset: non-finite entries"); }
}

Dataset dataset_from_log(const TrajectoryLog & log, double Ts, const std::string & label)
{
  Dataset d;
  const auto n = static_cast<Eigen::Index>(log.size());
  d.Y.resize(n, 4);
  d.U.resize(n, 2);
  for (Eigen::Index k = 0; k < n; ++k) {
    d.Y.row(k) = log.y[static_cast<std::size_t>(k)].transpose();
    d.U.row(k) = log.u[static_cast<std::size_t>(k)].transpose();
  }
  d.Ts = Ts;
  d.label = label;
  d.validate();
  return d;
}

Eigen::VectorXd ParameterSet::flatten() const
{
  Eigen::VectorXd t(kSize);
  t << model.a, model.A, model.gamma, noise.sigma, noise.sigma_d, noise.r2;
  return t;
}

ParameterSet ParameterSet::unflatten(const Eigen::VectorXd & theta, const ParameterSet & base)
{
  if (theta.size() != kSize) { throw std::invalid_argument("ParameterSet: expected 22 entries"); }
  ParameterSet p = base;
  p.model.a = theta.segment<4>(kA);
  p.model.A = theta.segment<4>(kArea);
  p.model.gamma = theta.segment<2>(kGamma);
  p.noise.sigma = theta.segment<4>(kSigma);
  p.noise.sigma_d = theta.segment<4>(kSigmaD);
  p.noise.r2 = theta.segment<4>(kR2);
  return p;
}

const std::array<std::string, ParameterSet::kSize> & ParameterSet::names()
{
  static const std::array<std::string, kSize> n{
      "a1",     "a2",     "a3",     "a4",     "A1",       "A2",       "A3",       "A4",
      "gamma1", "gamma2", "sigma1", "sigma2", "sigma3",   "sigma4",   "sigma_d1", "sigma_d2",
      "sigma_d3", "sigma_d4", "r2_1", "r2_2",   "r2_3",     "r2_4"};
  return n;
}

double negative_log_likelihood(const AugmentedModel & m, const Dataset & data, const GaussianBelief & initial,
                               int ekf_steps)
{
  data.validate();
  std::vector<Innovation> innov;
  try {
    innov = innovation_sequence(data.Y, data.U, data.Ts, m, initial, ekf_steps);
  } catch (const FilterError &) {
    return std::numeric_limits<double>::infinity();
  }

  double v = 0.0;
  for (const auto & in : innov) {
    const Eigen::LLT<Mat4> llt(in.Re);
    if (llt.info() != Eigen::Success) { return std::numeric_limits<double>::infinity(); }
    const Vec4 w = llt.matrixL().solve(in.e);
    v += 2.0 * llt.matrixLLT().diagonal().array().log().sum() + w.squaredNorm();
  }
  v = 0.5 * v + 0.5 * static_cast<double>(innov.size() * 4) * std::log(2.0 * std::numbers::pi);
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

double negative_log_likelihood(const ParameterSet & theta, const Dataset & data, const LikelihoodOptions & options)
{
  AugmentedModel m;
  m.params = theta.model;
  m.noise = theta.noise;
  m.estimate_disturbance = options.estimate_disturbance;
  try {
    m.params.validate();
    m.noise.validate();
    const Vec4 x0 = steady_state(data.U.row(0).transpose(), Vec4::Zero(), m.params);
    return negative_log_likelihood(m, data, options.prior.make(x0, Vec4::Zero(), m), options.ekf_steps);
  } catch (const std::invalid_argument &) {
    return std::numeric_limits<double>::infinity();
  }
}

namespace {

EstimationSpec default_spec()
{
  EstimationSpec s;
  s.lower.resize(ParameterSet::kSize);
  s.upper.resize(ParameterSet::kSize);
  s.lower << Vec4::Constant(0.05), Vec4::Constant(20.0), Vec2::Constant(0.01), Vec4::Constant(1e-6),
      Vec4::Constant(1e-6), Vec4::Constant(1e-10);
  s.upper << Vec4::Constant(20.0), Vec4::Constant(1e4), Vec2::Constant(0.99), Vec4::Constant(1e3),
      Vec4::Constant(1e3), Vec4::Constant(1e2);
  s.log_scale.fill(true);
  return s;
}

}  // namespace

EstimationSpec EstimationSpec::drift_stage()
{
  EstimationSpec s = default_spec();
  for (int i = ParameterSet::kA; i < ParameterSet::kSigma; ++i) { s.free[i] = true; }
  s.likelihood.estimate_disturbance = false;
  return s;
}

EstimationSpec EstimationSpec::diffusion_stage()
{
  EstimationSpec s = default_spec();
  for (int i = ParameterSet::kSigma; i < ParameterSet::kSize; ++i) { s.free[i] = true; }
  s.likelihood.estimate_disturbance = true;
  return s;
}

int EstimationSpec::free_count() const
{
  return static_cast<int>(std::count(free.begin(), free.end(), true));
}

void EstimationSpec::validate() const
{
  if (lower.size() != ParameterSet::kSize || upper.size() != ParameterSet::kSize) {
    throw std::invalid_argument("EstimationSpec: bounds need 22 entries");
  }
  for (int i = 0; i < ParameterSet::kSize; ++i) {
    if (!(lower(i) <= upper(i))) { throw std::invalid_argument("EstimationSpec: lower > upper"); }
    if (log_scale[i] && !(lower(i) > 0.0)) {
      throw std::invalid_argument("EstimationSpec: log-scaled parameter needs a positive lower bound");
    }
  }
  if (free_count() == 0) { throw std::invalid_argument("EstimationSpec: nothing to estimate"); }
  if (max_iterations < 1 || !(tolerance > 0.0) || !(initial_step > 0.0)) {
    throw std::invalid_argument("EstimationSpec: bad optimizer options");
  }
}

namespace {

// Out-of-bounds points get a large finite value so the simplex arithmetic stays finite.
constexpr double kPenalty = 1e100;

struct Objective
{
  const Dataset * data;
  const EstimationSpec * spec;
  ParameterSet base;
  std::vector<int> index;  // free coordinate -> flat index
  int evaluations = 0;

  Eigen::VectorXd to_theta(const gsl_vector * z) const
  {
    Eigen::VectorXd theta = base.flatten();
    for (std::size_t a = 0; a < index.size(); ++a) {
      const double v = gsl_vector_get(z, a);
      theta(index[a]) = spec->log_scale[index[a]] ? std::exp(v) : v;
    }
    return theta;
  }

  double operator()(const gsl_vector * z)
  {
    ++evaluations;
    const Eigen::VectorXd theta = to_theta(z);
    for (int i : index) {
      if (!(theta(i) >= spec->lower(i) && theta(i) <= spec->upper(i))) { return kPenalty; }
    }
    const double v = negative_log_likelihood(ParameterSet::unflatten(theta, base), *data, spec->likelihood);
    return std::isfinite(v) ? v : kPenalty;
  }
};

double objective_trampoline(const gsl_vector * z, void * params)
{
  return (*static_cast<Objective *>(params))(z);
}

}  // namespace

EstimationResult estimate_parameters(const Dataset & data, const ParameterSet & theta0, const EstimationSpec & spec)
{
  data.validate();
  spec.validate();
  const Eigen::VectorXd t0 = theta0.flatten();

  Objective obj{&data, &spec, theta0, {}, 0};
  for (int i = 0; i < ParameterSet::kSize; ++i) {
    if (!spec.free[i]) { continue; }
    if (!(t0(i) >= spec.lower(i) && t0(i) <= spec.upper(i))) {
      throw std::invalid_argument("estimate_parameters: initial " + ParameterSet::names()[i] + " outside bounds");
    }
    obj.index.push_back(i);
  }
  const auto n = obj.index.size();

  gsl_set_error_handler_off();
  gsl_vector * z = gsl_vector_alloc(n);
  gsl_vector * step = gsl_vector_alloc(n);
  for (std::size_t a = 0; a < n; ++a) {
    const int i = obj.index[a];
    gsl_vector_set(z, a, spec.log_scale[i] ? std::log(t0(i)) : t0(i));
    gsl_vector_set(step, a, spec.log_scale[i] ? spec.initial_step : spec.initial_step * std::max(1.0, std::abs(t0(i))));
  }

  gsl_multimin_function fn{&objective_trampoline, n, &obj};
  gsl_multimin_fminimizer * nm = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);

  EstimationResult res;
  double best = std::numeric_limits<double>::infinity();
  for (int round = 0; round <= spec.restarts && res.iterations < spec.max_iterations; ++round) {
    gsl_multimin_fminimizer_set(nm, &fn, z, step);
    if (round == 0) { res.trace.push_back(gsl_multimin_fminimizer_minimum(nm)); }
    bool converged = false;
    while (res.iterations < spec.max_iterations) {
      ++res.iterations;
      if (gsl_multimin_fminimizer_iterate(nm) != GSL_SUCCESS) { break; }
      res.trace.push_back(gsl_multimin_fminimizer_minimum(nm));
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(nm), spec.tolerance) == GSL_SUCCESS) {
        converged = true;
        break;
      }
    }
    const double value = gsl_multimin_fminimizer_minimum(nm);
    gsl_vector_memcpy(z, gsl_multimin_fminimizer_x(nm));
    res.converged = converged;
    const bool stalled = best - value < spec.restart_gain;
    best = std::min(best, value);
    if (!converged || stalled) { break; }
  }
  res.value = best;
  res.theta = ParameterSet::unflatten(obj.to_theta(z), theta0);
  res.evaluations = obj.evaluations;

  gsl_multimin_fminimizer_free(nm);
  gsl_vector_free(z);
  gsl_vector_free(step);
  return res;
}

TwoStageResult identify_two_stage(const Dataset & data, const ParameterSet & theta0, const Vec4 & r2_fixed,
                                  EstimationSpec stage1, EstimationSpec stage2)
{
  TwoStageResult out;
  ParameterSet start = theta0;
  start.noise.r2 = r2_fixed;
  stage1.likelihood.estimate_disturbance = false;
  out.drift = estimate_parameters(data, start, stage1);

  ParameterSet second = theta0;
  second.model = out.drift.theta.model;
  stage2.likelihood.estimate_disturbance = true;
  for (int i = ParameterSet::kA; i < ParameterSet::kSigma; ++i) { stage2.free[i] = false; }
  out.diffusion = estimate_parameters(data, second, stage2);
  return out;
}

double goodness_of_fit(const Eigen::MatrixXd & Y, const Eigen::MatrixXd & Ysim)
{
  if (Y.rows() != Ysim.rows() || Y.cols() != Ysim.cols() || Y.rows() == 0) {
    throw std::invalid_argument("goodness_of_fit: size mismatch");
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < Y.cols(); ++i) {
    const double spread = (Y.col(i).array() - Y.col(i).mean()).matrix().norm();
    if (!(spread > 0.0)) {
      throw std::domain_error("goodness_of_fit: channel " + std::to_string(i + 1) + " is constant");
    }
    total += 1.0 - (Y.col(i) - Ysim.col(i)).norm() / spread;
  }
  return 100.0 * total / static_cast<double>(Y.cols());
}

Eigen::MatrixXd simulate_noise_free(const ModelParams & p, const Eigen::MatrixXd & U, double Ts, const Vec4 & x0,
                                    int rk4_steps)
{
  if (U.cols() != 2 || !(Ts > 0.0) || rk4_steps < 1) {
    throw std::invalid_argument("simulate_noise_free: bad arguments");
  }
  const Vec4 d = Vec4::Zero();
  const double h = Ts / rk4_steps;
  Eigen::MatrixXd Y(U.rows(), 4);
  Vec4 x = x0;
  for (Eigen::Index k = 0; k < U.rows(); ++k) {
    Y.row(k) = measurement(x, p).transpose();
    const Vec2 u = U.row(k).transpose();
    for (int s = 0; s < rk4_steps; ++s) {
      const Vec4 k1 = drift(x, u, d, p);
      const Vec4 k2 = drift(x + 0.5 * h * k1, u, d, p);
      const Vec4 k3 = drift(x + 0.5 * h * k2, u, d, p);
      const Vec4 k4 = drift(x + h * k3, u, d, p);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return Y;
}

Vec4 estimate_noise_covariance(const std::vector<Dataset> & segments, double inflation)
{
  if (segments.empty()) { throw std::invalid_argument("estimate_noise_covariance: no segments"); }
  Vec4 ss = Vec4::Zero();
  double dof = 0.0;
  for (const auto & seg : segments) {
    if (seg.Y.rows() < 10 || seg.Y.cols() != 4) {
      throw std::invalid_argument("estimate_noise_covariance: segments need at least 10 samples of 4 channels");
    }
    const Eigen::RowVector4d mean = seg.Y.colwise().mean();
    ss += (seg.Y.rowwise() - mean).colwise().squaredNorm().transpose();
    dof += static_cast<double>(seg.Y.rows() - 1);
  }
  Vec4 r2 = ss / dof;
  r2.tail<2>() *= inflation;
  return r2;
}

Eigen::MatrixXd step_input_sequence(Eigen::Index samples, double Ts, std::uint64_t seed,
                                    const StepInputOptions & o)
{
  if (samples < 3 || !(Ts > 0.0) || !(o.hold_min > 0.0) || o.hold_max < o.hold_min) {
    throw std::invalid_argument("step_input_sequence: bad arguments");
  }
  Rng rng(seed);
  Eigen::MatrixXd U(samples, 2);
  const Eigen::Index third = samples / 3;
  Vec2 u = o.u_base;
  Eigen::Index next_change = 0;
  for (Eigen::Index k = 0; k < samples; ++k) {
    const int phase = k < third ? 0 : (k < 2 * third ? 1 : 2);
    if (k == third || k == 2 * third) { u = o.u_base; }
    if (k >= next_change || k == third || k == 2 * third) {
      const auto level = [&] { return o.u_low + (o.u_high - o.u_low) * rng.uniform(); };
      if (phase == 0 || phase == 2) { u(0) = level(); }
      if (phase == 1 || phase == 2) { u(1) = level(); }
      const double hold = o.hold_min + (o.hold_max - o.hold_min) * rng.uniform();
      next_change = k + std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::round(hold / Ts)));
    }
    U.row(k) = u.transpose();
  }
  return U;
}

Dataset generate_synthetic_dataset(const ParameterSet & truth, const Eigen::MatrixXd & U, double Ts,
                                   std::uint64_t seed, int substeps)
{
  truth.model.validate();
  truth.noise.validate();
  if (U.cols() != 2 || U.rows() < 1 || substeps < 1) {
    throw std::invalid_argument("generate_synthetic_dataset: bad arguments");
  }
  Rng process(Rng::derive(seed, 0));
  Rng sensor(Rng::derive(seed, 1));
  const double dt = Ts / substeps;
  const double sq = std::sqrt(dt);

  Dataset data;
  data.Ts = Ts;
  data.U = U;
  data.Y.resize(U.rows(), 4);
  Vec4 x = steady_state(U.row(0).transpose(), Vec4::Zero(), truth.model);
  Vec4 d = Vec4::Zero();
  for (Eigen::Index k = 0; k < U.rows(); ++k) {
    data.Y.row(k) = measure(x, truth.model, truth.noise, sensor).transpose();
    const Vec2 u = U.row(k).transpose();
    for (int s = 0; s < substeps; ++s) {
      Vec4 xi, eta;
      for (int i = 0; i < 4; ++i) { xi(i) = process.normal(); }
      for (int i = 0; i < 4; ++i) { eta(i) = process.normal(); }
      x = (x + drift(x, u, d, truth.model) * dt + sq * truth.noise.sigma.cwiseProduct(xi)).cwiseMax(0.0);
      d += sq * truth.noise.sigma_d.cwiseProduct(eta);
    }
  }
  return data;
}

}  // namespace qts
