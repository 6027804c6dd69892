#include "qts/model.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

namespace qts {

namespace {

void require(bool ok, const char * what)
{
  if (!ok) { throw std::invalid_argument(what); }
}

template<typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived> & m)
{
  return m.allFinite();
}

}  // namespace

void ModelParams::validate() const
{
  require((a.array() > 0.0).all() && a.allFinite(), "outlet areas must be positive");
  require((A.array() > 0.0).all() && A.allFinite(), "tank areas must be positive");
  require((gamma.array() > 0.0).all() && (gamma.array() < 1.0).all(),
          "valve fractions must lie in (0, 1)");
  require(rho > 0.0 && std::isfinite(rho), "density must be positive");
  require(g_a > 0.0 && std::isfinite(g_a), "gravity must be positive");
}

ModelParams ModelParams::nominal() { return ModelParams{}; }

ModelParams ModelParams::estimated_rig()
{
  ModelParams p;
  p.a << 1.01, 1.25, 1.32, 1.55;
  p.A << 379.84, 378.03, 466.30, 523.12;
  p.gamma << 0.260, 0.353;
  return p;
}

void NoiseParams::validate() const
{
  require((sigma.array() >= 0.0).all() && sigma.allFinite(), "sigma must be non-negative");
  require((sigma_d.array() >= 0.0).all() && sigma_d.allFinite(), "sigma_d must be non-negative");
  require((r2.array() >= 0.0).all() && r2.allFinite(), "r2 must be non-negative");
}

NoiseParams NoiseParams::estimated_rig()
{
  NoiseParams n;
  n.sigma << 7.25, 14.92, 8.98, 14.50;
  n.sigma_d << 0.47, 3.08, 3.92, 3.42;
  n.r2 << 1.44e-2, 1.34e-2, 1.00e-5, 1.00e-5;
  return n;
}

OperatingPoint OperatingPoint::at(const Vec2 & u_s, const Vec4 & d_s, const ModelParams & p)
{
  OperatingPoint op;
  op.u_s = u_s;
  op.d_s = d_s;
  op.x_s = steady_state(u_s, d_s, p);
  op.y_s = measurement(op.x_s, p);
  op.z_s = output(op.x_s, p);
  return op;
}

std::complex<double> SecondOrderTf::evaluate(std::complex<double> s) const
{
  return k / ((tau1 * s + 1.0) * (tau2 * s + 1.0));
}

Vec4 levels(const Vec4 & x, const ModelParams & p)
{
  return x.array() / (p.rho * p.A.array());
}

Vec4 routed_inflow(const Vec2 & u, const ModelParams & p)
{
  return p.rho * (input_matrix(p) * u);
}

Vec4 drift(const Vec4 & x, const Vec2 & u, const Vec4 & d, const ModelParams & p)
{
  if (!all_finite(x) || !all_finite(u) || !all_finite(d)) {
    throw std::invalid_argument("drift: non-finite input");
  }
  if ((u.array() < 0.0).any()) { throw std::invalid_argument("drift: negative pump flow"); }

  const Vec4 h = levels(x, p).cwiseMax(0.0);
  const Vec4 q_out = p.a.array() * (2.0 * p.g_a * h.array()).sqrt();

  Vec4 q_in;
  q_in(0) = p.gamma(0) * u(0) + q_out(2) + d(0);
  q_in(1) = p.gamma(1) * u(1) + q_out(3) + d(1);
  q_in(2) = (1.0 - p.gamma(1)) * u(1) + d(2);
  q_in(3) = (1.0 - p.gamma(0)) * u(0) + d(3);

  return p.rho * (q_in - q_out);
}

Vec4 measurement(const Vec4 & x, const ModelParams & p) { return levels(x, p); }

Vec2 output(const Vec4 & x, const ModelParams & p) { return levels(x, p).head<2>(); }

Mat4 drift_jacobian(const Vec4 & x, const Vec2 & /*u*/, const Vec4 & /*d*/, const ModelParams & p)
{
  const Vec4 h = levels(x, p);
  if ((h.array() <= kHeightTolerance).any()) {
    throw SingularJacobian("drift_jacobian: tank level at or below zero");
  }
  // d(rho q_out,i)/dm_i = a_i sqrt(2 g) / (2 A_i sqrt(h_i))
  const Vec4 k = p.a.array() * std::sqrt(2.0 * p.g_a) / (2.0 * p.A.array() * h.array().sqrt());

  Mat4 J = Mat4::Zero();
  J.diagonal() = -k;
  J(0, 2) = k(2);
  J(1, 3) = k(3);
  return J;
}

Vec4 steady_state(const Vec2 & u_s, const Vec4 & d_s, const ModelParams & p)
{
  const auto height_for = [&](double q_in, double a) {
    if (q_in < 0.0) { throw std::invalid_argument("steady_state: negative inflow requires negative level"); }
    const double r = q_in / a;
    return r * r / (2.0 * p.g_a);
  };

  Vec4 q_in;
  q_in(2) = (1.0 - p.gamma(1)) * u_s(1) + d_s(2);
  q_in(3) = (1.0 - p.gamma(0)) * u_s(0) + d_s(3);
  // at steady state the upper tanks pass their inflow straight through
  q_in(0) = p.gamma(0) * u_s(0) + q_in(2) + d_s(0);
  q_in(1) = p.gamma(1) * u_s(1) + q_in(3) + d_s(1);

  Vec4 x;
  for (int i = 0; i < 4; ++i) { x(i) = p.rho * p.A(i) * height_for(q_in(i), p.a(i)); }
  return x;
}

Mat42 input_matrix(const ModelParams & p)
{
  Mat42 B = Mat42::Zero();
  B(0, 0) = p.gamma(0);
  B(1, 1) = p.gamma(1);
  B(2, 1) = 1.0 - p.gamma(1);
  B(3, 0) = 1.0 - p.gamma(0);
  return B;
}

Mat4 measurement_matrix(const ModelParams & p)
{
  return (1.0 / (p.rho * p.A.array())).matrix().asDiagonal();
}

Mat24 output_matrix(const ModelParams & p) { return measurement_matrix(p).topRows<2>(); }

LinearModel linearize(const ModelParams & p, const OperatingPoint & op)
{
  LinearModel lm;
  lm.A = drift_jacobian(op.x_s, op.u_s, op.d_s, p);
  // drift is rho * (...); with rho = 1 g/cm^3 this is the flow routing itself
  lm.B = p.rho * input_matrix(p);
  lm.E = p.rho * Mat4::Identity();
  lm.C = measurement_matrix(p);
  lm.Cz = output_matrix(p);
  lm.op = op;
  return lm;
}

std::pair<SecondOrderTf, SecondOrderTf> cross_coupling_tfs(const LinearModel & lm)
{
  const Eigen::EigenSolver<Mat4> es(lm.A, false);
  if ((es.eigenvalues().real().array() >= 0.0).any()) {
    throw std::invalid_argument("cross_coupling_tfs: A is not Hurwitz");
  }

  // u_in -> tank upper -> tank lower -> z_out; the chain is exactly second order
  const auto chain = [&](int lower, int upper, int input) {
    const double gain_path = lm.Cz(lower, lower) * lm.A(lower, upper) * lm.B(upper, input);
    SecondOrderTf tf;
    tf.k = gain_path / (lm.A(lower, lower) * lm.A(upper, upper));
    const double t_lower = -1.0 / lm.A(lower, lower);
    const double t_upper = -1.0 / lm.A(upper, upper);
    tf.tau1 = std::max(t_lower, t_upper);
    tf.tau2 = std::min(t_lower, t_upper);
    return tf;
  };

  return {chain(0, 2, 1), chain(1, 3, 0)};
}

Eigen::MatrixXd zoh_exponential(const Eigen::MatrixXd & A, const Eigen::MatrixXd & inputs, double Ts)
{
  const auto n = A.rows();
  const auto m = inputs.cols();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + m, n + m);
  M.topLeftCorner(n, n) = A * Ts;
  M.topRightCorner(n, m) = inputs * Ts;
  const Eigen::MatrixXd F = M.exp();
  return F.topRows(n);
}

DiscreteLinearModel discretize_zoh(const LinearModel & lm, double Ts)
{
  if (!(Ts > 0.0)) { throw std::invalid_argument("discretize_zoh: Ts must be positive"); }
  Eigen::MatrixXd inputs(4, 6);
  inputs << lm.B, lm.E;
  const Eigen::MatrixXd F = zoh_exponential(lm.A, inputs, Ts);

  DiscreteLinearModel d;
  d.Abar = F.leftCols(4);
  d.Bbar = F.middleCols(4, 2);
  d.Ebar = F.rightCols(4);
  d.Ts = Ts;
  return d;
}

}  // namespace qts
