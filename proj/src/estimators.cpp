#include "qts/estimators.hpp"

#include <string>

#include <Eigen/Cholesky>
#include <unsupported/Eigen/MatrixFunctions>

namespace qts {

namespace {

const LinearModel & require_linear(const AugmentedModel & m)
{
  if (!m.linear) { throw std::invalid_argument("AugmentedModel: linearization not available"); }
  return *m.linear;
}

struct JacobianBlocks
{
  Mat4 Ax;
  Mat4 E;
};

JacobianBlocks jacobian_blocks(const AugmentedModel & m, const Vec8 & xa, const Vec2 & u)
{
  if (m.drift == DriftKind::Linear) {
    const auto & lm = require_linear(m);
    return {lm.A, lm.E};
  }
  return {drift_jacobian(xa.head<4>(), u, xa.tail<4>(), m.params),
          m.params.rho * Mat4::Identity()};
}

}  // namespace

Vec8 AugmentedModel::diffusion() const
{
  Vec8 s;
  s.head<4>() = noise.sigma;
  s.tail<4>() = estimate_disturbance ? noise.sigma_d : Vec4::Zero();
  return s;
}

Mat48 AugmentedModel::measurement_matrix() const
{
  Mat48 C = Mat48::Zero();
  C.leftCols<4>() = qts::measurement_matrix(params);
  return C;
}

Vec8 AugmentedModel::augmented_drift(const Vec8 & xa, const Vec2 & u) const
{
  Vec8 f = Vec8::Zero();
  if (drift == DriftKind::Linear) {
    const auto & lm = require_linear(*this);
    f.head<4>() = lm.A * (xa.head<4>() - lm.op.x_s) + lm.B * (u - lm.op.u_s)
                + lm.E * (xa.tail<4>() - lm.op.d_s);
  } else {
    f.head<4>() = qts::drift(xa.head<4>(), u, xa.tail<4>(), params);
  }
  return f;
}

Mat8 AugmentedModel::augmented_jacobian(const Vec8 & xa, const Vec2 & u) const
{
  const auto blocks = jacobian_blocks(*this, xa, u);
  Mat8 J = Mat8::Zero();
  J.topLeftCorner<4, 4>() = blocks.Ax;
  J.topRightCorner<4, 4>() = blocks.E;
  return J;
}

GaussianBelief InitialBelief::make(const Vec4 & x0, const Vec4 & d0, const AugmentedModel & m) const
{
  GaussianBelief b;
  b.mean << x0, (m.estimate_disturbance ? d0 : Vec4::Zero());
  Vec8 var;
  var.head<4>().setConstant(state_variance);
  var.tail<4>().setConstant(m.estimate_disturbance ? disturbance_variance : 0.0);
  b.cov = var.asDiagonal();
  return b;
}

FilterUpdate filter_update(const GaussianBelief & prior, const Vec4 & y, const AugmentedModel & m)
{
  const Mat48 C = m.measurement_matrix();
  const Mat4 R = m.measurement_covariance();

  FilterUpdate out;
  out.innovation = y - C * prior.mean;
  const Mat84 PCt = prior.cov * C.transpose();
  out.innovation_cov = C * PCt + R;
  out.innovation_cov = 0.5 * (out.innovation_cov + out.innovation_cov.transpose()).eval();

  const Eigen::LLT<Mat4> llt(out.innovation_cov);
  if (llt.info() != Eigen::Success) {
    throw FilterError("filter_update: innovation covariance is not positive definite");
  }
  out.gain = llt.solve(PCt.transpose()).transpose();

  const Mat8 IKC = Mat8::Identity() - out.gain * C;
  out.belief.mean = prior.mean + out.gain * out.innovation;
  out.belief.cov = IKC * prior.cov * IKC.transpose() + out.gain * R * out.gain.transpose();
  symmetrize(out.belief.cov);

  if (!out.belief.mean.allFinite() || !out.belief.cov.allFinite()) {
    throw FilterError("filter_update: non-finite posterior");
  }
  return out;
}

GaussianBelief ekf_predict(const GaussianBelief & b, const Vec2 & u, const AugmentedModel & m,
                           double Ts, int steps)
{
  if (!(Ts > 0.0) || steps < 1) { throw std::invalid_argument("ekf_predict: bad step"); }
  const Vec8 s = m.diffusion();
  const Mat8 Qc = s.cwiseProduct(s).asDiagonal();
  const double h = Ts / steps;

  const auto rhs = [&](const Vec8 & x, const Mat8 & P, Vec8 & dx, Mat8 & dP) {
    dx = m.augmented_drift(x, u);
    const auto J = jacobian_blocks(m, x, u);
    // augmented Jacobian is [[Ax, E], [0, 0]]
    Mat8 AP = Mat8::Zero();
    AP.topRows<4>().noalias() = J.Ax * P.topRows<4>();
    AP.topRows<4>().noalias() += J.E * P.bottomRows<4>();
    dP = AP + AP.transpose() + Qc;
  };

  Vec8 x = b.mean;
  Mat8 P = b.cov;
  Vec8 k1, k2, k3, k4;
  Mat8 K1, K2, K3, K4;
  try {
    for (int i = 0; i < steps; ++i) {
      rhs(x, P, k1, K1);
      rhs(x + 0.5 * h * k1, P + 0.5 * h * K1, k2, K2);
      rhs(x + 0.5 * h * k2, P + 0.5 * h * K2, k3, K3);
      rhs(x + h * k3, P + h * K3, k4, K4);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      P += h / 6.0 * (K1 + 2.0 * K2 + 2.0 * K3 + K4);
    }
  } catch (const SingularJacobian & e) {
    throw FilterError(std::string("ekf_predict: ") + e.what());
  } catch (const std::invalid_argument & e) {
    throw FilterError(std::string("ekf_predict: ") + e.what());
  }

  if (!x.allFinite() || !P.allFinite()) { throw FilterError("ekf_predict: non-finite state"); }
  GaussianBelief out{x, P};
  symmetrize(out.cov);
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> van_loan(const Eigen::MatrixXd & A,
                                                     const Eigen::MatrixXd & Qc, double Ts)
{
  const auto n = A.rows();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  M.topLeftCorner(n, n) = -A * Ts;
  M.topRightCorner(n, n) = Qc * Ts;
  M.bottomRightCorner(n, n) = A.transpose() * Ts;
  const Eigen::MatrixXd F = M.exp();
  const Eigen::MatrixXd Phi = F.bottomRightCorner(n, n).transpose();
  Eigen::MatrixXd Qd = Phi * F.topRightCorner(n, n);
  Qd = 0.5 * (Qd + Qd.transpose()).eval();
  return {Phi, Qd};
}

DiscreteAugmentedModel discretize_augmented(const AugmentedModel & m, double Ts)
{
  if (!(Ts > 0.0)) { throw std::invalid_argument("discretize_augmented: Ts must be positive"); }
  const auto & lm = require_linear(m);

  Eigen::MatrixXd Aa = Eigen::MatrixXd::Zero(8, 8);
  Aa.topLeftCorner(4, 4) = lm.A;
  Aa.topRightCorner(4, 4) = lm.E;
  Eigen::MatrixXd Ba = Eigen::MatrixXd::Zero(8, 2);
  Ba.topRows(4) = lm.B;

  const Eigen::MatrixXd F = zoh_exponential(Aa, Ba, Ts);
  const Vec8 s = m.diffusion();
  const Eigen::MatrixXd Qc = s.cwiseProduct(s).asDiagonal();
  const auto [Phi, Qd] = van_loan(Aa, Qc, Ts);

  DiscreteAugmentedModel dm;
  dm.Abar = F.leftCols(8);
  dm.Bbar = F.rightCols(2);
  dm.Qd = Qd;
  dm.Ts = Ts;
  return dm;
}

GaussianBelief kf_predict(const GaussianBelief & b, const Vec2 & U, const DiscreteAugmentedModel & dm)
{
  GaussianBelief out;
  out.mean = dm.Abar * b.mean + dm.Bbar * U;
  out.cov = dm.Abar * b.cov * dm.Abar.transpose() + dm.Qd;
  symmetrize(out.cov);
  return out;
}

GaussianBelief kf_predict(const GaussianBelief & b, const Vec2 & U, const AugmentedModel & m, double Ts)
{
  return kf_predict(b, U, discretize_augmented(m, Ts));
}

std::vector<Innovation> innovation_sequence(const Eigen::MatrixXd & Y, const Eigen::MatrixXd & U,
                                            double Ts, const AugmentedModel & m,
                                            const GaussianBelief & initial, int ekf_steps)
{
  if (Y.rows() != U.rows() || Y.cols() != 4 || U.cols() != 2) {
    throw std::invalid_argument("innovation_sequence: data must be N x 4 and N x 2");
  }
  std::vector<Innovation> out;
  out.reserve(static_cast<std::size_t>(Y.rows()));

  GaussianBelief b = initial;
  for (Eigen::Index k = 0; k < Y.rows(); ++k) {
    try {
      const FilterUpdate upd = filter_update(b, Y.row(k).transpose(), m);
      out.push_back({upd.innovation, upd.innovation_cov});
      if (k + 1 < Y.rows()) { b = ekf_predict(upd.belief, U.row(k).transpose(), m, Ts, ekf_steps); }
    } catch (const FilterError & e) {
      throw FilterError(std::string(e.what()) + " at sample " + std::to_string(k), k);
    }
  }
  return out;
}

}  // namespace qts
