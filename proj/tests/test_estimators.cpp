#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "qts/estimators.hpp"
#include "qts/simulator.hpp"
#include "qts/sysid.hpp"

using namespace qts;

namespace {

AugmentedModel nominal_model(DriftKind kind = DriftKind::Nonlinear, Vec4 d_s = Vec4::Zero())
{
  AugmentedModel m;
  m.params = ModelParams::nominal();
  m.noise.sigma = Vec4::Constant(1.0);
  m.noise.sigma_d = Vec4::Constant(1.0);
  m.noise.r2 = Vec4::Constant(0.02);
  m.drift = kind;
  m.linear = linearize(m.params, OperatingPoint::at({300.0, 300.0}, d_s, m.params));
  return m;
}

Mat8 random_spd(Rng & rng, double scale)
{
  Mat8 G;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) { G(i, j) = rng.normal(); }
  }
  return scale * (G * G.transpose() + Mat8::Identity());
}

}  // namespace

TEST_CASE("zero innovation leaves the mean unchanged")
{
  const auto m = nominal_model();
  GaussianBelief b = InitialBelief{}.make(m.linear->op.x_s, Vec4(1, 2, 3, 4), m);
  const auto upd = filter_update(b, measurement(b.state(), m.params), m);
  CHECK(upd.innovation.norm() < 1e-12);
  CHECK((upd.belief.mean - b.mean).norm() < 1e-9);
  CHECK(upd.belief.cov.trace() < b.cov.trace());
}

TEST_CASE("huge measurement noise gives a posterior equal to the prior")
{
  auto m = nominal_model();
  m.noise.r2 = Vec4::Constant(1e12);
  Rng rng(3);
  GaussianBelief b;
  b.mean << m.linear->op.x_s, Vec4::Zero();
  b.cov = random_spd(rng, 10.0);
  const auto upd = filter_update(b, Vec4(40.0, 30.0, 20.0, 10.0), m);
  CHECK((upd.belief.mean - b.mean).norm() / b.mean.norm() < 1e-6);
  CHECK((upd.belief.cov - b.cov).norm() / b.cov.norm() < 1e-6);
}

TEST_CASE("diagonal prior reduces to the scalar Kalman update per channel")
{
  const auto m = nominal_model();
  const ModelParams & p = m.params;
  GaussianBelief b;
  b.mean << 12000.0, 13000.0, 5000.0, 6000.0, 0.0, 0.0, 0.0, 0.0;
  Vec8 var;
  var << 400.0, 900.0, 100.0, 2500.0, 1.0, 1.0, 1.0, 1.0;
  b.cov = var.asDiagonal();
  const Vec4 y(30.0, 35.0, 14.0, 16.0);
  const auto upd = filter_update(b, y, m);

  for (int i = 0; i < 4; ++i) {
    // y = c m + v with c = 1 / (rho A)
    const double c = 1.0 / (p.rho * p.A(i));
    const double P = var(i), r = m.noise.r2(i);
    const double S = c * P * c + r;
    const double K = P * c / S;
    const double e = y(i) - c * b.mean(i);
    CHECK(upd.innovation(i) == doctest::Approx(e).epsilon(1e-12));
    CHECK(upd.innovation_cov(i, i) == doctest::Approx(S).epsilon(1e-12));
    CHECK(upd.gain(i, i) == doctest::Approx(K).epsilon(1e-12));
    CHECK(upd.belief.mean(i) == doctest::Approx(b.mean(i) + K * e).epsilon(1e-12));
    CHECK(upd.belief.cov(i, i) == doctest::Approx((1.0 - K * c) * P).epsilon(1e-10));
  }
  CHECK((upd.belief.mean.tail<4>()).norm() == 0.0);
}

TEST_CASE("Joseph update never increases the trace")
{
  const auto m = nominal_model();
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    GaussianBelief b;
    b.mean << m.linear->op.x_s, Vec4::Zero();
    b.cov = random_spd(rng, std::pow(10.0, 4.0 * rng.uniform() - 1.0));
    Vec4 y = measurement(b.state(), m.params);
    for (int i = 0; i < 4; ++i) { y(i) += rng.normal(); }
    const auto upd = filter_update(b, y, m);
    CHECK(upd.belief.cov.trace() <= b.cov.trace() * (1.0 + 1e-12));
  }
}

TEST_CASE("no diffusion and no uncertainty keeps the covariance at zero")
{
  auto m = nominal_model();
  m.noise.sigma.setZero();
  m.noise.sigma_d.setZero();
  GaussianBelief b;
  b.mean << m.linear->op.x_s + Vec4(50.0, -20.0, 10.0, 0.0), Vec4::Zero();
  const auto out = ekf_predict(b, {300.0, 300.0}, m, 5.0);
  CHECK(out.cov.norm() == 0.0);
}

TEST_CASE("steady mean stays put")
{
  const auto m = nominal_model();
  GaussianBelief b = InitialBelief{}.make(m.linear->op.x_s, Vec4::Zero(), m);
  const auto out = ekf_predict(b, {300.0, 300.0}, m, 5.0);
  CHECK((out.state() - m.linear->op.x_s).norm() < 1e-9 * m.linear->op.x_s.norm());
  CHECK(out.disturbance().norm() == 0.0);

  GaussianBelief dev;
  const auto dm = discretize_augmented(m, 5.0);
  const auto kf = kf_predict(dev, Vec2::Zero(), dm);
  CHECK(kf.mean.norm() == 0.0);
}

TEST_CASE("Van Loan discretization agrees with quadrature")
{
  const auto m = nominal_model();
  Eigen::MatrixXd Aa = Eigen::MatrixXd::Zero(8, 8);
  Aa.topLeftCorner(4, 4) = m.linear->A;
  Aa.topRightCorner(4, 4) = m.linear->E;
  const Vec8 s = m.diffusion();
  const Eigen::MatrixXd Qc = s.cwiseProduct(s).asDiagonal();
  const double Ts = 5.0;
  const auto [Phi, Qd] = van_loan(Aa, Qc, Ts);

  CHECK((Phi - oracle::expm_taylor(Aa * Ts)).norm() < 1e-12);
  const auto integrand = [&](double t) -> Eigen::MatrixXd {
    const Eigen::MatrixXd F = oracle::expm_taylor(Aa * t);
    return F * Qc * F.transpose();
  };
  const Eigen::MatrixXd ref = oracle::simpson(integrand, Ts, 200);
  CHECK((Qd - ref).norm() / ref.norm() < 1e-10);
}

TEST_CASE("linear-drift EKF covariance follows the discrete Lyapunov recursion")
{
  const auto m = nominal_model(DriftKind::Linear);
  const auto dm = discretize_augmented(m, 5.0);
  Rng rng(5);
  GaussianBelief b;
  b.mean << m.linear->op.x_s, Vec4::Zero();
  b.cov = random_spd(rng, 20.0);
  Mat8 P = b.cov;
  for (int k = 0; k < 50; ++k) {
    b = ekf_predict(b, m.linear->op.u_s, m, 5.0);
    P = dm.Abar * P * dm.Abar.transpose() + dm.Qd;
  }
  CHECK((b.cov - P).norm() / P.norm() < 1e-8);
}

TEST_CASE("EKF on linear drift equals the linear KF")
{
  const auto m = nominal_model(DriftKind::Linear, Vec4(0.0, 0.0, 5.0, -3.0));
  const auto & op = m.linear->op;
  const auto dm = discretize_augmented(m, 5.0);
  Rng rng(21);

  GaussianBelief ekf = InitialBelief{}.make(op.x_s + Vec4(80.0, -60.0, 30.0, 10.0), op.d_s, m);
  GaussianBelief kf = ekf;
  kf.mean.head<4>() -= op.x_s;
  kf.mean.tail<4>() -= op.d_s;

  // 100 RK4 substeps: at the default 10 the truncation error alone is about 1e-8
  double worst = 0.0, worst_cov = 0.0;
  for (int k = 0; k < 400; ++k) {
    Vec4 y = op.y_s;
    for (int i = 0; i < 4; ++i) { y(i) += 0.5 * rng.normal(); }
    const Vec2 u = op.u_s + Vec2(20.0 * rng.normal(), 20.0 * rng.normal());

    const auto ue = filter_update(ekf, y, m);
    const auto uk = filter_update(kf, y - op.y_s, m);
    ekf = ekf_predict(ue.belief, u, m, 5.0, 100);
    kf = kf_predict(uk.belief, u - op.u_s, dm);

    Vec8 shifted = ekf.mean;
    shifted.head<4>() -= op.x_s;
    shifted.tail<4>() -= op.d_s;
    worst = std::max(worst, (shifted - kf.mean).norm() / std::max(1.0, kf.mean.norm()));
    worst_cov = std::max(worst_cov, (ekf.cov - kf.cov).norm() / kf.cov.norm());
  }
  CHECK(worst < 1e-10);
  CHECK(worst_cov < 1e-10);
}

TEST_CASE("disturbance block of the mean is invariant under prediction")
{
  const auto m = nominal_model();
  GaussianBelief b = InitialBelief{}.make(m.linear->op.x_s, Vec4(3.0, -1.0, 7.0, 2.0), m);
  const auto e = ekf_predict(b, {280.0, 320.0}, m, 5.0);
  CHECK(e.disturbance() == b.disturbance());
  const auto k = kf_predict(b, Vec2(10.0, -5.0), m, 5.0);
  CHECK((k.disturbance() - b.disturbance()).norm() < 1e-12);
}

TEST_CASE("covariance stays symmetric positive semidefinite over a long run")
{
  const auto m = nominal_model();
  PlantSetup plant;
  plant.params = m.params;
  plant.noise = m.noise;
  Rng rng(8);
  Vec4 x = m.linear->op.x_s;
  GaussianBelief b = InitialBelief{}.make(x, Vec4::Zero(), m);
  double min_eig = 1.0;
  double asym = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const Vec2 u = (k / 100) % 2 ? Vec2(260.0, 330.0) : Vec2(320.0, 270.0);
    const auto upd = filter_update(b, measure(x, plant.params, plant.noise, rng), m);
    b = ekf_predict(upd.belief, u, m, 5.0);
    for (int s = 0; s < 10; ++s) { x = sde_step(x, u, Vec4::Zero(), plant.params, plant.noise, 0.5, rng); }
    asym = std::max(asym, (b.cov - b.cov.transpose()).norm());
    if (k % 50 == 0) {
      min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Mat8>(b.cov).eigenvalues().minCoeff());
    }
  }
  CHECK(asym == 0.0);
  CHECK(min_eig > 0.0);
}

TEST_CASE("constant measurements at the steady state give vanishing innovations")
{
  const auto m = nominal_model();
  const auto & op = m.linear->op;
  const Eigen::Index N = 200;
  Eigen::MatrixXd Y = op.y_s.transpose().replicate(N, 1);
  Eigen::MatrixXd U = op.u_s.transpose().replicate(N, 1);
  const auto seq = innovation_sequence(Y, U, 5.0, m, InitialBelief{}.make(op.x_s, Vec4::Zero(), m));
  REQUIRE(seq.size() == static_cast<std::size_t>(N));
  for (const auto & inn : seq) { CHECK(inn.e.norm() < 1e-9); }

  // and the same inputs reproduce the same sequence
  Y.col(0).array() += 0.3;
  const auto a = innovation_sequence(Y, U, 5.0, m, InitialBelief{}.make(op.x_s, Vec4::Zero(), m));
  const auto b = innovation_sequence(Y, U, 5.0, m, InitialBelief{}.make(op.x_s, Vec4::Zero(), m));
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].e == b[k].e);
    CHECK(a[k].Re == b[k].Re);
  }
}

TEST_CASE("normalized innovations are chi-square with four degrees of freedom")
{
  ParameterSet truth;
  truth.model = ModelParams::nominal();
  truth.noise.sigma = Vec4::Constant(1.0);
  truth.noise.sigma_d = Vec4::Constant(0.05);
  truth.noise.r2 = Vec4::Constant(0.02);
  const Eigen::MatrixXd U = step_input_sequence(2000, 5.0, 4);
  const Dataset data = generate_synthetic_dataset(truth, U, 5.0, 4, 50);

  AugmentedModel m;
  m.params = truth.model;
  m.noise = truth.noise;
  const Vec4 x0 = steady_state(U.row(0).transpose(), Vec4::Zero(), m.params);
  GaussianBelief initial = InitialBelief{}.make(x0, Vec4::Zero(), m);
  const auto seq = innovation_sequence(data.Y, data.U, data.Ts, m, initial);

  double mean = 0.0;
  for (std::size_t k = 100; k < seq.size(); ++k) { mean += seq[k].e.dot(seq[k].Re.ldlt().solve(seq[k].e)); }
  mean /= static_cast<double>(seq.size() - 100);
  MESSAGE("mean normalized innovation " << mean);
  CHECK(mean == doctest::Approx(4.0).epsilon(0.2));
}

namespace {

// Open-loop plant at u_s with a constant unknown inflow; returns the
// disturbance estimate averaged over the last 200 samples.
Vec4 converged_disturbance(const Vec4 & d_true, bool linear_filter)
{
  const ModelParams p = ModelParams::nominal();
  const Vec2 u_s(300.0, 300.0);
  NoiseParams plant_noise;
  plant_noise.sigma = Vec4::Constant(1.0);
  plant_noise.r2 = Vec4::Constant(0.02);

  AugmentedModel m;
  m.params = p;
  m.noise.sigma = Vec4::Constant(1.0);
  m.noise.sigma_d = Vec4::Constant(1.0);
  m.noise.r2 = Vec4::Constant(0.02);
  // the linear filter is built about the steady state that includes d*
  m.linear = linearize(p, OperatingPoint::at(u_s, d_true, p));
  const auto & op = m.linear->op;
  const auto dm = discretize_augmented(m, 5.0);

  const Vec4 x_nominal = steady_state(u_s, Vec4::Zero(), p);
  GaussianBelief b = InitialBelief{}.make(x_nominal, Vec4::Zero(), m);
  if (linear_filter) {
    b.mean.head<4>() -= op.x_s;
    b.mean.tail<4>() -= op.d_s;
  }

  Rng rng(99);
  Vec4 x = x_nominal;
  Vec4 acc = Vec4::Zero();
  const int N = 1600;
  for (int k = 0; k < N; ++k) {
    const Vec4 y = measure(x, p, plant_noise, rng);
    if (linear_filter) {
      b = kf_predict(filter_update(b, y - op.y_s, m).belief, Vec2::Zero(), dm);
    } else {
      b = ekf_predict(filter_update(b, y, m).belief, u_s, m, 5.0);
    }
    for (int s = 0; s < 10; ++s) { x = sde_step(x, u_s, d_true, p, plant_noise, 0.5, rng); }
    if (k >= N - 200) { acc += b.disturbance() + (linear_filter ? op.d_s : Vec4::Zero()); }
  }
  return acc / 200.0;
}

}  // namespace

TEST_CASE("disturbance estimate converges to an injected constant inflow")
{
  const Vec4 d_true(0.0, 0.0, 25.0, 15.0);
  for (const bool linear : {false, true}) {
    CAPTURE(linear);
    const Vec4 dhat = converged_disturbance(d_true, linear);
    MESSAGE("d_hat " << dhat.transpose());
    // the unexcited channels must stay within 2% of the largest injected flow
    for (int i = 0; i < 4; ++i) { CHECK(std::abs(dhat(i) - d_true(i)) < 0.02 * d_true.maxCoeff()); }
    CHECK(std::abs(dhat(2) - d_true(2)) < 0.02 * d_true(2));
    CHECK(std::abs(dhat(3) - d_true(3)) < 0.02 * d_true(3));
  }
}
