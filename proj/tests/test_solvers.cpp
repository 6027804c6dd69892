#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "qts/controllers.hpp"
#include "qts/rng.hpp"
#include "qts/solvers.hpp"

using namespace qts;

namespace {

BoxQp random_qp(Rng & rng, int n)
{
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) { G(i, j) = rng.normal(); }
  }
  BoxQp qp;
  qp.H = G * G.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
  qp.g.resize(n);
  qp.lower.resize(n);
  qp.upper.resize(n);
  for (int i = 0; i < n; ++i) {
    qp.g(i) = 3.0 * rng.normal();
    const double a = 2.0 * rng.normal(), b = 2.0 * rng.normal();
    qp.lower(i) = std::min(a, b);
    qp.upper(i) = std::max(a, b);
  }
  return qp;
}

struct LmpcFixture
{
  ModelParams p = ModelParams::nominal();
  LinearModel lm = linearize(p, OperatingPoint::at({300.0, 300.0}, Vec4::Zero(), p));
  MpcConfig cfg;
  std::vector<Vec2> targets;
  Vec4 X = Vec4(150.0, -100.0, 60.0, -40.0);
  Vec4 D = Vec4(1.0, -0.5, 4.0, 2.0);
  Vec2 u_prev = Vec2(310.0, 285.0);

  explicit LmpcFixture(int N)
  {
    cfg.N = N;
    for (int j = 1; j <= N; ++j) {
      targets.push_back(lm.op.z_s + (j > N / 2 ? Vec2(4.0, -2.0) : Vec2(1.0, 0.5)));
    }
  }
};

}  // namespace

TEST_CASE("box QP trivial cases")
{
  SUBCASE("unconstrained minimizer")
  {
    BoxQp qp{Eigen::MatrixXd::Identity(3, 3), Eigen::Vector3d(1.0, -2.0, 0.5),
             Eigen::VectorXd::Constant(3, -10.0), Eigen::VectorXd::Constant(3, 10.0)};
    const auto sol = solve_box_qp(qp);
    CHECK(sol.ok());
    CHECK((sol.x - Eigen::Vector3d(-1.0, 2.0, -0.5)).norm() < 1e-12);
  }
  SUBCASE("all coordinates pushed to their bounds")
  {
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(-100.0, 100.0),
             Eigen::Vector2d(-1.0, -1.0), Eigen::Vector2d(1.0, 1.0)};
    const auto sol = solve_box_qp(qp);
    CHECK(sol.ok());
    CHECK(sol.x == Eigen::Vector2d(1.0, -1.0));
    CHECK(sol.active[0] == BoundState::Upper);
    CHECK(sol.active[1] == BoundState::Lower);
  }
  SUBCASE("fixed variable")
  {
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(2.0, -5.0),
             Eigen::Vector2d(2.0, 5.0)};
    const auto sol = solve_box_qp(qp);
    CHECK(sol.x(0) == 2.0);
    CHECK(sol.x(1) == doctest::Approx(-1.0));
  }
  SUBCASE("rejects malformed problems")
  {
    BoxQp qp{Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(1.0, 0.0),
             Eigen::Vector2d(0.0, 1.0)};
    CHECK_THROWS_AS(solve_box_qp(qp), std::invalid_argument);
    qp.lower = Eigen::Vector2d(-1.0, -1.0);
    qp.H(0, 1) = 0.5;
    CHECK_THROWS_AS(solve_box_qp(qp), std::invalid_argument);
    qp.H(1, 0) = 0.5;
    qp.g.resize(3);
    CHECK_THROWS_AS(solve_box_qp(qp), std::invalid_argument);
  }
}

TEST_CASE("box QP matches exhaustive active-set enumeration")
{
  Rng rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    const BoxQp qp = random_qp(rng, n);
    const auto sol = solve_box_qp(qp);
    const auto ref = oracle::enumerate_box_qp(qp.H, qp.g, qp.lower, qp.upper);
    REQUIRE(sol.ok());
    CHECK((sol.x - ref.x).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK(std::abs(sol.objective - ref.objective) < 1e-8 * std::max(1.0, std::abs(ref.objective)));
    CHECK(sol.kkt_residual < 1e-8);
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("no random feasible point beats the box QP solution")
{
  Rng rng(7);
  const BoxQp qp = random_qp(rng, 12);
  const auto sol = solve_box_qp(qp);
  REQUIRE(sol.ok());
  for (int k = 0; k < 1000; ++k) {
    Eigen::VectorXd x(12);
    for (int i = 0; i < 12; ++i) { x(i) = qp.lower(i) + rng.uniform() * (qp.upper(i) - qp.lower(i)); }
    CHECK(qp.objective(x) >= sol.objective - 1e-12);
  }
}

TEST_CASE("warm start changes the path, not the optimum")
{
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const BoxQp qp = random_qp(rng, 40);
    const auto cold = solve_box_qp(qp);
    REQUIRE(cold.ok());
    const auto warm = solve_box_qp(qp, &cold.active);
    REQUIRE(warm.ok());
    CHECK((warm.x - cold.x).norm() < 1e-9);
    CHECK(warm.iterations <= 2);

    // a wrong guess still lands on the same point
    ActiveSet wrong(cold.active.size(), BoundState::Upper);
    const auto recovered = solve_box_qp(qp, &wrong);
    REQUIRE(recovered.ok());
    CHECK((recovered.x - cold.x).norm() < 1e-9);
  }
}

TEST_CASE("iteration cap is reported")
{
  Rng rng(13);
  const BoxQp qp = random_qp(rng, 30);
  QpOptions opts;
  opts.max_iterations = 1;
  const auto sol = solve_box_qp(qp, nullptr, opts);
  CHECK_FALSE(sol.ok());
  CHECK(sol.status == QpStatus::IterationLimit);
}

TEST_CASE("QP dump lists every coordinate")
{
  Rng rng(1);
  const BoxQp qp = random_qp(rng, 3);
  const auto sol = solve_box_qp(qp);
  std::ostringstream os;
  dump_box_qp(os, qp, sol);
  const std::string s = os.str();
  CHECK(s.rfind("# n,3\n# H\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 1 + 1 + 3 + 1 + 3);
}

TEST_CASE("condensed Hessian equals the explicit Gamma' Q Gamma construction")
{
  LmpcFixture f(20);
  const int N = f.cfg.N;
  LmpcSolver solver(f.lm, f.cfg);
  const auto & dm = solver.discrete();

  // Gamma: stacked z responses to stacked inputs
  Eigen::MatrixXd Gamma = Eigen::MatrixXd::Zero(2 * N, 2 * N);
  for (int i = 1; i <= N; ++i) {
    Mat4 Apow = Mat4::Identity();
    for (int l = i - 1; l >= 0; --l) {
      Gamma.block<2, 2>(2 * (i - 1), 2 * l) = f.lm.Cz * Apow * dm.Bbar;
      Apow = Apow * dm.Abar;
    }
  }
  Eigen::MatrixXd Qbar = Eigen::MatrixXd::Zero(2 * N, 2 * N);
  Eigen::MatrixXd Dmat = Eigen::MatrixXd::Zero(2 * N, 2 * N);
  for (int j = 0; j < N; ++j) {
    Qbar.block<2, 2>(2 * j, 2 * j) = f.cfg.Q;
    Dmat.block<2, 2>(2 * j, 2 * j) = Mat2::Identity();
    if (j > 0) { Dmat.block<2, 2>(2 * j, 2 * (j - 1)) = -Mat2::Identity(); }
  }
  Eigen::MatrixXd Sbar = Eigen::MatrixXd::Zero(2 * N, 2 * N);
  for (int j = 0; j < N; ++j) { Sbar.block<2, 2>(2 * j, 2 * j) = f.cfg.S; }
  const Eigen::MatrixXd H_ref = Gamma.transpose() * Qbar * Gamma + Dmat.transpose() * Sbar * Dmat;

  const BoxQp qp = solver.build_qp(f.X, f.D, f.targets, f.u_prev);
  CHECK((qp.H - H_ref).norm() / H_ref.norm() < 1e-12);
}

TEST_CASE("condensed QP objective equals the rolled-out cost")
{
  LmpcFixture f(40);
  LmpcSolver solver(f.lm, f.cfg);
  const BoxQp qp = solver.build_qp(f.X, f.D, f.targets, f.u_prev);
  const auto cost = [&](const Eigen::VectorXd & dU) {
    return oracle::lmpc_rollout_cost(solver.discrete(), f.lm, f.cfg.Q, f.cfg.S, f.X, f.D, f.targets, f.u_prev,
                                     dU + f.lm.op.u_s.replicate(f.cfg.N, 1));
  };
  const double c0 = cost(Eigen::VectorXd::Zero(2 * f.cfg.N));
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd dU(2 * f.cfg.N);
    for (Eigen::Index i = 0; i < dU.size(); ++i) { dU(i) = 30.0 * rng.normal(); }
    const double rolled = cost(dU);
    CHECK(qp.objective(dU) + c0 == doctest::Approx(rolled).epsilon(1e-8));
  }
}

TEST_CASE("condensed gradient matches finite differences of the rolled-out cost")
{
  LmpcFixture f(30);
  LmpcSolver solver(f.lm, f.cfg);
  const BoxQp qp = solver.build_qp(f.X, f.D, f.targets, f.u_prev);
  const auto cost = [&](const Eigen::VectorXd & dU) {
    return oracle::lmpc_rollout_cost(solver.discrete(), f.lm, f.cfg.Q, f.cfg.S, f.X, f.D, f.targets, f.u_prev,
                                     dU + f.lm.op.u_s.replicate(f.cfg.N, 1));
  };
  Rng rng(4);
  Eigen::VectorXd dU(2 * f.cfg.N);
  for (Eigen::Index i = 0; i < dU.size(); ++i) { dU(i) = 10.0 * rng.normal(); }
  const Eigen::VectorXd fd = oracle::gradient_fd(cost, dU, 1e-3);
  const Eigen::VectorXd grad = qp.H * dU + qp.g;
  CHECK((grad - fd).norm() / fd.norm() < 1e-5);
}

TEST_CASE("move gradient and cost agree")
{
  const Mat2 S = Vec2(2.0, 0.5).asDiagonal();
  Eigen::VectorXd u(8);
  u << 1, 2, 3, 1, 0, 0, -2, 4;
  const Vec2 prev(0.5, 0.5);
  const auto f = [&](const Eigen::VectorXd & v) { return move_cost(v, prev, S); };
  CHECK((move_gradient(u, prev, S) - oracle::gradient_fd(f, u, 1e-4)).norm() < 1e-8);
  CHECK(move_cost(Eigen::VectorXd::Constant(4, 0.5), prev, S) == 0.0);
}

TEST_CASE("SQP on linear dynamics reproduces the LMPC QP")
{
  LmpcFixture f(60);
  f.targets.assign(static_cast<std::size_t>(f.cfg.N), f.lm.op.z_s + Vec2(6.0, -3.0));
  LmpcSolver lmpc(f.lm, f.cfg);
  NmpcSolver nmpc(f.p, f.cfg, PredictionModel::Linear, f.lm);

  const auto ql = lmpc.solve(f.X, f.D, f.targets, f.u_prev);
  const auto qn = nmpc.solve(f.lm.op.x_s + f.X, f.lm.op.d_s + f.D, f.targets, f.u_prev);
  REQUIRE(nmpc.last_result().converged);
  REQUIRE_FALSE(ql.stats.fallback);
  CHECK((ql.inputs - qn.inputs).lpNorm<Eigen::Infinity>() < 1e-6);
  // some inputs must sit on a bound for the comparison to cover the active set
  CHECK(((ql.inputs.array() - 350.0).abs() < 1e-9).any());
}

TEST_CASE("SQP at steady state converges immediately")
{
  const ModelParams p = ModelParams::nominal();
  const auto op = OperatingPoint::at({300.0, 300.0}, Vec4::Zero(), p);
  MpcConfig cfg;
  cfg.N = 40;
  NmpcSolver nmpc(p, cfg);
  const std::vector<Vec2> targets(40, op.z_s);
  const auto sol = nmpc.solve(op.x_s, Vec4::Zero(), targets, op.u_s);
  CHECK(nmpc.last_result().converged);
  CHECK(nmpc.last_result().iterations <= 2);
  CHECK((sol.u - op.u_s).norm() < 1e-6);
}

TEST_CASE("SQP line search never increases the merit function")
{
  const ModelParams p = ModelParams::nominal();
  const auto op = OperatingPoint::at({300.0, 300.0}, Vec4::Zero(), p);
  MpcConfig cfg;
  cfg.N = 80;
  NmpcSolver nmpc(p, cfg);
  std::vector<Vec2> targets(80, op.z_s + Vec2(5.0, -4.0));
  const auto sol = nmpc.solve(op.x_s * 0.9, Vec4(0.0, 0.0, 5.0, 0.0), targets, op.u_s);
  const auto & res = nmpc.last_result();
  CHECK(res.converged);
  REQUIRE_FALSE(res.merit_steps.empty());
  for (const auto & [before, after] : res.merit_steps) { CHECK(after <= before); }
  CHECK((sol.u.array() >= cfg.u_min.array()).all());
  CHECK((sol.u.array() <= cfg.u_max.array()).all());
}
