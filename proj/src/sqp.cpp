#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qts/solvers.hpp"

namespace qts {

Eigen::MatrixXd condensed_hessian(const StageJacobians & sj, const Mat2 & Q, const Mat2 & S)
{
  const int N = static_cast<int>(sj.B.size());
  if (N < 1 || sj.A.size() != sj.B.size() || sj.J.size() != sj.B.size()) {
    throw std::invalid_argument("condensed_hessian: inconsistent stage data");
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2 * N, 2 * N);

  // W[p] accumulates the tracking curvature seen from stage p onward (p = 1..N).
  std::vector<Mat4> W(static_cast<std::size_t>(N) + 1);
  W[N] = sj.J[N - 1].transpose() * Q * sj.J[N - 1];
  for (int p = N - 1; p >= 1; --p) {
    W[p] = sj.J[p - 1].transpose() * Q * sj.J[p - 1] + sj.A[p].transpose() * W[p + 1] * sj.A[p];
  }

  for (int i = 0; i < N; ++i) {
    Mat24 M = sj.B[i].transpose() * W[i + 1];
    H.block<2, 2>(2 * i, 2 * i) = M * sj.B[i];
    for (int l = i - 1; l >= 0; --l) {
      M = M * sj.A[l + 1];
      const Mat2 blk = M * sj.B[l];
      H.block<2, 2>(2 * i, 2 * l) = blk;
      H.block<2, 2>(2 * l, 2 * i) = blk.transpose();
    }
  }

  for (int i = 0; i < N; ++i) {
    H.block<2, 2>(2 * i, 2 * i) += (i + 1 < N ? 2.0 : 1.0) * S;
    if (i > 0) {
      H.block<2, 2>(2 * i, 2 * (i - 1)) -= S;
      H.block<2, 2>(2 * (i - 1), 2 * i) -= S;
    }
  }
  return H;
}

Eigen::VectorXd condensed_tracking_gradient(const StageJacobians & sj, const Mat2 & Q,
                                            const std::vector<Vec2> & residuals)
{
  const int N = static_cast<int>(sj.B.size());
  if (residuals.size() != sj.B.size()) {
    throw std::invalid_argument("condensed_tracking_gradient: need one residual per stage");
  }
  Eigen::VectorXd g(2 * N);
  Vec4 lambda = sj.J[N - 1].transpose() * (Q * residuals[N - 1]);
  g.segment<2>(2 * (N - 1)) = sj.B[N - 1].transpose() * lambda;
  for (int p = N - 1; p >= 1; --p) {
    lambda = sj.J[p - 1].transpose() * (Q * residuals[p - 1]) + sj.A[p].transpose() * lambda;
    g.segment<2>(2 * (p - 1)) = sj.B[p - 1].transpose() * lambda;
  }
  return g;
}

Eigen::VectorXd move_gradient(const Eigen::VectorXd & u, const Vec2 & previous, const Mat2 & S)
{
  const Eigen::Index N = u.size() / 2;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(u.size());
  for (Eigen::Index j = 0; j < N; ++j) {
    const Vec2 prev = j == 0 ? previous : Vec2(u.segment<2>(2 * (j - 1)));
    const Vec2 move = S * (u.segment<2>(2 * j) - prev);
    g.segment<2>(2 * j) += move;
    if (j > 0) { g.segment<2>(2 * (j - 1)) -= move; }
  }
  return g;
}

double move_cost(const Eigen::VectorXd & u, const Vec2 & previous, const Mat2 & S)
{
  double c = 0.0;
  Vec2 prev = previous;
  for (Eigen::Index j = 0; j < u.size() / 2; ++j) {
    const Vec2 du = u.segment<2>(2 * j) - prev;
    c += 0.5 * du.dot(S * du);
    prev = u.segment<2>(2 * j);
  }
  return c;
}

namespace {

Eigen::VectorXd stacked_inputs(const Eigen::VectorXd & w, int N)
{
  Eigen::VectorXd u(2 * N);
  for (int j = 0; j < N; ++j) { u.segment<2>(2 * j) = w.segment<2>(NlpProblem::input_offset(j)); }
  return u;
}

struct Linearization
{
  double objective = 0.0;
  double constraint_l1 = 0.0;
  std::vector<Vec4> defects;    // c_j = F_j - s_{j+1}
  Vec4 initial_defect;          // x_hat - s_0
  std::vector<Vec2> residuals;  // h(s_j) - target_j, j = 1..N
  StageJacobians sj;
};

Linearization linearize_nlp(const NlpProblem & nlp, const Eigen::VectorXd & w)
{
  const int N = nlp.horizon;
  Linearization lin;
  lin.defects.resize(N);
  lin.residuals.resize(N);
  lin.sj.A.resize(N);
  lin.sj.B.resize(N);
  lin.sj.J.resize(N);

  lin.initial_defect = nlp.initial_state - w.segment<4>(NlpProblem::state_offset(0));
  lin.constraint_l1 = lin.initial_defect.lpNorm<1>();
  double tracking = 0.0;
  for (int j = 0; j < N; ++j) {
    const Vec4 s = w.segment<4>(NlpProblem::state_offset(j));
    const Vec2 u = w.segment<2>(NlpProblem::input_offset(j));
    const ShootingStep step = nlp.shoot(j, s, u);
    lin.sj.A[j] = step.ds;
    lin.sj.B[j] = step.du;
    lin.defects[j] = step.next - w.segment<4>(NlpProblem::state_offset(j + 1));
    lin.constraint_l1 += lin.defects[j].lpNorm<1>();

    const auto [z, Jz] = nlp.output(w.segment<4>(NlpProblem::state_offset(j + 1)));
    lin.sj.J[j] = Jz;
    lin.residuals[j] = z - nlp.targets[j];
    tracking += 0.5 * lin.residuals[j].dot(nlp.Q * lin.residuals[j]);
  }
  lin.objective = tracking + move_cost(stacked_inputs(w, N), nlp.previous_input, nlp.S);
  if (!std::isfinite(lin.objective) || !std::isfinite(lin.constraint_l1)) {
    throw std::runtime_error("solve_sqp: non-finite objective or constraints");
  }
  return lin;
}

}  // namespace

double NlpProblem::objective(const Eigen::VectorXd & w) const
{
  double f = move_cost(stacked_inputs(w, horizon), previous_input, S);
  for (int j = 1; j <= horizon; ++j) {
    const Vec2 r = output(w.segment<4>(state_offset(j))).first - targets[j - 1];
    f += 0.5 * r.dot(Q * r);
  }
  return f;
}

SqpResult solve_sqp(const NlpProblem & nlp, const Eigen::VectorXd & w0, const SqpOptions & options,
                    const ActiveSet * warm_start)
{
  const int N = nlp.horizon;
  if (N < 1 || w0.size() != nlp.size() || static_cast<int>(nlp.targets.size()) != N || !nlp.shoot
      || !nlp.output) {
    throw std::invalid_argument("solve_sqp: malformed problem");
  }

  SqpResult res;
  res.w = w0;
  if (warm_start) { res.active = *warm_start; }
  double mu = 0.0;

  Linearization lin = linearize_nlp(nlp, res.w);
  for (res.iterations = 0; res.iterations < options.max_iterations;) {
    // free response of the linearized dynamics to the current defects
    std::vector<Vec4> shat(N + 1);
    shat[0] = lin.initial_defect;
    for (int j = 0; j < N; ++j) { shat[j + 1] = lin.sj.A[j] * shat[j] + lin.defects[j]; }
    std::vector<Vec2> zhat(N);
    for (int j = 0; j < N; ++j) { zhat[j] = lin.residuals[j] + lin.sj.J[j] * shat[j + 1]; }

    const Eigen::VectorXd u = stacked_inputs(res.w, N);
    BoxQp qp;
    qp.H = condensed_hessian(lin.sj, nlp.Q, nlp.S);
    qp.g = condensed_tracking_gradient(lin.sj, nlp.Q, zhat) + move_gradient(u, nlp.previous_input, nlp.S);
    qp.lower = nlp.u_min.replicate(N, 1) - u;
    qp.upper = nlp.u_max.replicate(N, 1) - u;
    qp.lower = qp.lower.cwiseMin(0.0);  // tolerate iterates sitting a hair outside the box
    qp.upper = qp.upper.cwiseMax(0.0);

    // first-order optimality of the current iterate
    double kkt = 0.0;
    for (const auto & c : lin.defects) { kkt = std::max(kkt, c.lpNorm<Eigen::Infinity>()); }
    kkt = std::max(kkt, lin.initial_defect.lpNorm<Eigen::Infinity>());
    for (Eigen::Index i = 0; i < qp.g.size(); ++i) {
      kkt = std::max(kkt, std::abs(std::clamp(-qp.g(i), qp.lower(i), qp.upper(i))));
    }
    if (kkt < options.kkt_tolerance) {
      res.converged = true;
      break;
    }

    const QpSolution qs = solve_box_qp(qp, res.active.empty() ? nullptr : &res.active);
    res.qp_iterations += qs.iterations;
    res.active = qs.active;
    ++res.iterations;

    // expand the input step into the full primal step
    Eigen::VectorXd p = Eigen::VectorXd::Zero(nlp.size());
    Vec4 ds = lin.initial_defect;
    p.segment<4>(NlpProblem::state_offset(0)) = ds;
    double dphi = 0.0;
    double curvature = 0.0;
    Vec2 du_prev = Vec2::Zero();
    for (int j = 0; j < N; ++j) {
      const Vec2 du = qs.x.segment<2>(2 * j);
      p.segment<2>(NlpProblem::input_offset(j)) = du;
      ds = lin.sj.A[j] * ds + lin.sj.B[j] * du + lin.defects[j];
      p.segment<4>(NlpProblem::state_offset(j + 1)) = ds;
      const Vec2 dz = lin.sj.J[j] * ds;
      dphi += lin.residuals[j].dot(nlp.Q * dz);
      curvature += 0.5 * dz.dot(nlp.Q * dz);
      const Vec2 move = du - du_prev;
      curvature += 0.5 * move.dot(nlp.S * move);
      du_prev = du;
    }
    dphi += qs.x.dot(move_gradient(u, nlp.previous_input, nlp.S));
    const double step_norm = p.lpNorm<Eigen::Infinity>();

    if (lin.constraint_l1 > 0.0) {
      mu = std::max(mu, (dphi + std::max(curvature, 0.0)) / (0.5 * lin.constraint_l1));
    }
    const double slope = dphi - mu * lin.constraint_l1;
    const double merit0 = lin.objective + mu * lin.constraint_l1;

    if (step_norm < options.step_tolerance) {
      res.converged = true;
      break;
    }
    if (slope >= 0.0) { break; }  // no descent available from the linearization

    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      const Eigen::VectorXd trial = res.w + alpha * p;
      Linearization cand;
      try {
        cand = linearize_nlp(nlp, trial);
      } catch (const std::exception &) {
        continue;
      }
      const double merit = cand.objective + mu * cand.constraint_l1;
      if (merit <= merit0 + options.armijo * alpha * slope) {
        res.merit_steps.emplace_back(merit0, merit);
        res.w = trial;
        lin = std::move(cand);
        accepted = true;
        break;
      }
    }
    if (!accepted) { break; }
    if (alpha * step_norm < options.step_tolerance) {
      res.converged = true;
      break;
    }
  }
  res.objective = lin.objective;
  return res;
}

}  // namespace qts
