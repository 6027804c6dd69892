#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "qts/solvers.hpp"

namespace qts {

void BoxQp::validate() const
{
  const auto n = H.rows();
  if (H.cols() != n || g.size() != n || lower.size() != n || upper.size() != n) {
    throw std::invalid_argument("BoxQp: inconsistent dimensions");
  }
  if ((lower.array() > upper.array()).any()) {
    throw std::invalid_argument("BoxQp: lower bound exceeds upper bound");
  }
  if (!H.isApprox(H.transpose(), 1e-10) && (H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw std::invalid_argument("BoxQp: H is not symmetric");
  }
}

double box_qp_kkt_residual(const BoxQp & qp, const Eigen::VectorXd & x, const ActiveSet & active)
{
  const Eigen::VectorXd grad = qp.H * x + qp.g;
  double r = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    r = std::max(r, std::max(qp.lower(i) - x(i), x(i) - qp.upper(i)));
    switch (active[static_cast<std::size_t>(i)]) {
    case BoundState::Free: r = std::max(r, std::abs(grad(i))); break;
    case BoundState::Lower: r = std::max({r, -grad(i), std::abs(x(i) - qp.lower(i))}); break;
    case BoundState::Upper: r = std::max({r, grad(i), std::abs(x(i) - qp.upper(i))}); break;
    }
  }
  return r;
}

namespace {

/// Cholesky factor of H restricted to an ordered list of free coordinates,
/// updated in O(m^2) when a coordinate joins or leaves the list.
class FreeFactor
{
public:
  explicit FreeFactor(const Eigen::MatrixXd & H) : H_(H), L_(H.rows(), H.rows()) {}

  const std::vector<Eigen::Index> & free() const { return free_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(free_.size()); }

  void assign(std::vector<Eigen::Index> free)
  {
    free_ = std::move(free);
    refactor();
  }

  void add(Eigen::Index i)
  {
    const Eigen::Index m = size();
    Eigen::VectorXd h(m);
    for (Eigen::Index a = 0; a < m; ++a) { h(a) = H_(free_[a], i); }
    if (m > 0) { L_.topLeftCorner(m, m).triangularView<Eigen::Lower>().solveInPlace(h); }
    const double d2 = H_(i, i) + shift_ - h.squaredNorm();
    free_.push_back(i);
    if (!(d2 > 1e-12 * std::max(1.0, std::abs(H_(i, i))))) {
      refactor();
      return;
    }
    L_.row(m).head(m) = h.transpose();
    L_(m, m) = std::sqrt(d2);
  }

  void remove_at(Eigen::Index k)
  {
    const Eigen::Index m = size();
    const Eigen::Index t = m - k - 1;  // trailing size
    Eigen::VectorXd v = L_.col(k).segment(k + 1, t);
    // drop row and column k
    if (t > 0) {
      L_.block(k, 0, t, k) = L_.block(k + 1, 0, t, k).eval();
      L_.block(k, k, t, t) = L_.block(k + 1, k + 1, t, t).eval();
    }
    free_.erase(free_.begin() + k);
    // trailing block absorbs the removed column: L22 L22' + v v'
    for (Eigen::Index j = 0; j < t; ++j) {
      const Eigen::Index c = k + j;
      const double Ljj = L_(c, c);
      const double r = std::hypot(Ljj, v(j));
      const double cs = r / Ljj;
      const double sn = v(j) / Ljj;
      L_(c, c) = r;
      const Eigen::Index rest = t - j - 1;
      if (rest > 0) {
        L_.col(c).segment(c + 1, rest) = (L_.col(c).segment(c + 1, rest) + sn * v.segment(j + 1, rest)) / cs;
        v.segment(j + 1, rest) = cs * v.segment(j + 1, rest) - sn * L_.col(c).segment(c + 1, rest);
      }
    }
  }

  /// Solves H_FF y = rhs (rhs ordered like free()).
  Eigen::VectorXd solve(const Eigen::VectorXd & rhs) const
  {
    const Eigen::Index m = size();
    Eigen::VectorXd y = rhs;
    const auto L = L_.topLeftCorner(m, m);
    L.triangularView<Eigen::Lower>().solveInPlace(y);
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(y);
    return y;
  }

private:
  // Plain factorization, retried with a 1e-10 I shift when it fails.
  void refactor()
  {
    const Eigen::Index m = size();
    Eigen::MatrixXd HFF(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) { HFF(a, b) = H_(free_[a], free_[b]); }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(HFF);
    if (llt.info() != Eigen::Success) {
      shift_ = 1e-10;
      HFF.diagonal().array() += shift_;
      llt.compute(HFF);
      if (llt.info() != Eigen::Success) {
        throw std::runtime_error("solve_box_qp: Hessian is not positive definite");
      }
    }
    L_.topLeftCorner(m, m) = llt.matrixL();
  }

  const Eigen::MatrixXd & H_;
  Eigen::MatrixXd L_;
  std::vector<Eigen::Index> free_;
  double shift_ = 0.0;
};

}  // namespace

QpSolution solve_box_qp(const BoxQp & qp, const ActiveSet * warm_start, const QpOptions & options)
{
  qp.validate();
  const auto n = qp.H.rows();
  const int max_iter = options.max_iterations > 0 ? options.max_iterations
                                                  : std::max<int>(3 * static_cast<int>(n), 3);
  const double tol = options.tolerance * std::max(1.0, qp.g.lpNorm<Eigen::Infinity>());

  QpSolution sol;
  sol.active.assign(static_cast<std::size_t>(n), BoundState::Free);
  if (warm_start && warm_start->size() == static_cast<std::size_t>(n)) { sol.active = *warm_start; }

  Eigen::VectorXd & x = sol.x;
  x.resize(n);
  std::vector<Eigen::Index> initial_free;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto & state = sol.active[static_cast<std::size_t>(i)];
    if (qp.lower(i) == qp.upper(i)) { state = BoundState::Lower; }
    switch (state) {
    case BoundState::Lower: x(i) = qp.lower(i); break;
    case BoundState::Upper: x(i) = qp.upper(i); break;
    case BoundState::Free:
      x(i) = std::clamp(0.0, qp.lower(i), qp.upper(i));
      initial_free.push_back(i);
      break;
    }
  }

  FreeFactor factor(qp.H);
  factor.assign(std::move(initial_free));

  for (sol.iterations = 0; sol.iterations < max_iter; ++sol.iterations) {
    const auto & free = factor.free();
    const Eigen::Index nf = factor.size();

    bool blocked = false;
    if (nf > 0) {
      // minimizer over the free coordinates with the active ones held fixed
      Eigen::VectorXd x_fixed = x;
      for (Eigen::Index a = 0; a < nf; ++a) { x_fixed(free[a]) = 0.0; }
      const Eigen::VectorXd coupling = qp.H * x_fixed;
      Eigen::VectorXd rhs(nf);
      for (Eigen::Index a = 0; a < nf; ++a) { rhs(a) = -(qp.g(free[a]) + coupling(free[a])); }
      const Eigen::VectorXd target = factor.solve(rhs);

      double alpha = 1.0;
      Eigen::Index blocking = -1;
      BoundState blocking_state = BoundState::Free;
      for (Eigen::Index a = 0; a < nf; ++a) {
        const Eigen::Index i = free[a];
        const double p = target(a) - x(i);
        if (p < 0.0 && target(a) < qp.lower(i)) {
          const double t = (qp.lower(i) - x(i)) / p;
          if (t < alpha) { alpha = t; blocking = a; blocking_state = BoundState::Lower; }
        } else if (p > 0.0 && target(a) > qp.upper(i)) {
          const double t = (qp.upper(i) - x(i)) / p;
          if (t < alpha) { alpha = t; blocking = a; blocking_state = BoundState::Upper; }
        }
      }
      alpha = std::max(alpha, 0.0);
      for (Eigen::Index a = 0; a < nf; ++a) {
        const Eigen::Index i = free[a];
        x(i) = std::clamp(x(i) + alpha * (target(a) - x(i)), qp.lower(i), qp.upper(i));
      }
      if (blocking >= 0) {
        const Eigen::Index i = free[blocking];
        sol.active[static_cast<std::size_t>(i)] = blocking_state;
        x(i) = blocking_state == BoundState::Lower ? qp.lower(i) : qp.upper(i);
        factor.remove_at(blocking);
        blocked = true;
      }
    }
    if (blocked) { continue; }

    // at the subspace minimizer: release the bound with the worst multiplier
    const Eigen::VectorXd grad = qp.H * x + qp.g;
    Eigen::Index release = -1;
    double worst = tol;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto state = sol.active[static_cast<std::size_t>(i)];
      if (qp.lower(i) == qp.upper(i)) { continue; }
      const double violation = state == BoundState::Lower   ? -grad(i)
                             : state == BoundState::Upper ? grad(i)
                                                          : 0.0;
      if (violation > worst) { worst = violation; release = i; }
    }
    if (release < 0) {
      sol.status = QpStatus::Optimal;
      ++sol.iterations;
      break;
    }
    sol.active[static_cast<std::size_t>(release)] = BoundState::Free;
    factor.add(release);
  }

  sol.objective = qp.objective(x);
  sol.kkt_residual = box_qp_kkt_residual(qp, x, sol.active);
  return sol;
}

void dump_box_qp(std::ostream & os, const BoxQp & qp, const QpSolution & sol)
{
  const auto n = qp.H.rows();
  os << std::setprecision(17);
  os << "# n," << n << '\n';
  os << "# H\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) { os << (j ? "," : "") << qp.H(i, j); }
    os << '\n';
  }
  os << "# g,lower,upper,x,active\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    os << qp.g(i) << ',' << qp.lower(i) << ',' << qp.upper(i) << ',' << sol.x(i) << ','
       << static_cast<int>(sol.active[static_cast<std::size_t>(i)]) << '\n';
  }
}

}  // namespace qts
