#pragma once

/**
 * @file
 * @brief Dense box-constrained QP solver and Gauss-Newton SQP for multiple shooting.
 */

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "qts/types.hpp"

namespace qts {

/// min 1/2 x'Hx + g'x  s.t.  lower <= x <= upper
struct BoxQp
{
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  double objective(const Eigen::VectorXd & x) const { return 0.5 * x.dot(H * x) + g.dot(x); }
  void validate() const;
};

enum class BoundState : std::int8_t { Free, Lower, Upper };
using ActiveSet = std::vector<BoundState>;

enum class QpStatus { Optimal, IterationLimit };

struct QpSolution
{
  QpStatus status = QpStatus::IterationLimit;
  Eigen::VectorXd x;
  ActiveSet active;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;

  bool ok() const { return status == QpStatus::Optimal; }
};

struct QpOptions
{
  double tolerance = 1e-8;     ///< stationarity, relative to max(1, |g|_inf)
  int max_iterations = -1;     ///< -1 selects 3 n
};

/// Primal active-set method. A warm-start set fixes the listed coordinates at
/// their bounds initially; it only affects the path, never the optimum.
QpSolution solve_box_qp(const BoxQp & qp, const ActiveSet * warm_start = nullptr,
                        const QpOptions & options = {});

/// Stationarity / sign violation of a candidate point.
double box_qp_kkt_residual(const BoxQp & qp, const Eigen::VectorXd & x, const ActiveSet & active);

/// Writes H, g, bounds and solution as CSV blocks for offline inspection.
void dump_box_qp(std::ostream & os, const BoxQp & qp, const QpSolution & sol);

/// Stage-wise linearization of a prediction model used for condensing.
/// State at stage j+1 depends on stage j through A[j], B[j]; stage outputs
/// z_j = J[j-1] s_j for j = 1..N.
struct StageJacobians
{
  std::vector<Mat4> A;   // size N (A[0] unused by the Hessian but kept for layout)
  std::vector<Mat42> B;  // size N
  std::vector<Mat24> J;  // size N, output Jacobian of stages 1..N
};

/// Hessian of 1/2 sum |z_j|_Q^2 + 1/2 sum |u_j - u_{j-1}|_S^2 in the stacked inputs.
/// Built with a backward recursion in O(N^2) small-block operations.
Eigen::MatrixXd condensed_hessian(const StageJacobians & sj, const Mat2 & Q, const Mat2 & S);

/// Gradient of the tracking term: sum_j Gamma_j' Q r_j with r_j the stage residuals (size N).
Eigen::VectorXd condensed_tracking_gradient(const StageJacobians & sj, const Mat2 & Q,
                                            const std::vector<Vec2> & residuals);

/// Gradient of 1/2 sum |u_j - u_{j-1}|_S^2 at the stacked inputs, u_{-1} = previous.
Eigen::VectorXd move_gradient(const Eigen::VectorXd & u, const Vec2 & previous, const Mat2 & S);
double move_cost(const Eigen::VectorXd & u, const Vec2 & previous, const Mat2 & S);

/// Shooting map result: next state and its sensitivities.
struct ShootingStep
{
  Vec4 next;
  Mat4 ds;
  Mat42 du;
};

/// Multiple-shooting NLP with decision layout [s0; u0; s1; u1; ...; s_{N-1}; u_{N-1}; s_N].
///
///   min 1/2 sum_{j=1}^{N} |h(s_j) - target_j|_Q^2 + 1/2 sum_{j=0}^{N-1} |u_j - u_{j-1}|_S^2
///   s.t. s_0 = initial_state, s_{j+1} = F_j(s_j, u_j), u_min <= u_j <= u_max
struct NlpProblem
{
  int horizon = 0;
  Vec4 initial_state = Vec4::Zero();
  Vec2 previous_input = Vec2::Zero();
  std::vector<Vec2> targets;  ///< target_j for j = 1..N (index j-1)
  Mat2 Q = Mat2::Identity();
  Mat2 S = Mat2::Identity();
  Vec2 u_min = Vec2::Constant(-1e300);
  Vec2 u_max = Vec2::Constant(1e300);

  std::function<ShootingStep(int stage, const Vec4 & s, const Vec2 & u)> shoot;
  /// Output map h and its Jacobian.
  std::function<std::pair<Vec2, Mat24>(const Vec4 & s)> output;

  Eigen::Index size() const { return (horizon + 1) * kStates + horizon * kInputs; }
  static Eigen::Index state_offset(int j) { return j * (kStates + kInputs); }
  static Eigen::Index input_offset(int j) { return j * (kStates + kInputs) + kStates; }

  /// Objective at w (no constraint terms).
  double objective(const Eigen::VectorXd & w) const;
};

struct SqpOptions
{
  int max_iterations = 50;
  double step_tolerance = 1e-6;
  double kkt_tolerance = 1e-6;
  double armijo = 1e-4;
};

struct SqpResult
{
  Eigen::VectorXd w;
  double objective = 0.0;
  int iterations = 0;
  int qp_iterations = 0;
  bool converged = false;
  ActiveSet active;                  ///< last QP active set (inputs)
  /// (before, after) merit values of every accepted step, both at that step's penalty.
  std::vector<std::pair<double, double>> merit_steps;
};

/// Gauss-Newton SQP with condensing and an l1-merit backtracking line search.
SqpResult solve_sqp(const NlpProblem & nlp, const Eigen::VectorXd & w0, const SqpOptions & options = {},
                    const ActiveSet * warm_start = nullptr);

}  // namespace qts
