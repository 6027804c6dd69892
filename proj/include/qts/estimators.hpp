#pragma once

/**
 * @file
 * @brief Continuous-discrete Kalman filtering on the disturbance-augmented model.
 *
 * The augmented state is [x; d] with integrating disturbances dd = sigma_d dw.
 * The extended filter integrates the mean and covariance ODEs with RK4; the
 * linear filter works in deviation coordinates about an operating point and
 * uses the exact ZOH / Van Loan discretization.
 */

#include <optional>
#include <stdexcept>
#include <vector>

#include "qts/model.hpp"

namespace qts {

struct GaussianBelief
{
  Vec8 mean = Vec8::Zero();
  Mat8 cov = Mat8::Zero();

  Vec4 state() const { return mean.head<4>(); }
  Vec4 disturbance() const { return mean.tail<4>(); }
};

/// Which drift the extended filter integrates.
enum class DriftKind {
  Nonlinear,  ///< the tank mass balances
  Linear,     ///< affine drift A (x - x_s) + B (u - u_s) + E (d - d_s) about `linear.op`
};

struct AugmentedModel
{
  ModelParams params;
  NoiseParams noise;
  DriftKind drift = DriftKind::Nonlinear;
  std::optional<LinearModel> linear;  ///< required for DriftKind::Linear and the linear filter
  /// false pins the disturbance states at zero (sigma_d ignored, zero prior covariance).
  bool estimate_disturbance = true;

  Vec8 diffusion() const;  ///< diagonal of sigma_a
  Mat48 measurement_matrix() const;
  Mat4 measurement_covariance() const { return noise.r2.asDiagonal(); }

  Vec8 augmented_drift(const Vec8 & xa, const Vec2 & u) const;
  Mat8 augmented_jacobian(const Vec8 & xa, const Vec2 & u) const;
};

/// Weakly informative prior: mean [x0; d0], cov diag(state_var, disturbance_var).
struct InitialBelief
{
  double state_variance = 100.0;      // [g^2]
  double disturbance_variance = 25.0;  // [(cm^3/s)^2]

  GaussianBelief make(const Vec4 & x0, const Vec4 & d0, const AugmentedModel & m) const;
};

class FilterError : public std::runtime_error
{
public:
  explicit FilterError(const std::string & what, long index = -1)
      : std::runtime_error(what), index_(index)
  {}
  long index() const { return index_; }

private:
  long index_;
};

struct FilterUpdate
{
  GaussianBelief belief;
  Vec4 innovation;
  Mat4 innovation_cov;
  Mat84 gain;
};

/// Measurement update with Joseph-form covariance. y is in the same
/// coordinates as the belief (absolute for the EKF, deviation for the KF).
FilterUpdate filter_update(const GaussianBelief & prior, const Vec4 & y, const AugmentedModel & m);

/// RK4 with `steps` fixed steps on the mean and the covariance ODEs.
GaussianBelief ekf_predict(const GaussianBelief & b, const Vec2 & u, const AugmentedModel & m,
                           double Ts, int steps = 10);

/// Exact discretization of the augmented linear model.
struct DiscreteAugmentedModel
{
  Mat8 Abar;
  Mat82 Bbar;
  Mat8 Qd;
  double Ts = 0.0;
};

DiscreteAugmentedModel discretize_augmented(const AugmentedModel & m, double Ts);

/// Van Loan: Phi = exp(A Ts), Qd = int_0^Ts exp(A s) Qc exp(A s)' ds.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> van_loan(const Eigen::MatrixXd & A,
                                                     const Eigen::MatrixXd & Qc, double Ts);

/// Linear prediction in deviation coordinates, U = u - u_s.
GaussianBelief kf_predict(const GaussianBelief & b, const Vec2 & U, const DiscreteAugmentedModel & dm);
GaussianBelief kf_predict(const GaussianBelief & b, const Vec2 & U, const AugmentedModel & m, double Ts);

struct Innovation
{
  Vec4 e;
  Mat4 Re;
};

/// Alternating update / EKF prediction over a measurement and input series.
/// Row k of Y is y_k and row k of U is the input held over [t_k, t_{k+1}).
std::vector<Innovation> innovation_sequence(const Eigen::MatrixXd & Y, const Eigen::MatrixXd & U,
                                            double Ts, const AugmentedModel & m,
                                            const GaussianBelief & initial, int ekf_steps = 10);

/// Symmetrize in place.
inline void symmetrize(Mat8 & P) { P = 0.5 * (P + P.transpose()).eval(); }

}  // namespace qts
