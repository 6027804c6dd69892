#pragma once

/**
 * @file
 * @brief Nonlinear quadruple-tank model, its linearization and ZOH discretization.
 *
 * States are tank masses m_i [g], inputs the two pump flows [cm^3/s] and
 * disturbances unknown inflows into each tank [cm^3/s]. Pump 1 feeds tanks 1
 * and 4, pump 2 feeds tanks 2 and 3; tank 3 drains into tank 1 and tank 4
 * into tank 2.
 */

#include <complex>
#include <stdexcept>
#include <string>
#include <utility>

#include "qts/types.hpp"

namespace qts {

/// Physical parameters of the tank system.
struct ModelParams
{
  Vec4 a = Vec4::Constant(1.13);    ///< outlet cross-sections [cm^2]
  Vec4 A = Vec4::Constant(380.13);  ///< tank cross-sections [cm^2]
  Vec2 gamma = Vec2::Constant(0.35);
  double rho = 1.0;    ///< density [g/cm^3]
  double g_a = 981.0;  ///< gravity [cm/s^2]

  /// Throws std::invalid_argument if any invariant is violated.
  void validate() const;

  static ModelParams nominal();
  static ModelParams estimated_rig();
};

/// Diffusion and measurement noise parameters.
struct NoiseParams
{
  Vec4 sigma = Vec4::Zero();    ///< state diffusion [g/sqrt(s)]
  Vec4 sigma_d = Vec4::Zero();  ///< disturbance diffusion
  Vec4 r2 = Vec4::Zero();       ///< measurement noise variances [cm^2]

  void validate() const;

  static NoiseParams estimated_rig();
};

struct OperatingPoint
{
  Vec4 x_s = Vec4::Zero();
  Vec2 u_s = Vec2::Zero();
  Vec4 d_s = Vec4::Zero();
  Vec4 y_s = Vec4::Zero();
  Vec2 z_s = Vec2::Zero();

  /// Steady state for the given input and disturbance.
  static OperatingPoint at(const Vec2 & u_s, const Vec4 & d_s, const ModelParams & p);
};

struct LinearModel
{
  Mat4 A;
  Mat42 B;
  Mat4 E;
  Mat4 C;
  Mat24 Cz;
  OperatingPoint op;
};

struct DiscreteLinearModel
{
  Mat4 Abar;
  Mat42 Bbar;
  Mat4 Ebar;
  double Ts = 0.0;
};

/// k / ((tau1 s + 1)(tau2 s + 1)), tau1 >= tau2.
struct SecondOrderTf
{
  double k = 0.0;
  double tau1 = 0.0;
  double tau2 = 0.0;

  std::complex<double> evaluate(std::complex<double> s) const;
};

/// Raised by the Jacobian when a tank is (numerically) empty.
class SingularJacobian : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kHeightTolerance = 1e-9;  // [cm]

/// Liquid levels h_i = m_i / (rho A_i) [cm], unclamped.
Vec4 levels(const Vec4 & x, const ModelParams & p);

/// Mass balance right-hand side rho (q_in - q_out) [g/s]. Heights are clamped at 0.
Vec4 drift(const Vec4 & x, const Vec2 & u, const Vec4 & d, const ModelParams & p);

/// Pump-flow routing only: rho * B u [g/s].
Vec4 routed_inflow(const Vec2 & u, const ModelParams & p);

Vec4 measurement(const Vec4 & x, const ModelParams & p);
Vec2 output(const Vec4 & x, const ModelParams & p);

/// d drift / d x. Throws SingularJacobian if any level is <= kHeightTolerance.
Mat4 drift_jacobian(const Vec4 & x, const Vec2 & u, const Vec4 & d, const ModelParams & p);

/// Analytic cascade solution of drift(x, u_s, d_s) = 0 (upper tanks first).
Vec4 steady_state(const Vec2 & u_s, const Vec4 & d_s, const ModelParams & p);

Mat42 input_matrix(const ModelParams & p);
Mat4 measurement_matrix(const ModelParams & p);
Mat24 output_matrix(const ModelParams & p);

LinearModel linearize(const ModelParams & p, const OperatingPoint & op);

/// (g12, g21): u2 -> z1 through tank 3 and u1 -> z2 through tank 4.
std::pair<SecondOrderTf, SecondOrderTf> cross_coupling_tfs(const LinearModel & lm);

/// Zero-order-hold discretization via the augmented matrix exponential.
DiscreteLinearModel discretize_zoh(const LinearModel & lm, double Ts);

/// Same as above for an arbitrary (A, [B E]) pair, used by tests.
Eigen::MatrixXd zoh_exponential(const Eigen::MatrixXd & A, const Eigen::MatrixXd & inputs, double Ts);

}  // namespace qts
