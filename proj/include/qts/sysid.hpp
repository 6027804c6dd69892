#pragma once

/**
 * @file
 * @brief Maximum-likelihood prediction-error estimation, goodness of fit and
 *        steady-state noise estimation.
 */

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qts/estimators.hpp"
#include "qts/model.hpp"
#include "qts/simulator.hpp"

namespace qts {

struct Dataset
{
  Eigen::MatrixXd Y;  ///< N x 4 levels [cm]
  Eigen::MatrixXd U;  ///< N x 2 pump flows, row k held over [t_k, t_{k+1})
  double Ts = 5.0;
  std::string label = "estimation";

  Eigen::Index size() const { return Y.rows(); }
  void validate() const;
};

Dataset dataset_from_log(const TrajectoryLog & log, double Ts, const std::string & label = "estimation");

/// Flat parameter vector: a(4), A(4), gamma(2), sigma(4), sigma_d(4), r2(4).
struct ParameterSet
{
  static constexpr int kSize = 22;
  enum Offset { kA = 0, kArea = 4, kGamma = 8, kSigma = 10, kSigmaD = 14, kR2 = 18 };

  ModelParams model;
  NoiseParams noise;

  Eigen::VectorXd flatten() const;
  /// rho and g are taken from `base`.
  static ParameterSet unflatten(const Eigen::VectorXd & theta, const ParameterSet & base = {});
  static const std::array<std::string, kSize> & names();
};

struct LikelihoodOptions
{
  bool estimate_disturbance = false;
  InitialBelief prior;
  int ekf_steps = 10;
};

/// V_ML = 1/2 sum_k (ln det Re_k + e_k' Re_k^-1 e_k) + (N n_y / 2) ln 2 pi.
/// Returns +inf when the filter fails.
double negative_log_likelihood(const AugmentedModel & m, const Dataset & data,
                               const GaussianBelief & initial, int ekf_steps = 10);

/// Filter starts at the steady state of the first input row under theta.
double negative_log_likelihood(const ParameterSet & theta, const Dataset & data,
                               const LikelihoodOptions & options = {});

struct EstimationSpec
{
  std::array<bool, ParameterSet::kSize> free{};
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::array<bool, ParameterSet::kSize> log_scale{};
  int max_iterations = 3000;
  double tolerance = 1e-5;   ///< simplex size in transformed coordinates
  double initial_step = 0.1;  ///< simplex edge in transformed coordinates
  int restarts = 3;           ///< fresh simplices around the best point after convergence
  double restart_gain = 1e-3; ///< stop restarting once V improves by less than this
  LikelihoodOptions likelihood;

  /// a, A, gamma free; non-augmented model.
  static EstimationSpec drift_stage();
  /// sigma, sigma_d, r2 free; augmented model.
  static EstimationSpec diffusion_stage();

  int free_count() const;
  void validate() const;
};

struct EstimationResult
{
  ParameterSet theta;
  double value = 0.0;
  std::vector<double> trace;  ///< best value after every iteration
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead on the free, transformed parameters.
EstimationResult estimate_parameters(const Dataset & data, const ParameterSet & theta0,
                                     const EstimationSpec & spec);

struct TwoStageResult
{
  EstimationResult drift;      ///< stage 1
  EstimationResult diffusion;  ///< stage 2
};

/// Stage 1 fits the drift with d = 0 and R fixed at `r2_fixed`; stage 2 keeps the
/// drift and fits sigma, sigma_d and R on the augmented model.
TwoStageResult identify_two_stage(const Dataset & data, const ParameterSet & theta0, const Vec4 & r2_fixed,
                                  EstimationSpec stage1 = EstimationSpec::drift_stage(),
                                  EstimationSpec stage2 = EstimationSpec::diffusion_stage());

/// Mean over channels of 100 (1 - |y_i - ysim_i| / |y_i - mean(y_i)|), norms over time.
/// Throws std::domain_error for a constant channel.
double goodness_of_fit(const Eigen::MatrixXd & Y, const Eigen::MatrixXd & Ysim);

/// Deterministic levels at the sample instants, RK4 between samples.
Eigen::MatrixXd simulate_noise_free(const ModelParams & p, const Eigen::MatrixXd & U, double Ts,
                                    const Vec4 & x0, int rk4_steps = 10);

/// Pooled per-channel sample variance; upper-tank channels multiplied by `inflation`.
Vec4 estimate_noise_covariance(const std::vector<Dataset> & segments, double inflation = 1000.0);

struct StepInputOptions
{
  double hold_min = 150.0;  ///< [s]
  double hold_max = 450.0;
  double u_low = 200.0;
  double u_high = 340.0;
  Vec2 u_base = Vec2::Constant(300.0);
};

/// Multi-level steps: u1 alone, then u2 alone, then both together.
Eigen::MatrixXd step_input_sequence(Eigen::Index samples, double Ts, std::uint64_t seed,
                                    const StepInputOptions & options = {});

/// Euler-Maruyama on the augmented SDE (random-walk disturbances) with noisy samples.
/// Starts at the steady state of the first input with d = 0.
Dataset generate_synthetic_dataset(const ParameterSet & truth, const Eigen::MatrixXd & U, double Ts,
                                   std::uint64_t seed, int substeps = 10);

}  // namespace qts
