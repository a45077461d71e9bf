#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Core>

#include "bcore/common.hpp"
#include "bcore/data.hpp"

namespace bcore {

/// Bayesian logistic regression with a standard normal prior on the slope
/// and per-sample likelihood terms raised to nonnegative weights:
///
///   log p(theta | X, y, w) = -|theta|^2 / 2 + sum_i w_i log sigmoid(y_i theta^T x_i) + const
///
/// There is no intercept. An empty design (N = 0) is the prior alone.
class WeightedBLRModel {
 public:
  WeightedBLRModel(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                   Eigen::VectorXd weights);

  static WeightedBLRModel unweighted(const Dataset& data);
  static WeightedBLRModel weighted(const Dataset& data, Eigen::VectorXd weights);
  static WeightedBLRModel prior_only(Eigen::Index features);

  Eigen::Index dimension() const noexcept { return signed_design_.cols(); }
  Eigen::Index size() const noexcept { return signed_design_.rows(); }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }

  double log_posterior(const Eigen::VectorXd& theta) const;
  /// Log density and its gradient in one pass.
  double log_posterior(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const;
  void gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const;
  /// Negative Hessian of the log density (the posterior precision at theta).
  Eigen::MatrixXd precision(const Eigen::VectorXd& theta) const;

  /// Copy with every weight multiplied by `factor`.
  WeightedBLRModel rescaled(double factor) const;

 private:
  WeightedBLRModel() = default;

  Eigen::MatrixXd signed_design_;  // row i is y_i * x_i
  Eigen::VectorXd weights_;
};

// ---------------------------------------------------------------------------
// MAP + Laplace

struct LaplaceFit {
  Eigen::VectorXd mode;
  Eigen::VectorXd marginal_sd;  // 1 / sqrt(diag precision)
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Damped Newton ascent to the posterior mode. Throws NumericalError with the
/// iterate history when it fails to converge.
LaplaceFit fit_laplace(const WeightedBLRModel& model, int max_iterations = 100,
                       double tolerance = 1e-8);

// ---------------------------------------------------------------------------
// HMC

/// Nesterov dual averaging of log step size toward a target acceptance
/// statistic (mu = log(10 eps0), gamma = 0.05, t0 = 10, kappa = 0.75).
class DualAveraging {
 public:
  DualAveraging(double initial_step, double target_accept);

  void observe(double accept_stat) noexcept;
  /// Iterate used while adapting.
  double current() const noexcept { return std::exp(log_step_); }
  /// Averaged iterate used once adaptation stops.
  double final_step() const noexcept { return std::exp(log_step_avg_); }

 private:
  double mu_;
  double target_;
  double log_step_;
  double log_step_avg_ = 0.0;
  double h_bar_ = 0.0;
  double count_ = 0.0;
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
};

struct HmcSettings {
  int total_samples = 10000;
  double burn_frac = 0.5;
  int thin = 2;
  double target_accept = 0.8;
  int leapfrog_steps = 20;
  double leapfrog_jitter = 0.2;
  /// Step size to start from; <= 0 selects one by the doubling heuristic.
  double initial_step_size = 0.0;
  bool adapt_step_size = true;
  int divergence_window = 100;

  int burn_in() const;
  int retained() const;
  void validate() const;

  Json to_json() const;
  static HmcSettings from_json(const Json& j);
};

inline constexpr double kWeightOverflowGuard = 1e6;

struct PosteriorSamples {
  Eigen::MatrixXd draws;  // S x F
  double acceptance_rate = 0.0;
  double step_size = 0.0;
  int leapfrog_steps = 0;
  int burn_in = 0;
  int thinning = 1;
  int total_samples = 0;
  int divergences = 0;
  /// Common factor the weights were divided by before sampling (1 = none).
  double weight_rescale = 1.0;
  std::uint64_t seed = 0;

  Eigen::Index count() const noexcept { return draws.rows(); }
};

PosteriorSamples hmc_sample(const WeightedBLRModel& model, const HmcSettings& settings,
                            std::uint64_t seed);

void save_posterior(const std::filesystem::path& path, const PosteriorSamples& posterior);
PosteriorSamples load_posterior(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Prediction

inline constexpr Eigen::Index kDefaultPredictDraws = 1000;

/// Monte-Carlo posterior predictive P(y = +1 | x) over the last n_draws
/// retained draws.
double predict_one(const PosteriorSamples& posterior, const Eigen::VectorXd& x,
                   Eigen::Index n_draws = kDefaultPredictDraws);
Eigen::VectorXd predict(const PosteriorSamples& posterior, const Eigen::MatrixXd& x,
                        Eigen::Index n_draws = kDefaultPredictDraws);

/// Fraction of rows where (probability > 0.5) agrees with the label.
double classification_accuracy(const Eigen::VectorXd& probability, const Eigen::VectorXd& labels);

// ---------------------------------------------------------------------------
// Linear SVM baseline (slope only)

struct SvmSettings {
  int epochs = 20;
  /// L2 strength; <= 0 means 1 / N (the C = 1 convention).
  double reg = 0.0;
};

/// Pegasos stochastic subgradient descent on the regularized hinge loss with
/// a seeded per-epoch visiting order. Returns the average of the final
/// epoch's iterates.
Eigen::VectorXd svm_train(const Dataset& data, int epochs, double reg, std::uint64_t seed);

/// +1 where theta^T x > 0, -1 otherwise.
Eigen::VectorXd svm_predict(const Eigen::VectorXd& theta, const Eigen::MatrixXd& x);
double svm_accuracy(const Eigen::VectorXd& theta, const Dataset& data);

}  // namespace bcore
