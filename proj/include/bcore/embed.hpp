#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <Eigen/Core>

#include "bcore/common.hpp"
#include "bcore/data.hpp"

namespace bcore {

/// Tag of the only likelihood family implemented: weighted Bayesian logistic
/// regression without intercept.
inline constexpr const char* kLogisticFamily = "blr";

/// Distribution the projection parameters are drawn from.
enum class WeightingDistribution {
  laplace,  // N(MAP, diag(1 / precision_ff)) fitted on the pilot data
  prior,    // N(0, I)
};

std::string to_string(WeightingDistribution w);
WeightingDistribution weighting_from_string(const std::string& s);

struct ModelDescriptor {
  std::string family = kLogisticFamily;
  WeightingDistribution weighting = WeightingDistribution::laplace;
};

/// D parameter vectors theta_d at which every log-likelihood is evaluated.
struct ProjectionBasis {
  Eigen::MatrixXd theta;  // D x F
  std::uint64_t seed = 0;
  ModelDescriptor model;
  /// Weighting distribution description: per-coordinate mean and sd.
  Eigen::VectorXd center;
  Eigen::VectorXd spread;
  int map_iterations = 0;

  Eigen::Index dimension() const noexcept { return theta.rows(); }
  Eigen::Index features() const noexcept { return theta.cols(); }
  Json describe() const;
};

ProjectionBasis build_projection_basis(const ModelDescriptor& model, const Dataset& pilot,
                                       Eigen::Index dimension, std::uint64_t seed);

/// Row i is (1/sqrt(D)) * (log L(x_i; theta_1), ..., log L(x_i; theta_D)), so
/// Euclidean inner products are Monte-Carlo estimates of the weighted L2
/// inner product of log-likelihood functions.
struct LikelihoodEmbedding {
  Eigen::MatrixXd vectors;  // N x D
  Eigen::VectorXd norms;
  std::shared_ptr<const ProjectionBasis> basis;

  Eigen::Index size() const noexcept { return vectors.rows(); }
  Eigen::Index dimension() const noexcept { return vectors.cols(); }
  /// Rows with zero norm cannot join a coreset.
  bool usable(Eigen::Index row) const noexcept { return norms[row] > 0.0; }
  /// Sum of all rows: the embedded total log-likelihood.
  Eigen::VectorXd total() const;
};

LikelihoodEmbedding embed_log_likelihoods(const Dataset& data, const ModelDescriptor& model,
                                          std::shared_ptr<const ProjectionBasis> basis);

/// Embedded total log-likelihood computed from the per-sample terms in row
/// order, equal to LikelihoodEmbedding::total() bit for bit.
Eigen::VectorXd embed_total_log_likelihood(const Dataset& data, const ProjectionBasis& basis);

void save_embedding(const std::filesystem::path& path, const LikelihoodEmbedding& embedding);
LikelihoodEmbedding load_embedding(const std::filesystem::path& path);

}  // namespace bcore
