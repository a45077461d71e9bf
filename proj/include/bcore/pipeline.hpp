#pragma once

#include <cstdint>
#include <string>

#include "bcore/common.hpp"
#include "bcore/coreset.hpp"
#include "bcore/data.hpp"
#include "bcore/embed.hpp"
#include "bcore/inference.hpp"

namespace bcore {

enum class Reduction { giga, frank_wolfe, random };

std::string to_string(Reduction r);
Reduction reduction_from_string(const std::string& s);

struct ReductionSettings {
  Reduction method = Reduction::giga;
  std::size_t budget = 100;
  Eigen::Index dimension = 500;
  WeightingDistribution weighting = WeightingDistribution::laplace;
};

/// Compresses one standardized training batch. Seeds: "basis" for the
/// projection draws, "random" for the uniform baseline. The coreset carries
/// residual diagnostics in the batch's own embedding (the uniform baseline
/// too, so constructors can be compared).
Coreset reduce_batch(const Dataset& standardized, const ReductionSettings& settings,
                     std::uint32_t batch, const SeedTree& seeds);

struct TrainedPosterior {
  PosteriorSamples posterior;
  double seconds = 0.0;
};

/// Weighted BLR by HMC; `seconds` covers the sampler call only.
TrainedPosterior train_blr(const Dataset& data, const Eigen::VectorXd& weights,
                           const HmcSettings& settings, std::uint64_t seed);

double evaluate_blr(const PosteriorSamples& posterior, const Dataset& test, Eigen::Index draws);

/// Rows of `data` selected by the batch-`batch` entries of `coreset`, in entry
/// order, with the matching weights.
struct WeightedSubset {
  Dataset data;
  Eigen::VectorXd weights;
};

WeightedSubset coreset_rows(const Dataset& data, const Coreset& coreset, std::uint32_t batch = 0);

}  // namespace bcore
