#include "bcore/pipeline.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>

namespace bcore {

std::string to_string(Reduction r) {
  switch (r) {
    case Reduction::giga: return "giga";
    case Reduction::frank_wolfe: return "frankwolfe";
    case Reduction::random: return "random";
  }
  return "unknown";
}

Reduction reduction_from_string(const std::string& s) {
  if (s == "giga") return Reduction::giga;
  if (s == "frankwolfe" || s == "fw") return Reduction::frank_wolfe;
  if (s == "random") return Reduction::random;
  throw ConfigError("unknown coreset method '" + s + "' (expected giga, frankwolfe or random)");
}

Coreset reduce_batch(const Dataset& standardized, const ReductionSettings& settings,
                     std::uint32_t batch, const SeedTree& seeds) {
  if (settings.budget == 0) throw std::invalid_argument("reduce_batch: budget must be positive");
  const ModelDescriptor model{kLogisticFamily, settings.weighting};
  auto basis = std::make_shared<const ProjectionBasis>(build_projection_basis(
      model, standardized, settings.dimension, seeds.child("basis").seed()));
  const LikelihoodEmbedding emb = embed_log_likelihoods(standardized, model, basis);
  switch (settings.method) {
    case Reduction::giga:
      return giga_construct(emb, settings.budget, kLogisticFamily, batch);
    case Reduction::frank_wolfe:
      return frankwolfe_construct(emb, settings.budget, kLogisticFamily, batch);
    case Reduction::random: {
      Coreset c = random_construct(standardized.size(), settings.budget,
                                   seeds.child("random").seed(), kLogisticFamily, batch);
      score_coreset(emb, c, batch);
      return c;
    }
  }
  throw std::logic_error("reduce_batch: unhandled method");
}

TrainedPosterior train_blr(const Dataset& data, const Eigen::VectorXd& weights,
                           const HmcSettings& settings, std::uint64_t seed) {
  const WeightedBLRModel model = WeightedBLRModel::weighted(data, weights);
  Stopwatch clock;
  TrainedPosterior out{hmc_sample(model, settings, seed), 0.0};
  out.seconds = clock.seconds();
  return out;
}

double evaluate_blr(const PosteriorSamples& posterior, const Dataset& test, Eigen::Index draws) {
  return classification_accuracy(predict(posterior, test.x(), std::min(draws, posterior.count())), test.y());
}

WeightedSubset coreset_rows(const Dataset& data, const Coreset& coreset, std::uint32_t batch) {
  const std::vector<Eigen::Index> rows = coreset.rows(batch);
  if (rows.empty()) throw std::invalid_argument("coreset_rows: coreset has no entries for this batch");
  for (Eigen::Index r : rows) {
    if (r < 0 || r >= data.size()) throw std::invalid_argument("coreset_rows: row index out of range");
  }
  return {data.subset(rows), coreset.weights(batch)};
}

}  // namespace bcore
