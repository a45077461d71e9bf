#include "bcore/embed.hpp"

#include <random>

#include "bcore/inference.hpp"

namespace bcore {

std::string to_string(WeightingDistribution w) {
  return w == WeightingDistribution::laplace ? "laplace" : "prior";
}

WeightingDistribution weighting_from_string(const std::string& s) {
  if (s == "laplace") return WeightingDistribution::laplace;
  if (s == "prior") return WeightingDistribution::prior;
  throw ConfigError("unknown weighting distribution '" + s + "' (expected laplace|prior)");
}

Json ProjectionBasis::describe() const {
  return Json{{"family", model.family},
              {"weighting", to_string(model.weighting)},
              {"seed", seed},
              {"dimension", dimension()},
              {"features", features()},
              {"map_iterations", map_iterations},
              {"center", std::vector<double>(center.data(), center.data() + center.size())},
              {"spread", std::vector<double>(spread.data(), spread.data() + spread.size())}};
}

namespace {

void require_family(const ModelDescriptor& model) {
  if (model.family != kLogisticFamily)
    throw std::invalid_argument("unsupported model family '" + model.family + "'");
}

}  // namespace

ProjectionBasis build_projection_basis(const ModelDescriptor& model, const Dataset& pilot,
                                       Eigen::Index dimension, std::uint64_t seed) {
  require_family(model);
  if (dimension < 1) throw std::invalid_argument("projection dimension must be >= 1");
  const Eigen::Index f = pilot.features();

  ProjectionBasis basis;
  basis.seed = seed;
  basis.model = model;
  if (model.weighting == WeightingDistribution::laplace) {
    const LaplaceFit fit = fit_laplace(WeightedBLRModel::unweighted(pilot));
    basis.center = fit.mode;
    basis.spread = fit.marginal_sd;
    basis.map_iterations = fit.iterations;
  } else {
    basis.center = Eigen::VectorXd::Zero(f);
    basis.spread = Eigen::VectorXd::Ones(f);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  basis.theta.resize(dimension, f);
  for (Eigen::Index d = 0; d < dimension; ++d)
    for (Eigen::Index k = 0; k < f; ++k)
      basis.theta(d, k) = basis.center[k] + basis.spread[k] * normal(rng);
  return basis;
}

Eigen::VectorXd LikelihoodEmbedding::total() const {
  Eigen::VectorXd t = Eigen::VectorXd::Zero(dimension());
  for (Eigen::Index i = 0; i < size(); ++i) t += vectors.row(i).transpose();
  return t;
}

namespace {

Eigen::MatrixXd embedded_terms(const Dataset& data, const ProjectionBasis& basis) {
  if (data.features() != basis.features())
    throw std::invalid_argument("dataset and projection basis feature dimensions differ");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(basis.dimension()));
  Eigen::MatrixXd v = (data.y().asDiagonal() * data.x()) * basis.theta.transpose();
  for (Eigen::Index d = 0; d < v.cols(); ++d)
    for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, d) = inv_sqrt_d * log_sigmoid(v(i, d));
  if (!v.allFinite())
    throw NumericalError("non-finite embedded log-likelihood", Json{{"stage", "embed"}});
  return v;
}

}  // namespace

LikelihoodEmbedding embed_log_likelihoods(const Dataset& data, const ModelDescriptor& model,
                                          std::shared_ptr<const ProjectionBasis> basis) {
  require_family(model);
  if (!basis) throw std::invalid_argument("null projection basis");
  LikelihoodEmbedding e;
  e.vectors = embedded_terms(data, *basis);
  e.norms = e.vectors.rowwise().norm();
  e.basis = std::move(basis);
  return e;
}

Eigen::VectorXd embed_total_log_likelihood(const Dataset& data, const ProjectionBasis& basis) {
  const Eigen::MatrixXd v = embedded_terms(data, basis);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) t += v.row(i).transpose();
  return t;
}

void save_embedding(const std::filesystem::path& path, const LikelihoodEmbedding& embedding) {
  Json header{{"kind", "likelihood_embedding"}};
  if (embedding.basis) header["basis"] = embedding.basis->describe();
  write_matrix_file(path, std::move(header), embedding.vectors);
  if (embedding.basis) {
    std::filesystem::path basis_path = path;
    basis_path += ".basis";
    write_matrix_file(basis_path, Json{{"kind", "projection_basis"}, {"basis", embedding.basis->describe()}},
                      embedding.basis->theta);
  }
}

LikelihoodEmbedding load_embedding(const std::filesystem::path& path) {
  auto file = read_matrix_file(path);
  if (file.header.value("kind", "") != "likelihood_embedding")
    throw DataError(path.string() + " is not an embedding file");
  LikelihoodEmbedding e;
  e.vectors = std::move(file.matrix);
  e.norms = e.vectors.rowwise().norm();
  std::filesystem::path basis_path = path;
  basis_path += ".basis";
  if (std::filesystem::exists(basis_path)) {
    auto bf = read_matrix_file(basis_path);
    auto basis = std::make_shared<ProjectionBasis>();
    basis->theta = std::move(bf.matrix);
    try {
      const Json& d = bf.header.at("basis");
      basis->seed = d.at("seed").get<std::uint64_t>();
      basis->model.family = d.at("family").get<std::string>();
      basis->model.weighting = weighting_from_string(d.at("weighting").get<std::string>());
      basis->map_iterations = d.value("map_iterations", 0);
      const auto c = d.at("center").get<std::vector<double>>();
      const auto s = d.at("spread").get<std::vector<double>>();
      basis->center = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
      basis->spread = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    } catch (const Json::exception& ex) {
      throw DataError("corrupt basis header in " + basis_path.string() + ": " + ex.what());
    }
    e.basis = std::move(basis);
  }
  return e;
}

}  // namespace bcore
