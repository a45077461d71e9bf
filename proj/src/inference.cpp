#include "bcore/inference.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

namespace bcore {

// ---------------------------------------------------------------------------
// WeightedBLRModel

WeightedBLRModel::WeightedBLRModel(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                                   Eigen::VectorXd weights)
    : weights_(std::move(weights)) {
  if (design.cols() < 1) throw std::invalid_argument("model needs at least one feature");
  if (labels.size() != design.rows() || weights_.size() != design.rows())
    throw std::invalid_argument("design, labels and weights must have the same length");
  if (!design.allFinite() || !weights_.allFinite())
    throw std::invalid_argument("design and weights must be finite");
  if ((weights_.array() < 0).any()) throw std::invalid_argument("weights must be nonnegative");
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] != 1.0 && labels[i] != -1.0) throw std::invalid_argument("labels must be +1 or -1");
  signed_design_ = labels.asDiagonal() * design;
}

WeightedBLRModel WeightedBLRModel::unweighted(const Dataset& data) {
  return WeightedBLRModel(data.x(), data.y(), Eigen::VectorXd::Ones(data.size()));
}

WeightedBLRModel WeightedBLRModel::weighted(const Dataset& data, Eigen::VectorXd weights) {
  return WeightedBLRModel(data.x(), data.y(), std::move(weights));
}

WeightedBLRModel WeightedBLRModel::prior_only(Eigen::Index features) {
  return WeightedBLRModel(Eigen::MatrixXd(0, features), Eigen::VectorXd(0), Eigen::VectorXd(0));
}

WeightedBLRModel WeightedBLRModel::rescaled(double factor) const {
  if (!(factor >= 0) || !std::isfinite(factor)) throw std::invalid_argument("bad weight factor");
  WeightedBLRModel m;
  m.signed_design_ = signed_design_;
  m.weights_ = weights_ * factor;
  return m;
}

namespace {

// sum_i w_i log sigmoid(m_i) = -sum_i w_i (max(-m_i, 0) + log1p(exp(-|m_i|)))
double weighted_log_likelihood(const Eigen::VectorXd& margins, const Eigen::VectorXd& weights) {
  const auto m = margins.array();
  return -(weights.array() * ((-m).max(0.0) + (-m.abs()).exp().log1p())).sum();
}

}  // namespace

double WeightedBLRModel::log_posterior(const Eigen::VectorXd& theta) const {
  if (theta.size() != dimension()) throw std::invalid_argument("theta has wrong dimension");
  if (!theta.allFinite()) throw std::invalid_argument("theta must be finite");
  double lp = -0.5 * theta.squaredNorm();
  if (size() == 0) return lp;
  const Eigen::VectorXd margins = signed_design_ * theta;
  return lp + weighted_log_likelihood(margins, weights_);
}

double WeightedBLRModel::log_posterior(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const {
  if (theta.size() != dimension()) throw std::invalid_argument("theta has wrong dimension");
  if (!theta.allFinite()) throw std::invalid_argument("theta must be finite");
  double lp = -0.5 * theta.squaredNorm();
  gradient = -theta;
  if (size() == 0) return lp;
  const Eigen::VectorXd margins = signed_design_ * theta;
  // w_i * sigmoid(-m_i); exp overflow to inf yields the correct limit 0.
  const Eigen::VectorXd residual = weights_.array() / (1.0 + margins.array().exp());
  gradient.noalias() += signed_design_.transpose() * residual;
  return lp + weighted_log_likelihood(margins, weights_);
}

void WeightedBLRModel::gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& gradient) const {
  gradient = -theta;
  if (size() == 0) return;
  const Eigen::VectorXd margins = signed_design_ * theta;
  const Eigen::VectorXd residual = weights_.array() / (1.0 + margins.array().exp());
  gradient.noalias() += signed_design_.transpose() * residual;
}

Eigen::MatrixXd WeightedBLRModel::precision(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(dimension(), dimension());
  if (size() == 0) return h;
  const Eigen::VectorXd m = signed_design_ * theta;
  Eigen::VectorXd c(size());
  for (Eigen::Index i = 0; i < size(); ++i) c[i] = weights_[i] * sigmoid(m[i]) * sigmoid(-m[i]);
  h.noalias() += signed_design_.transpose() * c.asDiagonal() * signed_design_;
  return h;
}

// ---------------------------------------------------------------------------
// Laplace

LaplaceFit fit_laplace(const WeightedBLRModel& model, int max_iterations, double tolerance) {
  const Eigen::Index f = model.dimension();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(f);
  Eigen::VectorXd grad(f);
  double lp = model.log_posterior(theta, grad);
  const double scale = 1.0 + model.weights().sum();
  Json history = Json::array();

  for (int it = 0; it < max_iterations; ++it) {
    const double gnorm = grad.norm();
    history.push_back({{"iteration", it}, {"log_posterior", lp}, {"gradient_norm", gnorm}});
    if (gnorm <= tolerance * scale) {
      const Eigen::MatrixXd h = model.precision(theta);
      return LaplaceFit{theta, h.diagonal().cwiseInverse().cwiseSqrt(), it, gnorm};
    }
    const Eigen::MatrixXd h = model.precision(theta);
    const Eigen::VectorXd step = h.llt().solve(grad);
    if (!step.allFinite()) break;
    double t = 1.0;
    const double slope = grad.dot(step);
    Eigen::VectorXd next(f);
    double lp_next = -std::numeric_limits<double>::infinity();
    for (int ls = 0; ls < 50; ++ls) {
      next = theta + t * step;
      lp_next = model.log_posterior(next);
      if (lp_next >= lp + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if (!(lp_next >= lp) || !std::isfinite(lp_next)) break;
    theta = next;
    lp = model.log_posterior(theta, grad);
  }
  throw NumericalError("MAP optimization did not converge",
                       Json{{"stage", "laplace_map"}, {"iterates", history}});
}

// ---------------------------------------------------------------------------
// Dual averaging

DualAveraging::DualAveraging(double initial_step, double target_accept)
    : mu_(std::log(10.0 * initial_step)), target_(target_accept), log_step_(std::log(initial_step)) {
  if (!(initial_step > 0) || !std::isfinite(initial_step))
    throw std::invalid_argument("initial step size must be positive and finite");
  if (!(target_accept > 0 && target_accept < 1))
    throw std::invalid_argument("target acceptance must lie in (0, 1)");
}

void DualAveraging::observe(double accept_stat) noexcept {
  count_ += 1.0;
  const double eta = 1.0 / (count_ + kT0);
  h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_stat);
  log_step_ = mu_ - std::sqrt(count_) / kGamma * h_bar_;
  const double w = std::pow(count_, -kKappa);
  log_step_avg_ = w * log_step_ + (1.0 - w) * log_step_avg_;
}

// ---------------------------------------------------------------------------
// HMC

int HmcSettings::burn_in() const {
  return static_cast<int>(std::floor(static_cast<double>(total_samples) * burn_frac));
}

int HmcSettings::retained() const { return (total_samples - burn_in()) / thin; }

void HmcSettings::validate() const {
  if (total_samples < 2) throw std::invalid_argument("HMC needs total_samples >= 2");
  if (!(burn_frac >= 0 && burn_frac < 1)) throw std::invalid_argument("burn_frac must lie in [0, 1)");
  if (thin < 1) throw std::invalid_argument("thin must be >= 1");
  if (!(target_accept > 0 && target_accept < 1))
    throw std::invalid_argument("target_accept must lie in (0, 1)");
  if (leapfrog_steps < 1) throw std::invalid_argument("leapfrog_steps must be >= 1");
  if (!(leapfrog_jitter >= 0 && leapfrog_jitter < 1))
    throw std::invalid_argument("leapfrog_jitter must lie in [0, 1)");
  if (divergence_window < 1) throw std::invalid_argument("divergence_window must be >= 1");
  if (!adapt_step_size && !(initial_step_size > 0))
    throw std::invalid_argument("a fixed step size must be positive");
  if (retained() < 1) throw std::invalid_argument("HMC settings retain no draws");
}

Json HmcSettings::to_json() const {
  return Json{{"samples", total_samples},        {"burn_frac", burn_frac},
              {"thin", thin},                    {"target_accept", target_accept},
              {"leapfrog_steps", leapfrog_steps}, {"leapfrog_jitter", leapfrog_jitter},
              {"initial_step_size", initial_step_size}, {"adapt_step_size", adapt_step_size},
              {"divergence_window", divergence_window}};
}

HmcSettings HmcSettings::from_json(const Json& j) {
  HmcSettings s;
  s.total_samples = j.value("samples", s.total_samples);
  s.burn_frac = j.value("burn_frac", s.burn_frac);
  s.thin = j.value("thin", s.thin);
  s.target_accept = j.value("target_accept", s.target_accept);
  s.leapfrog_steps = j.value("leapfrog_steps", s.leapfrog_steps);
  s.leapfrog_jitter = j.value("leapfrog_jitter", s.leapfrog_jitter);
  s.initial_step_size = j.value("initial_step_size", s.initial_step_size);
  s.adapt_step_size = j.value("adapt_step_size", s.adapt_step_size);
  s.divergence_window = j.value("divergence_window", s.divergence_window);
  return s;
}

namespace {

struct Trajectory {
  Eigen::VectorXd theta;
  Eigen::VectorXd momentum;
  Eigen::VectorXd grad;
  double log_density = 0.0;
  bool finite = true;
};

// Leapfrog integration from (theta, p) with the gradient at theta supplied.
void leapfrog(const WeightedBLRModel& model, Trajectory& t, double eps, int steps) {
  t.momentum += 0.5 * eps * t.grad;
  for (int l = 0; l < steps; ++l) {
    t.theta += eps * t.momentum;
    model.gradient(t.theta, t.grad);
    if (!t.grad.allFinite() || !t.theta.allFinite()) {
      t.finite = false;
      return;
    }
    t.momentum += (l + 1 < steps ? eps : 0.5 * eps) * t.grad;
  }
  t.log_density = model.log_posterior(t.theta);
  t.finite = std::isfinite(t.log_density) && t.momentum.allFinite();
}

double hamiltonian(double log_density, const Eigen::VectorXd& p) {
  return -log_density + 0.5 * p.squaredNorm();
}

// Doubling/halving search for a step size whose one-step acceptance
// probability crosses 1/2.
double initial_step(const WeightedBLRModel& model, const Eigen::VectorXd& theta0,
                    std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd grad0;
  const double lp0 = model.log_posterior(theta0, grad0);
  Eigen::VectorXd p0(theta0.size());
  for (Eigen::Index k = 0; k < p0.size(); ++k) p0[k] = normal(rng);
  const double h0 = hamiltonian(lp0, p0);

  const auto log_accept = [&](double eps) {
    Trajectory t{theta0, p0, grad0};
    leapfrog(model, t, eps, 1);
    if (!t.finite) return -std::numeric_limits<double>::infinity();
    return h0 - hamiltonian(t.log_density, t.momentum);
  };
  double eps = 1.0;
  double la = log_accept(eps);
  const double direction = la > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 60; ++i) {
    const double next = eps * std::pow(2.0, direction);
    la = log_accept(next);
    const bool crossed = direction > 0 ? !(la > std::log(0.5)) : (la > std::log(0.5));
    if (crossed) return direction > 0 ? eps : next;
    eps = next;
  }
  return eps;
}

}  // namespace

PosteriorSamples hmc_sample(const WeightedBLRModel& input_model, const HmcSettings& settings,
                            std::uint64_t seed) {
  settings.validate();

  double rescale = 1.0;
  const double max_w = input_model.size() > 0 ? input_model.weights().maxCoeff() : 0.0;
  if (max_w > kWeightOverflowGuard) rescale = max_w / kWeightOverflowGuard;
  const WeightedBLRModel model = rescale == 1.0 ? input_model : input_model.rescaled(1.0 / rescale);

  const Eigen::Index f = model.dimension();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;

  const int lo = std::max(1, static_cast<int>(std::floor(settings.leapfrog_steps * (1.0 - settings.leapfrog_jitter))));
  const int hi = std::max(lo, static_cast<int>(std::ceil(settings.leapfrog_steps * (1.0 + settings.leapfrog_jitter))));
  std::uniform_int_distribution<int> steps_dist(lo, hi);

  Trajectory current{Eigen::VectorXd::Zero(f), Eigen::VectorXd(f), Eigen::VectorXd(f)};
  current.log_density = model.log_posterior(current.theta, current.grad);

  double eps = settings.initial_step_size > 0 ? settings.initial_step_size
                                              : initial_step(model, current.theta, rng);
  DualAveraging adapter(eps, settings.target_accept);

  const int burn = settings.burn_in();
  PosteriorSamples out;
  out.draws.resize(settings.retained(), f);
  out.leapfrog_steps = settings.leapfrog_steps;
  out.burn_in = burn;
  out.thinning = settings.thin;
  out.total_samples = settings.total_samples;
  out.weight_rescale = rescale;
  out.seed = seed;

  Eigen::Index kept = 0;
  long accepted_after = 0;
  long proposals_after = 0;
  int window_divergences = 0;
  int window_fill = 0;

  for (int iter = 0; iter < settings.total_samples; ++iter) {
    if (iter == burn && settings.adapt_step_size && burn > 0) eps = adapter.final_step();

    Trajectory prop = current;
    for (Eigen::Index k = 0; k < f; ++k) prop.momentum[k] = normal(rng);
    const double h0 = hamiltonian(current.log_density, prop.momentum);
    leapfrog(model, prop, eps, steps_dist(rng));

    double accept_prob = 0.0;
    bool divergent = !prop.finite;
    if (!divergent) {
      const double h1 = hamiltonian(prop.log_density, prop.momentum);
      if (!std::isfinite(h1)) {
        divergent = true;
      } else {
        accept_prob = std::min(1.0, std::exp(h0 - h1));
      }
    }
    const bool accept = !divergent && uniform(rng) < accept_prob;
    if (accept) current = std::move(prop);

    if (iter < burn) {
      if (settings.adapt_step_size) {
        adapter.observe(accept_prob);
        eps = adapter.current();
      }
    } else {
      ++proposals_after;
      if (accept) ++accepted_after;
      if (divergent) {
        ++out.divergences;
        ++window_divergences;
      }
      if (++window_fill == settings.divergence_window) {
        if (2 * window_divergences > settings.divergence_window)
          throw NumericalError("persistent HMC divergence",
                               Json{{"stage", "hmc"},
                                    {"iteration", iter},
                                    {"window", settings.divergence_window},
                                    {"divergences_in_window", window_divergences},
                                    {"step_size", eps},
                                    {"seed", seed}});
        window_fill = 0;
        window_divergences = 0;
      }
      const int offset = iter - burn;
      if (offset % settings.thin == settings.thin - 1 && kept < out.draws.rows())
        out.draws.row(kept++) = current.theta.transpose();
    }
  }
  out.step_size = eps;
  out.acceptance_rate = proposals_after > 0
                            ? static_cast<double>(accepted_after) / static_cast<double>(proposals_after)
                            : 0.0;
  return out;
}

void save_posterior(const std::filesystem::path& path, const PosteriorSamples& p) {
  Json header{{"kind", "posterior_samples"},
              {"acceptance_rate", p.acceptance_rate},
              {"step_size", p.step_size},
              {"leapfrog_steps", p.leapfrog_steps},
              {"burn_in", p.burn_in},
              {"thinning", p.thinning},
              {"total_samples", p.total_samples},
              {"divergences", p.divergences},
              {"weight_rescale", p.weight_rescale},
              {"seed", p.seed}};
  write_matrix_file(path, std::move(header), p.draws);
}

PosteriorSamples load_posterior(const std::filesystem::path& path) {
  auto file = read_matrix_file(path);
  const Json& h = file.header;
  if (h.value("kind", "") != "posterior_samples")
    throw DataError(path.string() + " is not a posterior sample file");
  PosteriorSamples p;
  p.draws = std::move(file.matrix);
  try {
    p.acceptance_rate = h.at("acceptance_rate").get<double>();
    p.step_size = h.at("step_size").get<double>();
    p.leapfrog_steps = h.at("leapfrog_steps").get<int>();
    p.burn_in = h.at("burn_in").get<int>();
    p.thinning = h.at("thinning").get<int>();
    p.total_samples = h.at("total_samples").get<int>();
    p.divergences = h.at("divergences").get<int>();
    p.weight_rescale = h.at("weight_rescale").get<double>();
    p.seed = h.at("seed").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw DataError("corrupt posterior header in " + path.string() + ": " + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Prediction

double predict_one(const PosteriorSamples& posterior, const Eigen::VectorXd& x, Eigen::Index n_draws) {
  const Eigen::MatrixXd row = x.transpose();
  return predict(posterior, row, n_draws)[0];
}

Eigen::VectorXd predict(const PosteriorSamples& posterior, const Eigen::MatrixXd& x,
                        Eigen::Index n_draws) {
  if (posterior.count() == 0) throw std::invalid_argument("empty posterior");
  if (n_draws < 1 || n_draws > posterior.count())
    throw std::invalid_argument("n_draws must lie in [1, retained draws]");
  if (x.cols() != posterior.draws.cols()) throw std::invalid_argument("feature dimension mismatch");
  const auto draws = posterior.draws.bottomRows(n_draws);
  const Eigen::MatrixXd margins = x * draws.transpose();  // rows x draws
  Eigen::VectorXd prob(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index d = 0; d < n_draws; ++d) s += sigmoid(margins(i, d));
    prob[i] = s / static_cast<double>(n_draws);
  }
  return prob;
}

double classification_accuracy(const Eigen::VectorXd& probability, const Eigen::VectorXd& labels) {
  if (probability.size() != labels.size() || labels.size() == 0)
    throw std::invalid_argument("accuracy needs matching nonempty vectors");
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if ((probability[i] > 0.5) == (labels[i] > 0)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// SVM

Eigen::VectorXd svm_train(const Dataset& data, int epochs, double reg, std::uint64_t seed) {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(reg > 0) || !std::isfinite(reg)) throw std::invalid_argument("reg must be positive");
  const Eigen::Index n = data.size();
  const Eigen::Index f = data.features();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(f);
  Eigen::VectorXd average = Eigen::VectorXd::Zero(f);
  const double radius = 1.0 / std::sqrt(reg);
  long t = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool last = epoch + 1 == epochs;
    for (const Eigen::Index i : order) {
      ++t;
      const double eta = 1.0 / (reg * static_cast<double>(t));
      const double y = data.y()[i];
      const bool violated = y * data.x().row(i).dot(theta) < 1.0;
      theta *= (1.0 - eta * reg);
      if (violated) theta += (eta * y) * data.x().row(i).transpose();
      const double norm = theta.norm();
      if (norm > radius) theta *= radius / norm;
      if (last) average += theta;
    }
  }
  return average / static_cast<double>(n);
}

Eigen::VectorXd svm_predict(const Eigen::VectorXd& theta, const Eigen::MatrixXd& x) {
  if (x.cols() != theta.size()) throw std::invalid_argument("feature dimension mismatch");
  const Eigen::VectorXd score = x * theta;
  return score.unaryExpr([](double s) { return s > 0 ? 1.0 : -1.0; });
}

double svm_accuracy(const Eigen::VectorXd& theta, const Dataset& data) {
  const Eigen::VectorXd pred = svm_predict(theta, data.x());
  return static_cast<double>((pred.array() == data.y().array()).count()) /
         static_cast<double>(data.size());
}

}  // namespace bcore
