#include "bcore/coreset.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <set>

namespace bcore {

// ---------------------------------------------------------------------------
// Coreset

Coreset::Coreset(std::string model_family, std::vector<CoresetEntry> entries,
                 CoresetDiagnostics diagnostics)
    : model_family_(std::move(model_family)), entries_(std::move(entries)),
      diagnostics_(std::move(diagnostics)) {
  if (model_family_.empty()) throw std::invalid_argument("coreset needs a model family");
  for (const auto& e : entries_)
    if (!(e.weight > 0) || !std::isfinite(e.weight))
      throw std::invalid_argument("coreset weights must be positive and finite");
}

double Coreset::total_weight() const noexcept {
  double s = 0.0;
  for (const auto& e : entries_) s += e.weight;
  return s;
}

std::vector<Eigen::Index> Coreset::rows(std::uint32_t batch) const {
  std::vector<Eigen::Index> out;
  for (const auto& e : entries_)
    if (e.id.batch == batch) out.push_back(e.id.row);
  return out;
}

Eigen::VectorXd Coreset::weights(std::uint32_t batch) const {
  std::vector<double> w;
  for (const auto& e : entries_)
    if (e.id.batch == batch) w.push_back(e.weight);
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

Eigen::VectorXd Coreset::dense_weights(Eigen::Index n, std::uint32_t batch) const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  for (const auto& e : entries_) {
    if (e.id.batch != batch) continue;
    if (e.id.row < 0 || e.id.row >= n) throw std::out_of_range("coreset row outside the batch");
    w[e.id.row] += e.weight;
  }
  return w;
}

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> optional_from(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

Json Coreset::to_json() const {
  Json entries = Json::array();
  for (const auto& e : entries_)
    entries.push_back({{"batch_id", e.id.batch}, {"row_index", e.id.row}, {"weight", e.weight}});
  const auto& d = diagnostics_;
  return Json{{"model_family", model_family_},
              {"entries", std::move(entries)},
              {"diagnostics",
               {{"method", d.method},
                {"budget", d.budget},
                {"iterations_run", d.iterations_run},
                {"residual_norm", optional_json(d.residual_norm)},
                {"relative_error_surrogate", optional_json(d.relative_error)},
                {"alignment_trace", d.alignment_trace},
                {"wall_clock_seconds", d.wall_clock_seconds},
                {"early_stop", d.early_stop},
                {"stop_reason", d.stop_reason}}}};
}

Coreset Coreset::from_json(const Json& j) {
  try {
    std::vector<CoresetEntry> entries;
    for (const auto& e : j.at("entries"))
      entries.push_back({{e.at("batch_id").get<std::uint32_t>(), e.at("row_index").get<Eigen::Index>()},
                         e.at("weight").get<double>()});
    CoresetDiagnostics d;
    if (j.contains("diagnostics")) {
      const Json& jd = j.at("diagnostics");
      d.method = jd.value("method", "");
      d.budget = jd.value("budget", std::size_t{0});
      d.iterations_run = jd.value("iterations_run", std::size_t{0});
      d.residual_norm = optional_from(jd, "residual_norm");
      d.relative_error = optional_from(jd, "relative_error_surrogate");
      if (jd.contains("alignment_trace")) d.alignment_trace = jd.at("alignment_trace").get<std::vector<double>>();
      d.wall_clock_seconds = jd.value("wall_clock_seconds", 0.0);
      d.early_stop = jd.value("early_stop", false);
      d.stop_reason = jd.value("stop_reason", "");
    }
    return Coreset(j.at("model_family").get<std::string>(), std::move(entries), std::move(d));
  } catch (const Json::exception& e) {
    throw DataError(std::string("corrupt coreset JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid coreset JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Geodesic step

double alignment_after_step(double zeta0, double zeta1, double zeta2, double gamma) {
  const double a = 1.0 - gamma;
  const double sq = a * a + gamma * gamma + 2.0 * a * gamma * zeta2;
  if (!(sq > 0)) return -std::numeric_limits<double>::infinity();
  return (a * zeta0 + gamma * zeta1) / std::sqrt(sq);
}

GeodesicStep geodesic_step(double zeta0, double zeta1, double zeta2) {
  const double toward = zeta1 - zeta0 * zeta2;
  const double away = zeta0 - zeta1 * zeta2;
  const double denom = toward + away;

  GeodesicStep best{0.0, alignment_after_step(zeta0, zeta1, zeta2, 0.0), false};
  const double at_one = alignment_after_step(zeta0, zeta1, zeta2, 1.0);
  if (at_one > best.alignment) best = {1.0, at_one, false};
  if (std::abs(denom) < 1e-14) {
    best.degenerate = true;
    return best;
  }
  const double gamma = std::clamp(toward / denom, 0.0, 1.0);
  const double at_gamma = alignment_after_step(zeta0, zeta1, zeta2, gamma);
  if (at_gamma >= best.alignment) best = {gamma, at_gamma, false};
  return best;
}

// ---------------------------------------------------------------------------
// Constructors

namespace {

struct Prepared {
  Eigen::VectorXd total;
  double total_norm = 0.0;
  std::vector<Eigen::Index> candidates;  // usable rows
};

Prepared prepare(const LikelihoodEmbedding& emb, std::size_t iterations) {
  if (iterations < 1) throw std::invalid_argument("coreset budget must be >= 1");
  Prepared p;
  p.total = emb.total();
  p.total_norm = p.total.norm();
  for (Eigen::Index i = 0; i < emb.size(); ++i)
    if (emb.usable(i)) p.candidates.push_back(i);
  if (p.candidates.empty() || !(p.total_norm > 0))
    throw std::invalid_argument("embedding is identically zero");
  return p;
}

std::vector<CoresetEntry> positive_entries(const Eigen::VectorXd& w, std::uint32_t batch) {
  std::vector<CoresetEntry> out;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 0 && std::isfinite(w[i])) out.push_back({{batch, i}, w[i]});
  return out;
}

void stop(CoresetDiagnostics& d, const char* reason) {
  d.early_stop = true;
  d.stop_reason = reason;
}

}  // namespace

Coreset giga_construct(const LikelihoodEmbedding& emb, std::size_t iterations,
                       const std::string& model_family, std::uint32_t batch) {
  const Stopwatch clock;
  const Prepared p = prepare(emb, iterations);
  const Eigen::Index n = emb.size();

  Eigen::MatrixXd unit = emb.vectors;
  for (const Eigen::Index i : p.candidates) unit.row(i) /= emb.norms[i];
  const Eigen::VectorXd target = p.total / p.total_norm;
  const Eigen::VectorXd to_target = unit * target;  // <l, l_n>

  CoresetDiagnostics diag;
  diag.method = "giga";
  diag.budget = iterations;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);  // sphere-scale weights, y = sum w_n l_n
  Eigen::VectorXd y = Eigen::VectorXd::Zero(emb.dimension());
  double zeta0 = 0.0;

  // First step: the vertex best aligned with the target (gamma = 1).
  {
    Eigen::Index first = p.candidates.front();
    for (const Eigen::Index i : p.candidates)
      if (to_target[i] > to_target[first]) first = i;
    y = unit.row(first).transpose();
    w[first] = 1.0;
    zeta0 = target.dot(y);
    diag.alignment_trace.push_back(zeta0);
    diag.iterations_run = 1;
  }

  Eigen::VectorXd to_iterate(n);
  for (std::size_t t = 1; t < iterations; ++t) {
    to_iterate.noalias() = unit * y;  // <y, l_n>
    // Alignment of the residual directions: <(l - z0 y), (l_n - a_n y)> up to
    // the positive factor |l - z0 y|.
    Eigen::Index pick = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (const Eigen::Index i : p.candidates) {
      const double a = to_iterate[i];
      const double perp = 1.0 - a * a;
      if (!(perp > 1e-12)) continue;
      const double score = (to_target[i] - zeta0 * a) / std::sqrt(perp);
      if (score > best) {
        best = score;
        pick = i;
      }
    }
    if (pick < 0 || !(best > 0)) {
      stop(diag, "no ascent direction");
      break;
    }
    const GeodesicStep step = geodesic_step(zeta0, to_target[pick], to_iterate[pick]);
    if (step.degenerate) {
      stop(diag, "degenerate geodesic step (denominator below 1e-14)");
      break;
    }
    if (!(step.gamma > 0)) {
      stop(diag, "zero step");
      break;
    }
    Eigen::VectorXd next = (1.0 - step.gamma) * y + step.gamma * unit.row(pick).transpose();
    const double norm = next.norm();
    next /= norm;
    const double next_zeta0 = target.dot(next);
    if (!(next_zeta0 >= zeta0)) {
      stop(diag, "no further ascent");
      break;
    }
    w *= (1.0 - step.gamma);
    w[pick] += step.gamma;
    w /= norm;
    y = std::move(next);
    zeta0 = next_zeta0;
    diag.alignment_trace.push_back(zeta0);
    ++diag.iterations_run;
  }

  // Sphere weights back to likelihood scale, with the optimal scaling of the
  // final direction: sum_n w_n v_n = |L| <l, y> y.
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(n);
  for (const Eigen::Index i : p.candidates)
    if (w[i] > 0) weights[i] = w[i] * zeta0 * p.total_norm / emb.norms[i];

  Coreset c(model_family, positive_entries(weights, batch), std::move(diag));
  const Eigen::VectorXd approx = emb.vectors.transpose() * weights;
  const double residual = (p.total - approx).norm();
  c.diagnostics().residual_norm = residual;
  c.diagnostics().relative_error = residual / p.total_norm;
  c.diagnostics().wall_clock_seconds = clock.seconds();
  return c;
}

Coreset frankwolfe_construct(const LikelihoodEmbedding& emb, std::size_t iterations,
                             const std::string& model_family, std::uint32_t batch) {
  const Stopwatch clock;
  const Prepared p = prepare(emb, iterations);
  const Eigen::Index n = emb.size();
  double sigma = 0.0;
  for (const Eigen::Index i : p.candidates) sigma += emb.norms[i];

  CoresetDiagnostics diag;
  diag.method = "frank_wolfe";
  diag.budget = iterations;

  const auto vertex_score = [&](const Eigen::VectorXd& direction) {
    const Eigen::VectorXd proj = emb.vectors * direction;
    Eigen::Index pick = p.candidates.front();
    double best = -std::numeric_limits<double>::infinity();
    for (const Eigen::Index i : p.candidates) {
      const double s = proj[i] / emb.norms[i];
      if (s > best) {
        best = s;
        pick = i;
      }
    }
    return pick;
  };
  const auto alignment = [&](const Eigen::VectorXd& approx) {
    const double an = approx.norm();
    return an > 0 ? p.total.dot(approx) / (p.total_norm * an) : 0.0;
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  const Eigen::Index first = vertex_score(p.total);
  w[first] = sigma / emb.norms[first];
  Eigen::VectorXd approx = w[first] * emb.vectors.row(first).transpose();
  diag.alignment_trace.push_back(alignment(approx));
  diag.iterations_run = 1;

  const double scale2 = std::max(1.0, p.total_norm * p.total_norm);
  for (std::size_t t = 1; t < iterations; ++t) {
    const Eigen::VectorXd residual = p.total - approx;
    const Eigen::Index f = vertex_score(residual);
    const double vertex_weight = sigma / emb.norms[f];
    const Eigen::VectorXd direction = vertex_weight * emb.vectors.row(f).transpose() - approx;
    const double denom = direction.squaredNorm();
    if (denom < 1e-14 * scale2) {
      stop(diag, "degenerate line search (denominator below tolerance)");
      break;
    }
    const double gamma = std::clamp(direction.dot(residual) / denom, 0.0, 1.0);
    if (!(gamma > 0)) {
      stop(diag, "zero step");
      break;
    }
    w *= (1.0 - gamma);
    w[f] += gamma * vertex_weight;
    approx = (1.0 - gamma) * approx + gamma * vertex_weight * emb.vectors.row(f).transpose();
    diag.alignment_trace.push_back(alignment(approx));
    ++diag.iterations_run;
  }

  Coreset c(model_family, positive_entries(w, batch), std::move(diag));
  const Eigen::VectorXd exact = emb.vectors.transpose() * w;
  const double residual = (p.total - exact).norm();
  c.diagnostics().residual_norm = residual;
  c.diagnostics().relative_error = residual / p.total_norm;
  c.diagnostics().wall_clock_seconds = clock.seconds();
  return c;
}

Coreset random_construct(Eigen::Index data_size, std::size_t m, std::uint64_t seed,
                         const std::string& model_family, std::uint32_t batch) {
  if (m < 1 || static_cast<Eigen::Index>(m) > data_size)
    throw std::invalid_argument("random coreset size must lie in [1, data_size]");
  const Stopwatch clock;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data_size));
  for (Eigen::Index i = 0; i < data_size; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  const double weight = static_cast<double>(data_size) / static_cast<double>(m);
  std::vector<CoresetEntry> entries;
  entries.reserve(m);
  for (const Eigen::Index i : idx) entries.push_back({{batch, i}, weight});
  CoresetDiagnostics diag;
  diag.method = "random";
  diag.budget = m;
  diag.wall_clock_seconds = clock.seconds();
  return Coreset(model_family, std::move(entries), std::move(diag));
}

double coreset_residual(const LikelihoodEmbedding& emb, const Coreset& coreset, std::uint32_t batch) {
  const Eigen::VectorXd w = coreset.dense_weights(emb.size(), batch);
  return (emb.total() - emb.vectors.transpose() * w).norm();
}

void score_coreset(const LikelihoodEmbedding& emb, Coreset& coreset, std::uint32_t batch) {
  const double r = coreset_residual(emb, coreset, batch);
  coreset.diagnostics().residual_norm = r;
  const double t = emb.total().norm();
  coreset.diagnostics().relative_error = t > 0 ? std::optional<double>(r / t) : std::nullopt;
}

Coreset aggregate(std::span<const Coreset> coresets) {
  if (coresets.empty()) throw std::invalid_argument("aggregate of zero coresets");
  const std::string& family = coresets.front().model_family();
  std::vector<CoresetEntry> entries;
  std::set<SampleId> seen;
  CoresetDiagnostics diag;
  diag.method = "aggregate";
  for (const auto& c : coresets) {
    if (c.model_family() != family)
      throw std::invalid_argument("cannot aggregate coresets of model families '" + family +
                                  "' and '" + c.model_family() + "'");
    for (const auto& e : c.entries()) {
      if (!seen.insert(e.id).second)
        throw std::invalid_argument("aggregate inputs share source id (batch " +
                                    std::to_string(e.id.batch) + ", row " + std::to_string(e.id.row) + ")");
      entries.push_back(e);
    }
    diag.budget += c.diagnostics().budget;
    diag.iterations_run += c.diagnostics().iterations_run;
    diag.wall_clock_seconds += c.diagnostics().wall_clock_seconds;
  }
  if (coresets.size() == 1) return coresets.front();
  return Coreset(family, std::move(entries), std::move(diag));
}

void save_coreset(const std::filesystem::path& path, const Coreset& coreset) {
  write_text_file(path, coreset.to_json().dump(1) + "\n");
}

Coreset load_coreset(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw DataError("corrupt coreset file " + path.string() + ": " + e.what());
  }
  return Coreset::from_json(j);
}

}  // namespace bcore
