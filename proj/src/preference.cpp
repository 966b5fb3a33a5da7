#include "hlmbo/preference.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;

// ----------------------------------------------------------------- Hypothesis

Hypothesis::Hypothesis(const SearchSpace& space, std::vector<SearchSpace> boxes)
    : boxes_(std::move(boxes)) {
  if (boxes_.empty()) throw InvalidSpace("hypothesis needs at least one box");
  double total = 0.0;
  for (const auto& b : boxes_) {
    if (b.dims() != space.dims())
      throw InvalidSpace("hypothesis box dimensionality differs from the space");
    double vol = 1.0;
    for (std::size_t j = 0; j < b.dims(); ++j) {
      if (b.lower()[j] < space.lower()[j] || b.upper()[j] > space.upper()[j])
        throw InvalidSpace("hypothesis box leaves the search space");
      vol *= b.range(j) / space.range(j);
    }
    total += vol;
    volume_cdf_.push_back(total);
  }
  for (auto& v : volume_cdf_) v /= total;
}

Hypothesis Hypothesis::full(const SearchSpace& space) {
  return Hypothesis(space, {space});
}

bool Hypothesis::contains(std::span<const double> x) const {
  return std::any_of(boxes_.begin(), boxes_.end(),
                     [&](const SearchSpace& b) { return b.contains(x); });
}

Point Hypothesis::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  std::size_t k = 0;
  while (k + 1 < volume_cdf_.size() && r > volume_cdf_[k]) ++k;
  const auto& b = boxes_[k];
  Point x(b.dims());
  for (std::size_t j = 0; j < x.size(); ++j)
    x[j] = std::min(b.lower()[j] + u(rng) * b.range(j), b.upper()[j]);
  return x;
}

std::string to_string(HypothesisKind kind) {
  switch (kind) {
    case HypothesisKind::expert: return "expert";
    case HypothesisKind::random: return "random";
    case HypothesisKind::adversarial: return "adversarial";
  }
  return "expert";
}

HypothesisKind hypothesis_kind_from_string(const std::string& s) {
  if (s == "expert") return HypothesisKind::expert;
  if (s == "random") return HypothesisKind::random;
  if (s == "adversarial") return HypothesisKind::adversarial;
  throw InvalidConfig("unknown hypothesis kind '" + s + "'");
}

namespace {

SearchSpace slab(const SearchSpace& space, std::size_t k, std::size_t slices) {
  auto lo = space.lower();
  auto hi = space.upper();
  const double w = space.range(0) / static_cast<double>(slices);
  lo[0] = space.lower()[0] + w * static_cast<double>(k);
  hi[0] = k + 1 == slices ? space.upper()[0] : space.lower()[0] + w * (k + 1.0);
  return SearchSpace(lo, hi);
}

}  // namespace

Hypothesis make_hypothesis(HypothesisKind kind, const BlackBoxTask& task,
                           std::size_t slices, std::size_t points_per_slice,
                           std::uint64_t seed) {
  const auto& space = task.space();
  if (kind == HypothesisKind::random) return Hypothesis::full(space);
  if (slices < 2) throw InvalidConfig("hypothesis slicing needs at least 2 slices");
  if (kind == HypothesisKind::expert) {
    if (!task.known_optimum())
      throw HypothesisUnavailable("expert hypothesis needs the task optimum");
    const double x0 = task.known_optimum()->point[0];
    const double w = space.range(0) / static_cast<double>(slices);
    auto k = static_cast<std::size_t>(std::floor((x0 - space.lower()[0]) / w));
    k = std::min(k, slices - 1);
    return Hypothesis(space, {slab(space, k, slices)});
  }
  if (points_per_slice == 0)
    throw EmptyRequest("adversarial hypothesis needs points per slice >= 1");
  std::size_t worst = 0;
  double worst_sum = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < slices; ++k) {
    const auto box = slab(space, k, slices);
    auto rng = make_rng(seed, 0xad0 + k);
    double sum = 0.0;
    for (const auto& x :
         sample_space(box, points_per_slice, SampleMethod::latin_hypercube, rng))
      sum += task.evaluate(x);
    if (sum < worst_sum) {
      worst_sum = sum;
      worst = k;
    }
  }
  return Hypothesis(space, {slab(space, worst, slices)});
}

// ------------------------------------------------------------------ datasets

void PreferenceDataset::validate() const {
  for (const auto& p : pairs) {
    if (p.x1.size() != p.x2.size() || p.x1.empty())
      throw InvalidDataset("preference pair points must share a nonzero dimension");
    if (p.y != 0 && p.y != 1) throw InvalidDataset("preference label must be 0 or 1");
    if (p.x1 == p.x2) throw InvalidDataset("preference pair has x1 == x2");
  }
}

std::vector<std::pair<Point, Point>> sample_pref_pairs(const SearchSpace& space,
                                                       const Hypothesis& hypothesis,
                                                       std::size_t m, std::uint64_t seed) {
  if (m == 0) throw EmptyRequest("preference dataset needs M >= 1");
  for (const auto& b : hypothesis.boxes())
    if (b.dims() != space.dims())
      throw InvalidSpace("hypothesis does not match the search space");
  auto rng = make_rng(seed, 0x9ef);
  std::vector<std::pair<Point, Point>> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    Point x1 = hypothesis.sample(rng);
    Point x2 = hypothesis.sample(rng);
    while (x1 == x2) x2 = hypothesis.sample(rng);
    out.emplace_back(std::move(x1), std::move(x2));
  }
  return out;
}

PreferenceDataset build_pref_dataset(const ChoiceOracle& oracle,
                                     const SearchSpace& space,
                                     const Hypothesis& hypothesis, std::size_t m,
                                     std::uint64_t seed, const std::string& source) {
  PreferenceDataset d;
  for (auto& [x1, x2] : sample_pref_pairs(space, hypothesis, m, seed)) {
    const auto choice = oracle(x1, x2);
    if (!choice) {
      d.aborted = true;
      break;
    }
    d.pairs.push_back({std::move(x1), std::move(x2),
                       *choice == Choice::first ? 1 : 0, source});
  }
  return d;
}

ChoiceOracle simulated_oracle(SimulatedExpert& expert, const BlackBoxTask& task) {
  return [&expert, &task](std::span<const double> a, std::span<const double> b)
             -> std::optional<Choice> { return expert.choose(task, a, b); };
}

ChoiceOracle accuracy_oracle(const BlackBoxTask& task, double accuracy,
                             std::uint64_t seed) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0))
    throw InvalidConfig("accuracy must lie in [0, 1]");
  auto rng = std::make_shared<Rng>(make_rng(seed, 0xacc));
  return [task, accuracy, rng](std::span<const double> a,
                               std::span<const double> b) -> std::optional<Choice> {
    const Choice truth = task.evaluate(a) >= task.evaluate(b) ? Choice::first
                                                              : Choice::second;
    const bool keep = std::uniform_real_distribution<double>(0.0, 1.0)(*rng) < accuracy;
    if (keep) return truth;
    return truth == Choice::first ? Choice::second : Choice::first;
  };
}

PreferenceDataset augment_skew(const PreferenceDataset& d) {
  PreferenceDataset out = d;
  out.pairs.reserve(2 * d.pairs.size());
  for (const auto& p : d.pairs) out.pairs.push_back({p.x2, p.x1, 1 - p.y, p.source});
  return out;
}

double bernoulli_likelihood(int y, double z) {
  return std::pow(z, y) * std::pow(1.0 - z, 1 - y);
}

void to_json(json& j, const PreferenceConfig& c) {
  j = {{"dirichlet_eps", c.dirichlet_eps},
       {"mc_samples", c.mc_samples},
       {"lengthscale_grid", c.lengthscale_grid}};
}

void from_json(const json& j, PreferenceConfig& c) {
  const PreferenceConfig d;
  c.dirichlet_eps = j.value("dirichlet_eps", d.dirichlet_eps);
  c.mc_samples = j.value("mc_samples", d.mc_samples);
  c.lengthscale_grid = j.value("lengthscale_grid", d.lengthscale_grid);
}

// --------------------------------------------------------------------- model

Eigen::VectorXd PreferenceModel::features(std::span<const double> x1,
                                          std::span<const double> x2) const {
  const std::size_t d = space_.dims();
  if (x1.size() != d || x2.size() != d)
    throw ShapeError("preference query has the wrong dimensionality");
  Eigen::VectorXd z(2 * d);
  for (std::size_t j = 0; j < d; ++j) {
    z[j] = (x1[j] - space_.lower()[j]) / space_.range(j);
    z[d + j] = (x2[j] - space_.lower()[j]) / space_.range(j);
  }
  return z;
}

namespace {

double matern52(double r2, double lengthscale, double var) {
  const double r = std::sqrt(std::max(r2, 0.0)) / lengthscale;
  const double s5 = std::sqrt(5.0) * r;
  return var * (1.0 + s5 + 5.0 * r * r / 3.0) * std::exp(-s5);
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& z, double ls, double var) {
  const auto n = z.rows();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      k(i, j) = k(j, i) = matern52((z.row(i) - z.row(j)).squaredNorm(), ls, var);
  return k;
}

struct DirichletTargets {
  Eigen::VectorXd y[2];
  Eigen::VectorXd noise[2];
};

DirichletTargets dirichlet_targets(const PreferenceDataset& d, double eps) {
  const auto n = static_cast<Eigen::Index>(d.size());
  DirichletTargets t;
  for (int c = 0; c < 2; ++c) {
    t.y[c].resize(n);
    t.noise[c].resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double alpha = eps + (d.pairs[i].y == c ? 1.0 : 0.0);
      const double s2 = std::log(1.0 / alpha + 1.0);
      t.noise[c][i] = s2;
      t.y[c][i] = std::log(alpha) - 0.5 * s2;
    }
  }
  return t;
}

// Cholesky with jitter escalation 0, 1e-8, ..., 1e-4 (relative to `scale`).
bool factor(const Eigen::MatrixXd& k, double scale, Eigen::LLT<Eigen::MatrixXd>& out,
            double& jitter) {
  for (double j : {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4}) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += j * scale;
    out.compute(kj);
    if (out.info() == Eigen::Success && kj.allFinite()) {
      jitter = j * scale;
      return true;
    }
  }
  return false;
}

}  // namespace

double PreferenceModel::kernel(const Eigen::VectorXd& a,
                               const Eigen::VectorXd& b) const {
  return matern52((a - b).squaredNorm(), lengthscale_, signal_var_);
}

PreferenceModel fit_preference_model(const PreferenceDataset& augmented,
                                     const SearchSpace& space,
                                     const PreferenceConfig& cfg) {
  if (augmented.size() < 2)
    throw FitError("preference model needs at least 2 (augmented) pairs");
  augmented.validate();
  if (!(cfg.dirichlet_eps > 0.0)) throw InvalidConfig("dirichlet_eps must be > 0");
  if (cfg.mc_samples < 2) throw InvalidConfig("mc_samples must be >= 2");
  if (cfg.lengthscale_grid.empty())
    throw InvalidConfig("lengthscale grid must be nonempty");

  PreferenceModel m;
  m.cfg_ = cfg;
  m.space_ = space;
  const auto n = static_cast<Eigen::Index>(augmented.size());
  m.z_.resize(n, 2 * static_cast<Eigen::Index>(space.dims()));
  for (Eigen::Index i = 0; i < n; ++i)
    m.z_.row(i) = m.features(augmented.pairs[i].x1, augmented.pairs[i].x2).transpose();

  const auto t = dirichlet_targets(augmented, cfg.dirichlet_eps);
  Eigen::VectorXd pooled(2 * n);
  pooled << t.y[0], t.y[1];
  m.prior_mean_ = pooled.mean();
  m.signal_var_ = std::max((pooled.array() - m.prior_mean_).square().mean(), 1e-6);

  std::vector<double> dists;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      const double dd = (m.z_.row(i) - m.z_.row(j)).norm();
      if (dd > 0.0) dists.push_back(dd);
    }
  double median = 1.0;
  if (!dists.empty()) {
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    median = dists[dists.size() / 2];
  }

  double best_lml = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (double mult : cfg.lengthscale_grid) {
    const double ls = mult * median;
    const Eigen::MatrixXd k = gram(m.z_, ls, m.signal_var_);
    double lml = 0.0;
    PreferenceModel::ClassFit fits[2];
    double jitter = 0.0;
    bool ok = true;
    for (int c = 0; c < 2 && ok; ++c) {
      Eigen::MatrixXd kc = k;
      kc.diagonal() += t.noise[c];
      double jc = 0.0;
      if (!factor(kc, m.signal_var_, fits[c].chol, jc)) {
        ok = false;
        break;
      }
      jitter = std::max(jitter, jc);
      const Eigen::VectorXd r = t.y[c].array() - m.prior_mean_;
      fits[c].alpha = fits[c].chol.solve(r);
      const Eigen::MatrixXd l = fits[c].chol.matrixL();
      lml += -0.5 * r.dot(fits[c].alpha) - l.diagonal().array().log().sum() -
             0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    }
    if (!ok) continue;
    if (lml > best_lml) {
      best_lml = lml;
      m.lengthscale_ = ls;
      m.jitter_ = jitter;
      m.cls_[0] = std::move(fits[0]);
      m.cls_[1] = std::move(fits[1]);
      any = true;
    }
  }
  if (!any) throw FitError("preference kernel matrix is singular after jitter 1e-4");
  m.fitted_ = true;

  double ll = 0.0;
  for (const auto& p : augmented.pairs)
    ll += std::log(std::max(bernoulli_likelihood(p.y, m.probability(p.x1, p.x2)), 1e-300));
  m.train_loglik_ = ll / static_cast<double>(augmented.size());
  return m;
}

std::pair<double, double> PreferenceModel::latent(int c, std::span<const double> x1,
                                                  std::span<const double> x2) const {
  if (!fitted_) throw ModelNotFitted("preference model has not been fitted");
  const Eigen::VectorXd z = features(x1, x2);
  const auto n = z_.rows();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks[i] = kernel(z, z_.row(i).transpose());
  const double mean = prior_mean_ + ks.dot(cls_[c].alpha);
  const Eigen::VectorXd v = cls_[c].chol.matrixL().solve(ks);
  const double var = std::max(signal_var_ - v.squaredNorm(), 1e-12);
  return {mean, var};
}

std::vector<double> PreferenceModel::mc_probabilities(const Eigen::VectorXd& z,
                                                      std::uint64_t mc_seed) const {
  const auto n = z_.rows();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks[i] = kernel(z, z_.row(i).transpose());
  double mean[2], sd[2];
  for (int c = 0; c < 2; ++c) {
    mean[c] = prior_mean_ + ks.dot(cls_[c].alpha);
    const Eigen::VectorXd v = cls_[c].chol.matrixL().solve(ks);
    sd[c] = std::sqrt(std::max(signal_var_ - v.squaredNorm(), 1e-12));
  }
  // Common random numbers: the same draws for every query under one seed.
  auto rng = make_rng(mc_seed, 0x3c);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> out(cfg_.mc_samples);
  for (auto& p : out) {
    const double f0 = mean[0] + sd[0] * g(rng);
    const double f1 = mean[1] + sd[1] * g(rng);
    const double dlt = f1 - f0;
    p = dlt >= 0 ? 1.0 / (1.0 + std::exp(-dlt)) : std::exp(dlt) / (1.0 + std::exp(dlt));
  }
  return out;
}

double PreferenceModel::probability(std::span<const double> x1,
                                    std::span<const double> x2,
                                    std::uint64_t mc_seed) const {
  if (!fitted_) throw ModelNotFitted("preference model has not been fitted");
  const auto ps = mc_probabilities(features(x1, x2), mc_seed);
  double s = 0.0;
  for (double p : ps) s += p;
  return s / static_cast<double>(ps.size());
}

PreferencePosterior PreferenceModel::posterior(std::span<const Point> queries,
                                               std::span<const double> x_ref,
                                               std::uint64_t mc_seed) const {
  if (!fitted_) throw ModelNotFitted("preference model has not been fitted");
  space_.require_inside(x_ref);
  PreferencePosterior post;
  post.mean.reserve(queries.size());
  post.variance.reserve(queries.size());
  for (const auto& x : queries) {
    const auto ps = mc_probabilities(features(x, x_ref), mc_seed);
    const double k = static_cast<double>(ps.size());
    double mu = 0.0;
    for (double p : ps) mu += p;
    mu /= k;
    double var = 0.0;
    for (double p : ps) var += (p - mu) * (p - mu);
    var /= (k - 1.0);
    post.mean.push_back(mu);
    post.variance.push_back(std::max(var, 1e-6));
  }
  return post;
}

// ---------------------------------------------------------------------- JSON

void to_json(json& j, const PreferencePair& p) {
  j = {{"x1", p.x1}, {"x2", p.x2}, {"y", p.y}, {"source", p.source}};
}

void from_json(const json& j, PreferencePair& p) {
  p.x1 = j.at("x1").get<Point>();
  p.x2 = j.at("x2").get<Point>();
  p.y = j.at("y").get<int>();
  p.source = j.value("source", "simulated");
  if (p.source != "simulated" && p.source != "human")
    throw InvalidDataset("preference source must be \"simulated\" or \"human\"");
}

void write_jsonl(const PreferenceDataset& d, std::ostream& os) {
  for (const auto& p : d.pairs) os << json(p).dump() << '\n';
}

PreferenceDataset read_jsonl(std::istream& is) {
  PreferenceDataset d;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      d.pairs.push_back(json::parse(line).get<PreferencePair>());
    } catch (const json::exception& e) {
      throw InvalidDataset(std::string("bad preference line: ") + e.what());
    }
  }
  d.validate();
  return d;
}

void to_json(json& j, const Hypothesis& h) {
  j = json::array();
  for (const auto& b : h.boxes()) j.push_back(b);
}

Hypothesis hypothesis_from_json(const json& j, const SearchSpace& space) {
  std::vector<SearchSpace> boxes;
  for (const auto& b : j) boxes.push_back(b.get<SearchSpace>());
  return Hypothesis(space, std::move(boxes));
}

}  // namespace hlmbo
