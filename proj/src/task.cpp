#include "hlmbo/task.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Dense>

#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return Rng(seq);
}

// ---------------------------------------------------------------- SearchSpace

SearchSpace::SearchSpace(std::vector<double> lower, std::vector<double> upper)
    : lower_(std::move(lower)), upper_(std::move(upper)) {
  if (lower_.empty() || lower_.size() != upper_.size())
    throw InvalidSpace("search space needs matching, nonempty bound vectors");
  for (std::size_t i = 0; i < lower_.size(); ++i) {
    if (!(lower_[i] < upper_[i]) || !std::isfinite(lower_[i]) ||
        !std::isfinite(upper_[i]))
      throw InvalidSpace("search space bound " + std::to_string(i) +
                         " requires lower < upper");
  }
}

SearchSpace SearchSpace::unit(std::size_t dims) {
  return SearchSpace(std::vector<double>(dims, 0.0),
                     std::vector<double>(dims, 1.0));
}

bool SearchSpace::contains(std::span<const double> x) const {
  if (x.size() != dims()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= lower_[i] && x[i] <= upper_[i])) return false;
  return true;
}

void SearchSpace::require_inside(std::span<const double> x) const {
  if (x.size() != dims())
    throw DomainError("point has " + std::to_string(x.size()) +
                      " coordinates, space has " + std::to_string(dims()));
  if (!contains(x)) throw DomainError("point outside search space bounds");
}

Point SearchSpace::clamp(std::span<const double> x) const {
  Point out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(out[i], lower_[i], upper_[i]);
  return out;
}

Point SearchSpace::to_unit(std::span<const double> x) const {
  Point u(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    u[i] = (x[i] - lower_[i]) / range(i);
  return u;
}

Point SearchSpace::from_unit(std::span<const double> u) const {
  Point x(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    x[i] = std::clamp(lower_[i] + u[i] * range(i), lower_[i], upper_[i]);
  return x;
}

std::vector<Point> sample_space(const SearchSpace& space, std::size_t n,
                                SampleMethod method, Rng& rng) {
  if (n == 0) throw EmptyRequest("sample_space requires n >= 1");
  const std::size_t d = space.dims();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Point> unit(n, Point(d));
  if (method == SampleMethod::uniform) {
    for (auto& u : unit)
      for (auto& v : u) v = unif(rng);
  } else {
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 0; j < d; ++j) {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t i = 0; i < n; ++i) {
        // keep strictly inside the bin even if unif returns ~1
        double v = (static_cast<double>(perm[i]) + unif(rng)) / n;
        unit[i][j] = std::min(v, std::nextafter((perm[i] + 1.0) / n, 0.0));
      }
    }
  }
  std::vector<Point> out;
  out.reserve(n);
  for (const auto& u : unit) out.push_back(space.from_unit(u));
  return out;
}

std::vector<Point> sample_space(const SearchSpace& space, std::size_t n,
                                SampleMethod method, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x5a3f);
  return sample_space(space, n, method, rng);
}

// ----------------------------------------------------------------- objectives

namespace {

class RandomFeatureObjective final : public Objective {
public:
  RandomFeatureObjective(SearchSpace space, Eigen::MatrixXd omega,
                         Eigen::VectorXd phase, Eigen::VectorXd weight)
      : space_(std::move(space)),
        omega_(std::move(omega)),
        phase_(std::move(phase)),
        weight_(std::move(weight)) {}

  double value(std::span<const double> x) const override {
    const auto k = omega_.rows();
    double acc = 0.0;
    for (Eigen::Index f = 0; f < k; ++f) {
      double arg = phase_[f];
      for (std::size_t j = 0; j < x.size(); ++j)
        arg += omega_(f, j) * (x[j] - space_.lower()[j]) / space_.range(j);
      acc += weight_[f] * std::cos(arg);
    }
    return std::sqrt(2.0 / static_cast<double>(k)) * acc;
  }

  std::vector<double> parameters() const {
    std::vector<double> p;
    for (Eigen::Index r = 0; r < omega_.rows(); ++r)
      for (Eigen::Index c = 0; c < omega_.cols(); ++c) p.push_back(omega_(r, c));
    p.insert(p.end(), phase_.data(), phase_.data() + phase_.size());
    p.insert(p.end(), weight_.data(), weight_.data() + weight_.size());
    return p;
  }

  json to_json() const override {
    return {{"type", "random_features"},
            {"features", omega_.rows()},
            {"space", space_},
            {"params", parameters()}};
  }

  static std::shared_ptr<const RandomFeatureObjective> from_params(
      const SearchSpace& space, std::size_t k, const std::vector<double>& p) {
    const std::size_t d = space.dims();
    if (p.size() != k * d + 2 * k)
      throw InvalidFamily("random-feature parameter vector has wrong length");
    Eigen::MatrixXd omega(k, d);
    Eigen::VectorXd phase(k), weight(k);
    std::size_t i = 0;
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < d; ++c) omega(r, c) = p[i++];
    for (std::size_t r = 0; r < k; ++r) phase[r] = p[i++];
    for (std::size_t r = 0; r < k; ++r) weight[r] = p[i++];
    return std::make_shared<RandomFeatureObjective>(space, omega, phase, weight);
  }

private:
  SearchSpace space_;
  Eigen::MatrixXd omega_;
  Eigen::VectorXd phase_;
  Eigen::VectorXd weight_;
};

// Three Gaussian bumps at fixed relative offsets, translated, scaled and
// rotated per task. The first bump is the global one.
class MultimodalObjective final : public Objective {
public:
  static constexpr std::array<double, 3> kWidth{0.10, 0.16, 0.22};
  static constexpr std::array<double, 3> kAmplitude{1.0, 0.6, 0.45};

  MultimodalObjective(SearchSpace space, Eigen::VectorXd shift, double scale,
                      Eigen::MatrixXd rotation, std::array<double, 2> jitter)
      : space_(std::move(space)),
        shift_(std::move(shift)),
        scale_(scale),
        rotation_(std::move(rotation)),
        jitter_(jitter) {
    const auto d = static_cast<Eigen::Index>(space_.dims());
    offsets_.assign(3, Eigen::VectorXd::Zero(d));
    offsets_[1][0] = 0.28;
    offsets_[2][0] = -0.26;
    if (d > 1) {
      offsets_[1][1] = -0.18;
      offsets_[2][1] = 0.22;
    }
  }

  double value(std::span<const double> x) const override {
    const auto d = static_cast<Eigen::Index>(x.size());
    Eigen::VectorXd u(d);
    for (Eigen::Index j = 0; j < d; ++j)
      u[j] = (x[j] - space_.lower()[j]) / space_.range(j) - 0.5 - shift_[j];
    const Eigen::VectorXd v = rotation_ * u / scale_;
    double acc = 0.0;
    for (std::size_t b = 0; b < 3; ++b) {
      const double amp = kAmplitude[b] * (b == 0 ? 1.0 : 1.0 + jitter_[b - 1]);
      const double r2 = (v - offsets_[b]).squaredNorm();
      acc += amp * std::exp(-0.5 * r2 / (kWidth[b] * kWidth[b]));
    }
    return acc;
  }

  std::vector<double> parameters() const {
    std::vector<double> p(shift_.data(), shift_.data() + shift_.size());
    p.push_back(scale_);
    for (Eigen::Index r = 0; r < rotation_.rows(); ++r)
      for (Eigen::Index c = 0; c < rotation_.cols(); ++c)
        p.push_back(rotation_(r, c));
    p.push_back(jitter_[0]);
    p.push_back(jitter_[1]);
    return p;
  }

  json to_json() const override {
    return {{"type", "multimodal"}, {"space", space_}, {"params", parameters()}};
  }

  static std::shared_ptr<const MultimodalObjective> from_params(
      const SearchSpace& space, const std::vector<double>& p) {
    const std::size_t d = space.dims();
    if (p.size() != d + 1 + d * d + 2)
      throw InvalidFamily("multimodal parameter vector has wrong length");
    Eigen::VectorXd shift(d);
    std::size_t i = 0;
    for (std::size_t j = 0; j < d; ++j) shift[j] = p[i++];
    const double scale = p[i++];
    Eigen::MatrixXd rot(d, d);
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) rot(r, c) = p[i++];
    std::array<double, 2> jitter{p[i], p[i + 1]};
    return std::make_shared<MultimodalObjective>(space, shift, scale, rot,
                                                 jitter);
  }

private:
  SearchSpace space_;
  Eigen::VectorXd shift_;
  double scale_;
  Eigen::MatrixXd rotation_;
  std::array<double, 2> jitter_;
  std::vector<Eigen::VectorXd> offsets_;
};

std::shared_ptr<const Objective> draw_objective(const FamilyConfig& cfg,
                                                const SearchSpace& space,
                                                Rng& rng) {
  const auto d = static_cast<Eigen::Index>(cfg.dims);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (cfg.kind == FamilyKind::random_features) {
    const auto k = static_cast<Eigen::Index>(cfg.features);
    Eigen::MatrixXd omega(k, d);
    Eigen::VectorXd phase(k), weight(k);
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < d; ++c)
        omega(r, c) = gauss(rng) / cfg.lengthscale;
    for (Eigen::Index r = 0; r < k; ++r)
      phase[r] = 2.0 * std::numbers::pi * unif(rng);
    for (Eigen::Index r = 0; r < k; ++r) weight[r] = gauss(rng);
    return std::make_shared<RandomFeatureObjective>(space, omega, phase, weight);
  }
  Eigen::VectorXd shift(d);
  for (Eigen::Index j = 0; j < d; ++j)
    shift[j] = cfg.max_shift * (2.0 * unif(rng) - 1.0);
  const double scale = 0.75 + 0.5 * unif(rng);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c) g(r, c) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd rr = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < d; ++c)
    if (rr(c, c) < 0) q.col(c) *= -1.0;
  std::array<double, 2> jitter{0.2 * unif(rng) - 0.1, 0.2 * unif(rng) - 0.1};
  return std::make_shared<MultimodalObjective>(space, shift, scale, q, jitter);
}

double pattern_search(const SearchSpace& space, const Objective& obj, Point& x,
                      double step_frac) {
  double best = obj.value(x);
  std::vector<double> step(space.dims());
  for (std::size_t j = 0; j < step.size(); ++j)
    step[j] = step_frac * space.range(j);
  for (int iter = 0; iter < 400; ++iter) {
    bool improved = false;
    for (std::size_t j = 0; j < x.size(); ++j) {
      for (double dir : {1.0, -1.0}) {
        Point y = x;
        y[j] = std::clamp(x[j] + dir * step[j], space.lower()[j],
                          space.upper()[j]);
        const double v = obj.value(y);
        if (v > best) {
          best = v;
          x = std::move(y);
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      bool done = true;
      for (std::size_t j = 0; j < step.size(); ++j) {
        step[j] *= 0.5;
        if (step[j] > 1e-10 * space.range(j)) done = false;
      }
      if (done) break;
    }
  }
  return best;
}

}  // namespace

std::string to_string(FamilyKind kind) {
  return kind == FamilyKind::random_features ? "random_features" : "multimodal";
}

FamilyKind family_kind_from_string(const std::string& s) {
  if (s == "random_features") return FamilyKind::random_features;
  if (s == "multimodal") return FamilyKind::multimodal;
  throw InvalidFamily("unknown family kind '" + s + "'");
}

// --------------------------------------------------------------- BlackBoxTask

BlackBoxTask::BlackBoxTask(std::string id, SearchSpace space,
                           std::shared_ptr<const Objective> objective,
                           std::optional<Optimum> known_optimum)
    : id_(std::move(id)),
      space_(std::move(space)),
      objective_(std::move(objective)),
      optimum_(std::move(known_optimum)) {}

double BlackBoxTask::evaluate(std::span<const double> x) const {
  space_.require_inside(x);
  return objective_->value(x);
}

Optimum BlackBoxTask::find_optimum(const SearchSpace& space,
                                   const Objective& obj, std::uint64_t seed) {
  const std::size_t d = space.dims();
  std::vector<std::pair<double, Point>> scored;
  double grid_step = 0.0;
  if (d <= 3) {
    const auto per_dim = static_cast<std::size_t>(
        std::ceil(std::pow(1e4, 1.0 / static_cast<double>(d)) - 1e-9));
    grid_step = 1.0 / static_cast<double>(per_dim - 1);
    std::vector<std::size_t> idx(d, 0);
    Point u(d);
    while (true) {
      for (std::size_t j = 0; j < d; ++j) u[j] = idx[j] * grid_step;
      Point x = space.from_unit(u);
      scored.emplace_back(obj.value(x), std::move(x));
      std::size_t j = 0;
      while (j < d && ++idx[j] == per_dim) idx[j++] = 0;
      if (j == d) break;
    }
  } else {
    auto rng = make_rng(seed, 0x0b7);
    for (auto& x : sample_space(space, 100000, SampleMethod::latin_hypercube, rng))
      scored.emplace_back(obj.value(x), std::move(x));
    grid_step = 0.05;
  }
  const std::size_t keep = std::min<std::size_t>(5, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  Optimum best{scored[0].second, scored[0].first};
  for (std::size_t i = 0; i < keep; ++i) {
    Point x = scored[i].second;
    const double v = pattern_search(space, obj, x, grid_step);
    if (v > best.value) best = {std::move(x), v};
  }
  best.value = obj.value(best.point);
  return best;
}

double evaluate(const BlackBoxTask& task, std::span<const double> x) {
  return task.evaluate(x);
}

std::size_t TaskDataset::argmax() const {
  if (values.empty()) throw EmptyRequest("argmax of an empty dataset");
  return static_cast<std::size_t>(
      std::max_element(values.begin(), values.end()) - values.begin());
}

// ----------------------------------------------------------------- TaskFamily

namespace {

SearchSpace family_space(const FamilyConfig& cfg) {
  if (cfg.lower.empty() && cfg.upper.empty()) return SearchSpace::unit(cfg.dims);
  if (cfg.lower.size() != cfg.dims || cfg.upper.size() != cfg.dims)
    throw InvalidFamily("family bounds must have `dims` entries");
  return SearchSpace(cfg.lower, cfg.upper);
}

BlackBoxTask build_task(std::string id, const SearchSpace& space,
                        std::shared_ptr<const Objective> obj,
                        std::uint64_t seed) {
  auto opt = BlackBoxTask::find_optimum(space, *obj, seed);
  return BlackBoxTask(std::move(id), space, std::move(obj), std::move(opt));
}

}  // namespace

TaskFamily make_synthetic_family(const FamilyConfig& config, std::uint64_t seed) {
  if (config.dims == 0) throw InvalidFamily("family needs dims >= 1");
  if (config.n_train == 0) throw InvalidFamily("family needs n_train >= 1");
  if (config.kind == FamilyKind::random_features &&
      (config.features == 0 || !(config.lengthscale > 0)))
    throw InvalidFamily("random-feature family needs features >= 1 and lengthscale > 0");
  TaskFamily fam;
  fam.config = config;
  fam.seed = seed;
  fam.space = family_space(config);
  std::uint64_t stream = 1;
  auto fill = [&](std::vector<BlackBoxTask>& split, std::size_t n,
                  const std::string& prefix) {
    for (std::size_t i = 0; i < n; ++i, ++stream) {
      auto rng = make_rng(seed, stream);
      auto obj = draw_objective(config, fam.space, rng);
      split.push_back(build_task(prefix + "-" + std::to_string(i), fam.space,
                                 std::move(obj), seed ^ stream));
    }
  };
  fill(fam.train, config.n_train, "train");
  fill(fam.val, config.n_val, "val");
  fill(fam.test, config.n_test, "test");
  return fam;
}

std::vector<double> task_parameters(const BlackBoxTask& task) {
  auto j = task.objective().to_json();
  if (j.is_null()) return {};
  return j.at("params").get<std::vector<double>>();
}

// ------------------------------------------------------------ expert / regret

std::string to_string(Choice c) { return c == Choice::first ? "first" : "second"; }

Choice choice_from_string(const std::string& s) {
  if (s == "first") return Choice::first;
  if (s == "second") return Choice::second;
  throw BadRequest("choice must be \"first\" or \"second\"");
}

SimulatedExpert::SimulatedExpert(double sigma_pref, std::uint64_t seed)
    : sigma_(sigma_pref), rng_(make_rng(seed, 0xe4e7)) {
  if (!(sigma_pref >= 0.0)) throw InvalidConfig("sigma_pref must be >= 0");
}

Choice SimulatedExpert::choose(const BlackBoxTask& task,
                               std::span<const double> x1,
                               std::span<const double> x2) {
  double f1 = task.evaluate(x1);
  double f2 = task.evaluate(x2);
  if (sigma_ > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma_);
    f1 += noise(rng_);
    f2 += noise(rng_);
  }
  return f1 >= f2 ? Choice::first : Choice::second;
}

Choice simulated_expert_choice(SimulatedExpert& expert, const BlackBoxTask& task,
                               std::span<const double> x1,
                               std::span<const double> x2) {
  return expert.choose(task, x1, x2);
}

std::vector<double> simple_regret(const BlackBoxTask& task,
                                  const TaskDataset& history) {
  if (!task.known_optimum())
    throw RegretUnavailable("task '" + task.id() + "' has no known optimum");
  if (history.empty()) throw EmptyRequest("regret of an empty history");
  const double best = task.known_optimum()->value;
  std::vector<double> out;
  out.reserve(history.size());
  double running = -std::numeric_limits<double>::infinity();
  for (double y : history.values) {
    running = std::max(running, y);
    out.push_back(best - running);
  }
  return out;
}

// ----------------------------------------------------------------------- JSON

void to_json(json& j, const SearchSpace& s) {
  j = {{"lower", s.lower()}, {"upper", s.upper()}};
}

void from_json(const json& j, SearchSpace& s) {
  s = SearchSpace(j.at("lower").get<std::vector<double>>(),
                  j.at("upper").get<std::vector<double>>());
}

void to_json(json& j, const TaskDataset& d) {
  j = {{"task_id", d.task_id}, {"points", d.points}, {"values", d.values}};
}

void from_json(const json& j, TaskDataset& d) {
  d.task_id = j.value("task_id", "");
  d.points = j.at("points").get<std::vector<Point>>();
  d.values = j.at("values").get<std::vector<double>>();
  if (d.points.size() != d.values.size())
    throw InvalidDataset("dataset points/values length mismatch");
}

void to_json(json& j, const FamilyConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"dims", c.dims},
       {"n_train", c.n_train},      {"n_val", c.n_val},
       {"n_test", c.n_test},        {"lower", c.lower},
       {"upper", c.upper},          {"features", c.features},
       {"lengthscale", c.lengthscale}, {"max_shift", c.max_shift}};
}

void from_json(const json& j, FamilyConfig& c) {
  FamilyConfig d;
  c.kind = family_kind_from_string(j.value("kind", to_string(d.kind)));
  c.dims = j.value("dims", d.dims);
  c.n_train = j.value("n_train", d.n_train);
  c.n_val = j.value("n_val", d.n_val);
  c.n_test = j.value("n_test", d.n_test);
  c.lower = j.value("lower", d.lower);
  c.upper = j.value("upper", d.upper);
  c.features = j.value("features", d.features);
  c.lengthscale = j.value("lengthscale", d.lengthscale);
  c.max_shift = j.value("max_shift", d.max_shift);
}

json task_to_json(const BlackBoxTask& task) {
  json j = {{"id", task.id()}, {"space", task.space()},
            {"objective", task.objective().to_json()}};
  if (task.known_optimum())
    j["known_optimum"] = {{"point", task.known_optimum()->point},
                          {"value", task.known_optimum()->value}};
  return j;
}

BlackBoxTask task_from_json(const json& j) {
  const auto space = j.at("space").get<SearchSpace>();
  const auto& o = j.at("objective");
  if (o.is_null()) throw InvalidFamily("task objective is not serializable");
  std::shared_ptr<const Objective> obj;
  const auto type = o.at("type").get<std::string>();
  const auto params = o.at("params").get<std::vector<double>>();
  if (type == "random_features")
    obj = RandomFeatureObjective::from_params(space, o.at("features").get<std::size_t>(),
                                              params);
  else if (type == "multimodal")
    obj = MultimodalObjective::from_params(space, params);
  else
    throw InvalidFamily("unknown objective type '" + type + "'");
  std::optional<Optimum> opt;
  if (j.contains("known_optimum"))
    opt = Optimum{j["known_optimum"].at("point").get<Point>(),
                  j["known_optimum"].at("value").get<double>()};
  return BlackBoxTask(j.at("id").get<std::string>(), space, std::move(obj),
                      std::move(opt));
}

json family_to_json(const TaskFamily& family) {
  json j = {{"format", "hlmbo.family/1"},
            {"config", family.config},
            {"seed", family.seed},
            {"space", family.space}};
  for (const auto* split : {"train", "val", "test"}) {
    const auto& tasks = std::string(split) == "train" ? family.train
                        : std::string(split) == "val" ? family.val
                                                      : family.test;
    json arr = json::array();
    for (const auto& t : tasks) arr.push_back(task_to_json(t));
    j[split] = std::move(arr);
  }
  return j;
}

TaskFamily family_from_json(const json& j) {
  if (j.value("format", "") != "hlmbo.family/1")
    throw InvalidFamily("unsupported family document format");
  TaskFamily fam;
  fam.config = j.at("config").get<FamilyConfig>();
  fam.seed = j.at("seed").get<std::uint64_t>();
  fam.space = j.at("space").get<SearchSpace>();
  for (const auto& t : j.at("train")) fam.train.push_back(task_from_json(t));
  for (const auto& t : j.at("val")) fam.val.push_back(task_from_json(t));
  for (const auto& t : j.at("test")) fam.test.push_back(task_from_json(t));
  return fam;
}

}  // namespace hlmbo
