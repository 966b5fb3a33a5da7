#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace hlmbo {

using Point = std::vector<double>;
using Rng = std::mt19937_64;

/// Derives an independent generator from a base seed and a stream tag.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// Box-bounded input domain.
class SearchSpace {
public:
  SearchSpace() = default;
  SearchSpace(std::vector<double> lower, std::vector<double> upper);

  /// The unit hypercube [0,1]^dims.
  static SearchSpace unit(std::size_t dims);

  std::size_t dims() const { return lower_.size(); }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  double range(std::size_t i) const { return upper_[i] - lower_[i]; }

  bool contains(std::span<const double> x) const;
  /// Throws DomainError if `x` has the wrong size or lies outside the box.
  void require_inside(std::span<const double> x) const;
  Point clamp(std::span<const double> x) const;

  /// Min-max scaling to the unit box and back.
  Point to_unit(std::span<const double> x) const;
  Point from_unit(std::span<const double> u) const;

  bool operator==(const SearchSpace&) const = default;

private:
  std::vector<double> lower_;
  std::vector<double> upper_;
};

enum class SampleMethod { uniform, latin_hypercube };

/// `n` points inside `space`. Latin hypercube puts exactly one sample in each
/// of the n equal-width bins of every dimension.
std::vector<Point> sample_space(const SearchSpace& space, std::size_t n,
                                SampleMethod method, std::uint64_t seed);
std::vector<Point> sample_space(const SearchSpace& space, std::size_t n,
                                SampleMethod method, Rng& rng);

/// Deterministic scalar objective over a search space.
class Objective {
public:
  virtual ~Objective() = default;
  virtual double value(std::span<const double> x) const = 0;
  /// Serializable description, or null for objectives that only live in
  /// process (e.g. lambdas in tests).
  virtual nlohmann::json to_json() const { return nullptr; }
};

/// Wraps an arbitrary callable; not serializable.
class FunctionObjective final : public Objective {
public:
  explicit FunctionObjective(std::function<double(std::span<const double>)> fn)
      : fn_(std::move(fn)) {}
  double value(std::span<const double> x) const override { return fn_(x); }

private:
  std::function<double(std::span<const double>)> fn_;
};

enum class FamilyKind { random_features, multimodal };

std::string to_string(FamilyKind kind);
FamilyKind family_kind_from_string(const std::string& s);

struct Optimum {
  Point point;
  double value = 0.0;
};

/// A black-box task: a search space, a deterministic objective and, for
/// synthetic tasks, the location and value of the global maximum.
class BlackBoxTask {
public:
  BlackBoxTask() = default;
  BlackBoxTask(std::string id, SearchSpace space,
               std::shared_ptr<const Objective> objective,
               std::optional<Optimum> known_optimum = std::nullopt);

  const std::string& id() const { return id_; }
  const SearchSpace& space() const { return space_; }
  const std::optional<Optimum>& known_optimum() const { return optimum_; }
  const Objective& objective() const { return *objective_; }
  std::shared_ptr<const Objective> objective_ptr() const { return objective_; }

  /// f(x); throws DomainError if x is out of bounds.
  double evaluate(std::span<const double> x) const;

  /// Locates the maximum by dense grid (dims <= 3) or 10^5 Latin-hypercube
  /// points, then polishes the best few by bounded pattern search.
  static Optimum find_optimum(const SearchSpace& space, const Objective& obj,
                              std::uint64_t seed);

private:
  std::string id_;
  SearchSpace space_;
  std::shared_ptr<const Objective> objective_;
  std::optional<Optimum> optimum_;
};

/// Evaluated (x, y) pairs.
struct TaskDataset {
  std::string task_id;
  std::vector<Point> points;
  std::vector<double> values;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void add(Point x, double y) {
    points.push_back(std::move(x));
    values.push_back(y);
  }
  /// Index of the largest value; the dataset must be nonempty.
  std::size_t argmax() const;
};

struct FamilyConfig {
  FamilyKind kind = FamilyKind::multimodal;
  std::size_t dims = 2;
  std::size_t n_train = 6;
  std::size_t n_val = 2;
  std::size_t n_test = 3;
  std::vector<double> lower;  // empty means the unit box
  std::vector<double> upper;
  // random-feature generator
  std::size_t features = 32;
  double lengthscale = 0.3;
  // multimodal generator: maximum translation of the template, in unit coords
  double max_shift = 0.3;
};

struct TaskFamily {
  FamilyConfig config;
  std::uint64_t seed = 0;
  SearchSpace space;
  std::vector<BlackBoxTask> train;
  std::vector<BlackBoxTask> val;
  std::vector<BlackBoxTask> test;
};

/// Generates a family of related tasks. Task parameters are drawn from
/// independent streams of `seed`, so the same (config, seed) always gives the
/// same family. Throws InvalidFamily on zero training tasks or zero dims.
TaskFamily make_synthetic_family(const FamilyConfig& config, std::uint64_t seed);

/// Returns the synthetic objective parameters of one task, in the order used by
/// the JSON form. Empty for non-synthetic objectives.
std::vector<double> task_parameters(const BlackBoxTask& task);

/// f(x), throwing DomainError if x is outside the task's space.
double evaluate(const BlackBoxTask& task, std::span<const double> x);

enum class Choice { first, second };

std::string to_string(Choice c);
Choice choice_from_string(const std::string& s);

/// Noisy comparison expert: prefers x1 iff f(x1)+e1 > f(x2)+e2 with
/// e1, e2 ~ N(0, sigma_pref^2). Holds its own random stream.
class SimulatedExpert {
public:
  SimulatedExpert(double sigma_pref, std::uint64_t seed);

  double sigma_pref() const { return sigma_; }
  Choice choose(const BlackBoxTask& task, std::span<const double> x1,
                std::span<const double> x2);

private:
  double sigma_;
  Rng rng_;
};

Choice simulated_expert_choice(SimulatedExpert& expert, const BlackBoxTask& task,
                               std::span<const double> x1,
                               std::span<const double> x2);

/// R_t = f(x*) - max_{i<=t} y_i. Throws RegretUnavailable without a known
/// optimum and EmptyRequest on an empty history.
std::vector<double> simple_regret(const BlackBoxTask& task,
                                  const TaskDataset& history);

// JSON
void to_json(nlohmann::json& j, const SearchSpace& s);
void from_json(const nlohmann::json& j, SearchSpace& s);
void to_json(nlohmann::json& j, const TaskDataset& d);
void from_json(const nlohmann::json& j, TaskDataset& d);
void to_json(nlohmann::json& j, const FamilyConfig& c);
void from_json(const nlohmann::json& j, FamilyConfig& c);

nlohmann::json family_to_json(const TaskFamily& family);
TaskFamily family_from_json(const nlohmann::json& j);

/// Rebuilds a synthetic task from its serialized form.
nlohmann::json task_to_json(const BlackBoxTask& task);
BlackBoxTask task_from_json(const nlohmann::json& j);

}  // namespace hlmbo
