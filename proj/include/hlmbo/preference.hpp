#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hlmbo/task.hpp"

namespace hlmbo {

/// Expert-designated region of the search space: a union of sub-boxes.
class Hypothesis {
public:
  Hypothesis() = default;
  /// Every box must be nonempty and lie inside `space`; throws InvalidSpace.
  Hypothesis(const SearchSpace& space, std::vector<SearchSpace> boxes);

  static Hypothesis full(const SearchSpace& space);

  const std::vector<SearchSpace>& boxes() const { return boxes_; }
  bool contains(std::span<const double> x) const;
  /// Uniform draw over the union (boxes picked by volume).
  Point sample(Rng& rng) const;

private:
  std::vector<SearchSpace> boxes_;
  std::vector<double> volume_cdf_;
};

enum class HypothesisKind { expert, random, adversarial };

std::string to_string(HypothesisKind kind);
HypothesisKind hypothesis_kind_from_string(const std::string& s);

/// Slices the first dimension into `slices` equal slabs. `expert` picks the slab
/// holding the known optimum, `adversarial` the slab whose `points_per_slice`
/// Latin-hypercube samples have the lowest value sum, `random` the whole space.
Hypothesis make_hypothesis(HypothesisKind kind, const BlackBoxTask& task,
                           std::size_t slices, std::size_t points_per_slice,
                           std::uint64_t seed);

struct PreferencePair {
  Point x1;
  Point x2;
  int y = 0;  // 1 iff x1 is favored
  std::string source = "simulated";
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  /// Set when elicitation stopped before all requested labels arrived.
  bool aborted = false;

  std::size_t size() const { return pairs.size(); }
  /// Throws InvalidDataset on mismatched dimensions, bad labels or x1 == x2.
  void validate() const;
};

/// Returns the expert's pick for a pair, or nullopt to abort elicitation.
using ChoiceOracle = std::function<std::optional<Choice>(
    std::span<const double>, std::span<const double>)>;

/// The unlabeled pairs build_pref_dataset would present for the same seed.
std::vector<std::pair<Point, Point>> sample_pref_pairs(const SearchSpace& space,
                                                       const Hypothesis& hypothesis,
                                                       std::size_t m, std::uint64_t seed);

/// `m` pairs drawn uniformly inside the hypothesis and labeled by `oracle`.
/// Identical draws are resampled. On abort the partial dataset is returned
/// with `aborted` set.
PreferenceDataset build_pref_dataset(const ChoiceOracle& oracle,
                                     const SearchSpace& space,
                                     const Hypothesis& hypothesis, std::size_t m,
                                     std::uint64_t seed,
                                     const std::string& source = "simulated");

/// Oracle backed by a simulated expert (noisy comparisons).
ChoiceOracle simulated_oracle(SimulatedExpert& expert, const BlackBoxTask& task);

/// Oracle whose answer agrees with the true ordering with probability
/// `accuracy`, independently per pair.
ChoiceOracle accuracy_oracle(const BlackBoxTask& task, double accuracy,
                             std::uint64_t seed);

/// Appends (x2, x1, 1 - y) for every (x1, x2, y).
PreferenceDataset augment_skew(const PreferenceDataset& d);

/// S(y; z) = z^y (1 - z)^(1 - y).
double bernoulli_likelihood(int y, double z);

struct PreferenceConfig {
  double dirichlet_eps = 0.01;
  int mc_samples = 64;
  std::vector<double> lengthscale_grid{0.5, 1.0, 2.0};
};

void to_json(nlohmann::json& j, const PreferenceConfig& c);
void from_json(const nlohmann::json& j, PreferenceConfig& c);

struct PreferencePosterior {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Pairwise preference model: two Dirichlet-transformed GP regressions (one
/// per class) over concatenated pair features with a shared Matérn-5/2 kernel.
class PreferenceModel {
public:
  PreferenceModel() = default;

  bool fitted() const { return fitted_; }
  const PreferenceConfig& config() const { return cfg_; }
  const SearchSpace& space() const { return space_; }
  double lengthscale() const { return lengthscale_; }
  double signal_variance() const { return signal_var_; }
  double jitter() const { return jitter_; }
  /// Mean Bernoulli log-likelihood of the training labels under the model.
  double train_log_likelihood() const { return train_loglik_; }

  /// Latent (mean, variance) of class `c` at a pair.
  std::pair<double, double> latent(int c, std::span<const double> x1,
                                   std::span<const double> x2) const;

  /// Monte-Carlo estimate of p(x1 favored over x2).
  double probability(std::span<const double> x1, std::span<const double> x2,
                     std::uint64_t mc_seed = 0) const;

  /// Mean and variance of p(x favored over x_ref) for each query.
  PreferencePosterior posterior(std::span<const Point> queries,
                                std::span<const double> x_ref,
                                std::uint64_t mc_seed) const;

  friend PreferenceModel fit_preference_model(const PreferenceDataset&,
                                              const SearchSpace&,
                                              const PreferenceConfig&);

private:
  struct ClassFit {
    Eigen::LLT<Eigen::MatrixXd> chol;
    Eigen::VectorXd alpha;
  };

  Eigen::VectorXd features(std::span<const double> x1,
                           std::span<const double> x2) const;
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
  std::vector<double> mc_probabilities(const Eigen::VectorXd& z,
                                       std::uint64_t mc_seed) const;

  bool fitted_ = false;
  PreferenceConfig cfg_;
  SearchSpace space_;
  Eigen::MatrixXd z_;  // n x 2d, unit-scaled
  double lengthscale_ = 1.0;
  double signal_var_ = 1.0;
  double prior_mean_ = 0.0;
  double jitter_ = 0.0;
  double train_loglik_ = 0.0;
  ClassFit cls_[2];
};

/// Fits the two class GPs. Lengthscale starts at the median pairwise feature
/// distance and is chosen from the grid by marginal likelihood. Throws
/// FitError if the kernel stays singular after jitter escalation.
PreferenceModel fit_preference_model(const PreferenceDataset& augmented,
                                     const SearchSpace& space,
                                     const PreferenceConfig& cfg = {});

// JSON lines: {"x1":[...],"x2":[...],"y":0|1,"source":"simulated"|"human"}
void write_jsonl(const PreferenceDataset& d, std::ostream& os);
PreferenceDataset read_jsonl(std::istream& is);

void to_json(nlohmann::json& j, const PreferencePair& p);
void from_json(const nlohmann::json& j, PreferencePair& p);
void to_json(nlohmann::json& j, const Hypothesis& h);
Hypothesis hypothesis_from_json(const nlohmann::json& j, const SearchSpace& space);

}  // namespace hlmbo
