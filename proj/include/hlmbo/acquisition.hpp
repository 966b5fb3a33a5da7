#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hlmbo/preference.hpp"
#include "hlmbo/task.hpp"
#include "hlmbo/tnp.hpp"

namespace hlmbo {

/// Time decay of expert influence: S_pi^2 = var_pi + gamma * t^2 * var_S.
struct DecaySchedule {
  double gamma = 0.1;
  int t = 0;
  void validate() const;
};

struct EiConfig {
  double zeta = 0.1;
  void validate() const;
};

struct CombinedPosterior {
  double mean = 0.0;
  double variance = 0.0;
  double w_pi = 0.0;
  double w_S = 1.0;
};

/// Precision-weighted fusion of the surrogate and the preference posterior.
/// Throws InvalidPosterior on nonpositive or non-finite variances.
CombinedPosterior combine_posterior(double mu_S, double var_S, double mu_pi,
                                    double var_pi, const DecaySchedule& sched);

/// (w_pi, w_S) = (var_S, S_pi^2) / (S_pi^2 + var_S).
std::pair<double, double> noharm_weights(double var_pi, double var_S,
                                         const DecaySchedule& sched);

/// Closed-form EI with margin zeta; sigma == 0 gives max(mu - f_best - zeta, 0).
double expected_improvement(double mu, double sigma, double f_best,
                            const EiConfig& cfg);

/// mu + sigma.
double ucb(double mu, double sigma);

/// How the combined posterior is turned into a score.
enum class AcquisitionForm { ei, ucb };

std::string to_string(AcquisitionForm f);

/// Affine map taking preference probabilities onto the objective scale.
struct PreferenceBridge {
  double pi_mean = 0.0;
  double s_mean = 0.0;
  double slope = 1.0;

  double mean(double mu_pi) const { return s_mean + slope * (mu_pi - pi_mean); }
  double variance(double var_pi) const;

  /// Matches the mean and standard deviation of `mu_pi` to those of `mu_S`.
  static PreferenceBridge fit(std::span<const double> mu_S,
                              std::span<const double> mu_pi);
};

/// Everything computed at one point while scoring.
struct AcquisitionSnapshot {
  double mu_S = 0.0;
  double var_S = 0.0;
  double mu_pi = 0.5;   // raw preference probability
  double var_pi = 0.0;  // raw preference variance
  double mean = 0.0;    // acquisition input mean (combined or surrogate-only)
  double variance = 0.0;
  double w_pi = 0.0;
  double w_S = 1.0;
  double score = 0.0;
};

/// A scoring function bound to one model state. When a preference model is
/// supplied the surrogate is fused with the bridged preference posterior;
/// otherwise the surrogate is scored alone.
class Acquisition {
public:
  /// Surrogate-only scorer (alpha_S).
  Acquisition(const TnpModel& model, const TaskDataset& context,
              const EiConfig& cfg, AcquisitionForm form = AcquisitionForm::ei);

  /// Fused scorer (alpha_{S,pi}). The reference point for the preference
  /// model is the incumbent (or the center of the space for an empty
  /// context). The bridge is fitted on `bridge_set`.
  Acquisition(const TnpModel& model, const PreferenceModel& pref,
              const TaskDataset& context, const DecaySchedule& sched,
              const EiConfig& cfg, std::uint64_t mc_seed,
              std::span<const Point> bridge_set,
              AcquisitionForm form = AcquisitionForm::ei);

  double score(std::span<const double> x) const { return snapshot(x).score; }
  std::vector<double> scores(std::span<const Point> xs) const;
  AcquisitionSnapshot snapshot(std::span<const double> x) const;

  bool fused() const { return pref_ != nullptr; }
  AcquisitionForm form() const { return form_; }
  /// Best observed value, or nullopt for an empty context.
  std::optional<double> f_best() const { return f_best_; }
  const PreferenceBridge& bridge() const { return bridge_; }
  const Point& reference() const { return x_ref_; }
  const DecaySchedule& schedule() const { return sched_; }
  const EiConfig& config() const { return cfg_; }
  /// Copy of this scorer with a different (e.g. previously frozen) bridge.
  Acquisition with_bridge(const PreferenceBridge& b) const;

private:
  double finish(double mean, double variance) const;

  const TnpModel* model_;
  const PreferenceModel* pref_ = nullptr;
  ConditionedTnp cond_;
  std::optional<double> f_best_;
  DecaySchedule sched_;
  EiConfig cfg_;
  AcquisitionForm form_;
  std::uint64_t mc_seed_ = 0;
  Point x_ref_;
  PreferenceBridge bridge_;
};

/// alpha_S for each candidate.
std::vector<double> score_alpha_S(const TnpModel& model, const TaskDataset& context,
                                  std::span<const Point> candidates,
                                  const EiConfig& cfg);

/// alpha_{S,pi} for each candidate, with the bridge fitted on the candidates.
std::vector<double> score_alpha_S_pi(const TnpModel& model,
                                     const PreferenceModel& pref,
                                     const TaskDataset& context,
                                     std::span<const Point> candidates,
                                     const DecaySchedule& sched, const EiConfig& cfg,
                                     std::uint64_t mc_seed);

struct SearchConfig {
  int candidates = 2048;
  int top = 8;
  int iterations = 50;
  double initial_step = 0.1;  // fraction of each dimension's range
};

/// Batch-then-refine maximizer over the whole space.
struct Maximum {
  Point x;
  double score = 0.0;
  double batch_best = 0.0;  // best raw batch score before refinement
};

Maximum maximize(const Acquisition& acq, const SearchSpace& space,
                 std::span<const Point> batch, const SearchConfig& search,
                 std::uint64_t seed);

struct CandidatePair {
  Point x1;
  Point x2;
  AcquisitionSnapshot first;   // surrogate-only view at x1
  AcquisitionSnapshot second;  // fused view at x2
  PreferenceBridge bridge;
  std::uint64_t mc_seed = 0;  // preference Monte-Carlo seed used for x2
  AcquisitionForm form = AcquisitionForm::ei;
};

void to_json(nlohmann::json& j, const AcquisitionSnapshot& s);
void to_json(nlohmann::json& j, const CandidatePair& p);

/// x1 maximizes the surrogate-only score, x2 the fused score. Without a
/// preference model x2 == x1. The UCB form applies to both members.
CandidatePair propose_pair(const TnpModel& model, const PreferenceModel* pref,
                           const TaskDataset& context, const SearchSpace& space,
                           const DecaySchedule& sched, const EiConfig& cfg,
                           const SearchConfig& search, std::uint64_t seed,
                           AcquisitionForm form = AcquisitionForm::ei);

}  // namespace hlmbo
