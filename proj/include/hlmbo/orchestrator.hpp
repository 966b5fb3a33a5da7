#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hlmbo/acquisition.hpp"
#include "hlmbo/explain.hpp"
#include "hlmbo/preference.hpp"
#include "hlmbo/task.hpp"
#include "hlmbo/tnp.hpp"

namespace hlmbo {

enum class Method { hlmbo_ei, tnp_ei, mcoexbo_ucb };
enum class ExpertMode { simulated, interactive };
enum class Phase { eliciting_preferences, awaiting_choice, evaluating, done, aborted };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(ExpertMode m);
ExpertMode expert_mode_from_string(const std::string& s);
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

/// True for methods that elicit preferences and ask the expert every step.
bool uses_preferences(Method m);

struct PreferenceSetup {
  std::size_t pairs = 24;
  HypothesisKind hypothesis = HypothesisKind::expert;
  std::vector<SearchSpace> boxes;  // explicit boxes override `hypothesis`
  std::size_t slices = 10;
  std::size_t points_per_slice = 100;
  std::optional<double> accuracy;  // labels right with this probability
  PreferenceConfig model;
};

struct SessionConfig {
  std::string task_id;
  std::string model_ref;
  Method method = Method::hlmbo_ei;
  PreferenceSetup preference;
  int budget = 10;
  int initial = 1;
  DecaySchedule sched;
  EiConfig ei;
  SearchConfig search;
  ExplainConfig explain;
  bool explain_steps = true;
  ExpertMode mode = ExpertMode::simulated;
  double sigma_pref = 0.31622776601683794;  // sqrt(0.1)
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

struct StepRecord {
  int t = 0;
  CandidatePair pair;
  nlohmann::json explanation;  // null when explanations are disabled
  Choice choice = Choice::first;
  Point x;
  double y = 0.0;
  double regret = 0.0;
  double wall_ms = 0.0;
};

inline constexpr int kRunRecordVersion = 1;

struct RunRecord {
  SessionConfig config;
  nlohmann::json task;  // serialized task (null for in-process objectives)
  std::string model_digest;
  Phase phase = Phase::done;
  PreferenceDataset preferences;
  double preference_lengthscale = 0.0;
  TaskDataset initial;
  std::vector<StepRecord> steps;
  std::vector<double> trace;     // regret after every evaluation, length I + B
  std::vector<double> wall_ms;   // per evaluation, aligned with `trace`
  int evaluations = 0;
  std::string started;
  std::string finished;
};

/// JSON form with an embedded integrity hash. Timestamps and wall times are
/// excluded from the hash so identical runs hash identically.
nlohmann::json record_to_json(const RunRecord& r);
/// Throws RecordError on version mismatch or a hash that does not verify.
RunRecord record_from_json(const nlohmann::json& j);
std::string record_hash(const nlohmann::json& record_json);

void save_run(const RunRecord& r, const std::filesystem::path& path);
RunRecord load_run(const std::filesystem::path& path);

/// Digest identifying a model's weights and normalization.
std::string model_digest(const TnpModel& model);

/// Algorithm-1 state machine for one optimization run.
class Session {
public:
  Session(SessionConfig cfg, BlackBoxTask task, std::shared_ptr<const TnpModel> model);

  const SessionConfig& config() const { return cfg_; }
  const BlackBoxTask& task() const { return task_; }
  const TnpModel& model() const { return *model_; }
  Phase phase() const { return phase_; }
  int step() const { return static_cast<int>(steps_.size()); }
  const TaskDataset& context() const { return context_; }
  const std::vector<StepRecord>& history() const { return steps_; }
  const std::vector<double>& trace() const { return trace_; }
  int evaluations() const { return evaluations_; }

  /// Pairs the expert is asked to label, in order.
  const std::vector<std::pair<Point, Point>>& elicitation_pairs() const { return pending_; }
  std::size_t labels_received() const { return labels_.size(); }
  const PreferenceDataset& labels() const { return labels_; }
  const PreferenceModel* preference_model() const;

  /// Appends labels (1 iff the first point is favored). Completing the set
  /// fits the preference model and proposes the first pair.
  void submit_labels(std::span<const int> ys, const std::string& source = "human");
  /// Labels every remaining pair with `oracle`; aborts the session if the
  /// oracle returns nullopt.
  void elicit(const ChoiceOracle& oracle);

  const CandidatePair& current_pair() const;
  const nlohmann::json& current_explanation() const { return explanation_; }

  /// Evaluates the chosen member and records the step. Leaves the session in
  /// `evaluating` (or `done`); call prepare_next() to propose the next pair.
  void commit_choice(Choice c);
  /// Proposes (and explains) the next pair. Only legal while evaluating.
  void prepare_next();

  struct Proposal {
    CandidatePair pair;
    nlohmann::json explanation;
  };
  /// The computation behind prepare_next(), without touching session state.
  Proposal next_proposal() const;
  void install(Proposal p);
  /// commit_choice followed by prepare_next when the run continues.
  void choose(Choice c);
  void abort();

  HeatmapSlice heatmap(std::optional<std::pair<std::size_t, std::size_t>> dims,
                       std::size_t resolution) const;

  RunRecord record() const;

private:
  double evaluate(std::span<const double> x);
  void fit_preferences();

  SessionConfig cfg_;
  BlackBoxTask task_;
  std::shared_ptr<const TnpModel> model_;
  Phase phase_ = Phase::eliciting_preferences;
  TaskDataset context_;
  TaskDataset initial_;
  std::vector<std::pair<Point, Point>> pending_;
  PreferenceDataset labels_;
  std::optional<PreferenceModel> pref_;
  std::optional<CandidatePair> pair_;
  nlohmann::json explanation_;
  std::vector<StepRecord> steps_;
  std::vector<double> trace_;
  std::vector<double> wall_;
  int evaluations_ = 0;
  std::string started_;
  std::string finished_;
};

/// Expert used inside the loop: picks a side of the current pair, or nullopt
/// to abort.
using StepOracle = std::function<std::optional<Choice>(const Session&)>;

struct Experts {
  ChoiceOracle labels;
  StepOracle choices;
};

/// Simulated experts for a config: noisy comparisons with sigma_pref (or
/// accuracy-controlled labels when configured), with seeds derived from the
/// config seed.
Experts simulated_experts(const SessionConfig& cfg, const BlackBoxTask& task);

/// Runs Algorithm 1 to completion with the configured method.
RunRecord run_hlmbo(const SessionConfig& cfg, const BlackBoxTask& task,
                    std::shared_ptr<const TnpModel> model, Experts experts = {});
RunRecord run_baseline(Method kind, SessionConfig cfg, const BlackBoxTask& task,
                       std::shared_ptr<const TnpModel> model, Experts experts = {});

/// Re-executes a record with its seeds, labels and choices; returns the
/// regret trace.
std::vector<double> replay(const RunRecord& record, const BlackBoxTask& task,
                           std::shared_ptr<const TnpModel> model);

/// JSON snapshot of a session as served by the API.
nlohmann::json session_state_json(const Session& s, const std::string& id);

/// Thread-safe registry of live sessions with optional on-disk persistence.
class SessionManager {
public:
  struct Resolver {
    std::function<BlackBoxTask(const std::string& task_id)> task;
    std::function<std::shared_ptr<const TnpModel>(const std::string& model_ref)> model;
  };

  /// With `store`, every mutation is written to disk and existing sessions
  /// are restored. With `background`, proposals run on a worker thread and
  /// choose() returns while the session reports `evaluating`.
  SessionManager(Resolver resolver, std::optional<std::filesystem::path> store = {},
                 bool background = true);
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  std::string create(const SessionConfig& cfg);
  nlohmann::json state(const std::string& id);
  nlohmann::json submit_preferences(const std::string& id, const std::vector<int>& labels);
  nlohmann::json candidates(const std::string& id);
  nlohmann::json choose(const std::string& id, Choice side);
  nlohmann::json heatmap(const std::string& id,
                         std::optional<std::pair<std::size_t, std::size_t>> dims,
                         std::size_t resolution);
  nlohmann::json abort(const std::string& id);
  RunRecord record(const std::string& id);
  /// Blocks until no background work is pending for the session.
  void wait(const std::string& id);
  std::vector<std::string> ids();

private:
  struct Entry {
    std::mutex mu;
    std::unique_ptr<Session> session;
    std::vector<int> labels;
    std::vector<Choice> choices;
    std::thread worker;
  };

  std::shared_ptr<Entry> find(const std::string& id);
  void persist(const std::string& id, Entry& e);
  void restore();

  Resolver resolver_;
  std::optional<std::filesystem::path> store_;
  bool background_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t counter_ = 0;
};

}  // namespace hlmbo
