#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlmbo/orchestrator.hpp"
#include "hlmbo/task.hpp"
#include "hlmbo/tnp.hpp"

namespace hlmbo {

/// Benchmark configuration, read from JSON.
struct BenchConfig {
  FamilyConfig family;
  std::uint64_t family_seed = 1;
  TnpConfig tnp;
  std::uint64_t train_seed = 1;
  std::filesystem::path checkpoint = "model.ckpt";  // relative to the output dir
  std::vector<Method> methods{Method::hlmbo_ei, Method::tnp_ei, Method::mcoexbo_ucb};
  std::vector<std::uint64_t> seeds;  // defaults to 0..9
  SessionConfig session;             // per-run template (seed and method overwritten)
  bool auto_zeta = true;             // use the sweep's validated zeta when present
  std::vector<double> zeta_grid{0.1, 0.3, 0.5};
  std::vector<HypothesisKind> hypotheses{HypothesisKind::expert, HypothesisKind::random,
                                         HypothesisKind::adversarial};
  std::vector<double> accuracies{0.5, 0.75, 1.0};
  std::string split = "test";        // tasks used by compare and the ablations
  int jobs = 0;                      // worker threads, 0 = hardware concurrency
  bool save_records = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const BenchConfig& c);
/// Throws ConfigError on malformed input.
BenchConfig bench_config_from_json(const nlohmann::json& j);
BenchConfig load_bench_config(const std::filesystem::path& path);

/// The desk-scale configuration used by the acceptance suite.
BenchConfig desk_bench_config();

struct BenchRow {
  std::string method;
  std::uint64_t seed = 0;
  int step = 0;
  double regret = 0.0;
  double wall_ms = 0.0;
};

struct BenchTable {
  std::vector<BenchRow> rows;

  std::vector<std::string> methods() const;  // in first-appearance order
  /// Regret trace of one (method, seed), ordered by step.
  std::vector<double> trace(const std::string& method, std::uint64_t seed) const;
  std::vector<std::uint64_t> seeds(const std::string& method) const;
  /// Final regret per seed, ordered by seed.
  std::vector<double> finals(const std::string& method) const;
  /// Throws RecordError unless every (method, seed, step) cell is present.
  void check_dense() const;
};

/// CSV schema: method,seed,step,regret,wall_ms
void write_table_csv(const BenchTable& t, const std::filesystem::path& path);
BenchTable read_table_csv(const std::filesystem::path& path);

struct Summary {
  std::string method;
  std::vector<double> mean;  // per step
  std::vector<double> std;   // per step (population)
  double final_mean = 0.0;
  double final_std = 0.0;
  double final_median = 0.0;
};

std::vector<Summary> summarize(const BenchTable& t);

/// One-sided paired sign test that `a` is smaller than `b`: ties dropped,
/// p = P(Binomial(n, 1/2) >= wins).
struct SignTest {
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double p_value = 1.0;
};
SignTest sign_test_less(const std::vector<double>& a, const std::vector<double>& b);

double median(std::vector<double> v);

/// A named run variant: a transform applied to the per-seed session config.
struct Variant {
  std::string name;
  Method method = Method::hlmbo_ei;
  std::function<void(SessionConfig&)> adjust;
};

/// Shared state for benchmark commands: the family and the trained model.
class BenchContext {
public:
  BenchContext(BenchConfig cfg, std::filesystem::path out_dir);

  const BenchConfig& config() const { return cfg_; }
  const TaskFamily& family() const { return family_; }
  const std::filesystem::path& out_dir() const { return out_; }
  std::filesystem::path checkpoint_path() const;
  /// Loads the checkpoint; throws ConfigError when it is missing.
  std::shared_ptr<const TnpModel> model();
  const std::vector<BlackBoxTask>& tasks(const std::string& split) const;

  /// Runs every variant on every seed (task = split[seed % size]) in a worker
  /// pool; records are optionally written under out/runs/<label>/.
  BenchTable run(const std::vector<Variant>& variants, const std::string& split,
                 const std::string& label);

  /// Session template with the validated zeta applied when enabled.
  SessionConfig session_template() const;

private:
  BenchConfig cfg_;
  std::filesystem::path out_;
  TaskFamily family_;
  std::shared_ptr<const TnpModel> model_;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::string digest;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

TrainResult cmd_train(BenchContext& ctx);
BenchTable cmd_compare(BenchContext& ctx);
BenchTable cmd_ablate_hypothesis(BenchContext& ctx);
BenchTable cmd_ablate_accuracy(BenchContext& ctx);
/// Runs on the validation split and writes best_zeta.json.
BenchTable cmd_sweep_zeta(BenchContext& ctx);
/// Writes report.md and SVG plots for every regret CSV in `dir`; throws
/// NothingToReport when there is none. Returns the markdown path.
std::filesystem::path cmd_report(const std::filesystem::path& dir);

/// Best zeta by final mean regret (ties to the smaller zeta).
double best_zeta(const BenchTable& sweep);

/// SVG line chart of mean regret per step with a +-1 std band per method.
std::string regret_plot_svg(const std::vector<Summary>& s, const std::string& title);
/// SVG bar chart of final mean regret with +-1 std whiskers.
std::string final_bar_svg(const std::vector<Summary>& s, const std::string& title);

}  // namespace hlmbo
