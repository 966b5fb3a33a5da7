#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hlmbo/detail/tnp_network.hpp"
#include "hlmbo/task.hpp"

namespace hlmbo {

/// Architecture and training schedule of the neural-process surrogate.
struct TnpConfig {
  int model_dim = 64;
  int embed_layers = 4;
  int ff_dim = 128;
  int heads = 8;
  int transformer_layers = 6;
  double dropout = 0.0;
  double learning_rate = 5e-5;  // peak; cosine-annealed to zero
  int warmup_steps = 0;
  double grad_clip = 1.0;       // global-norm clip, <= 0 disables
  int max_sequence = 64;        // points per training sequence (e_n cap)
  int train_steps = 20000;
  int batch_tasks = 16;
  int dataset_points = 512;     // stored evaluations per source task
  double local_fraction = 0.5;  // share of sequences mixing in a local point cluster
  int log_every = 0;            // 0 disables progress lines on stderr

  /// Throws InvalidConfig on inconsistent settings.
  void validate() const;
};

void to_json(nlohmann::json& j, const TnpConfig& c);
void from_json(const nlohmann::json& j, TnpConfig& c);

/// Per-point Gaussian predictive distribution in objective units.
struct Posterior {
  std::vector<double> mean;
  std::vector<double> variance;
  std::size_t size() const { return mean.size(); }
};

/// Output standardization and input scaling captured at training time.
struct Normalization {
  SearchSpace space;
  double y_mean = 0.0;
  double y_std = 1.0;
};

class ConditionedTnp;

/// Meta-trained transformer neural process. Immutable after training; all
/// prediction methods are const and safe to call concurrently.
class TnpModel {
public:
  TnpModel() = default;
  TnpModel(TnpConfig config, Normalization norm,
           detail::Params<float> weights);

  const TnpConfig& config() const { return config_; }
  const Normalization& normalization() const { return norm_; }
  std::size_t input_dims() const { return norm_.space.dims(); }
  const detail::Network<float>& network() const { return net_; }
  std::size_t parameter_count() const { return net_.params().count(); }

  /// Loss per training step, recorded by meta_train.
  std::vector<double> loss_curve;

  /// Single forward pass: each target sees the whole context and itself.
  /// Context order does not affect the result.
  Posterior predict(const TaskDataset& context,
                    std::span<const Point> targets) const;

  /// Encodes the context once for repeated queries.
  ConditionedTnp condition(const TaskDataset& context) const;

  /// Token features for a point, with or without an observed value.
  detail::Mat<float> token(std::span<const double> x,
                           const double* y) const;

private:
  TnpConfig config_;
  Normalization norm_;
  detail::Network<float> net_;
};

/// A model bound to one encoded context.
class ConditionedTnp {
public:
  ConditionedTnp(const TnpModel& model, detail::Network<float>::Context ctx)
      : model_(&model), ctx_(std::move(ctx)) {}

  Posterior predict(std::span<const Point> targets) const;
  /// (mean, variance) at one point.
  std::pair<double, double> predict_one(std::span<const double> x) const;

private:
  const TnpModel* model_;
  detail::Network<float>::Context ctx_;
};

/// Stable order for context points: lexicographic on (x, y).
std::vector<std::size_t> canonical_order(const TaskDataset& context);

/// Gaussian negative log density.
double gaussian_nll(double y, double mean, double variance);

/// Mean NLL of `targets` given `context`, teacher-forced: target i sees the
/// context, the true values of targets before it, and its own input.
double nll(const TnpModel& model, const TaskDataset& context,
           const TaskDataset& targets);

struct TrainOptions {
  std::function<void(int step, double loss)> on_step;
};

/// Meta-trains on the family's training split. Each step draws, per batch
/// slot, a task and a context size uniformly and minimizes the
/// autoregressive Gaussian NLL of the remaining points.
TnpModel meta_train(const TaskFamily& family, const TnpConfig& cfg,
                    std::uint64_t seed, const TrainOptions& opts = {});

/// Evaluates `points` on `task` (LHS design) for use as a source dataset.
TaskDataset make_task_dataset(const BlackBoxTask& task, std::size_t points,
                              std::uint64_t seed);

/// Mean held-out NLL over `sequences` random (context, target) splits of the
/// given tasks.
double heldout_nll(const TnpModel& model, std::span<const BlackBoxTask> tasks,
                   int sequences, std::uint64_t seed);

/// Checkpoint I/O. Throws CheckpointError on version mismatch, truncation or
/// corruption.
void save_model(const TnpModel& model, const std::filesystem::path& path);
TnpModel load_model(const std::filesystem::path& path);

/// FNV-1a 64 of a file's bytes, hex encoded.
std::string file_digest(const std::filesystem::path& path);

}  // namespace hlmbo
