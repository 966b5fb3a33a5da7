#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hlmbo/acquisition.hpp"

namespace hlmbo {

enum class TargetKind { acquisition, surrogate_mean, surrogate_uncertainty };
enum class AttributionMethod { shap, lime };

std::string to_string(TargetKind k);
std::string to_string(AttributionMethod m);

/// A scalar function of a point to be explained.
struct AttributionTarget {
  TargetKind kind = TargetKind::acquisition;
  std::function<double(std::span<const double>)> fn;
};

/// Binds a target kind to a scorer: the acquisition score, the surrogate mean
/// or the surrogate standard deviation.
AttributionTarget make_target(TargetKind kind, const Acquisition& acq);

struct Attribution {
  AttributionMethod method = AttributionMethod::shap;
  TargetKind target = TargetKind::acquisition;
  std::vector<double> values;
  double baseline = 0.0;    // E_bg[f] for SHAP, intercept for LIME
  double prediction = 0.0;  // f(x)
  double r2 = 1.0;          // weighted fit quality (LIME only)
  bool exact = true;        // exact enumeration vs sampled coalitions (SHAP)
  std::vector<std::size_t> selected;  // features kept by LIME
};

/// Exact enumeration up to this many features, kernel sampling above.
inline constexpr std::size_t kExactShapMaxDims = 12;

Attribution shap_attributions(const AttributionTarget& target,
                              std::span<const double> x,
                              std::span<const Point> background,
                              int n_coalitions, std::uint64_t seed);

struct LimeConfig {
  int n_perturb = 500;
  double kernel_width = 0.25;  // in unit-scaled distance
  int sparsity = 0;            // 0 means min(dims, 8)
};

Attribution lime_attributions(const AttributionTarget& target,
                              std::span<const double> x, const SearchSpace& space,
                              const LimeConfig& cfg, std::uint64_t seed);

/// SHAP background: the context inputs, or 32 Latin-hypercube points when
/// the context has fewer than 4 entries.
std::vector<Point> default_background(const TaskDataset& context,
                                      const SearchSpace& space, std::uint64_t seed);

struct ExplainConfig {
  int shap_coalitions = 512;
  LimeConfig lime;
};

struct CandidateExplanation {
  Point x;
  AcquisitionSnapshot snapshot;
  std::vector<Attribution> attributions;  // 3 targets x {shap, lime}
};

struct ExplanationBundle {
  std::array<CandidateExplanation, 2> candidates;
};

/// Explains both members of a pair. x1 is explained against the
/// surrogate-only acquisition, x2 against the fused one using the bridge
/// frozen in `pair`.
ExplanationBundle explain_candidates(const CandidatePair& pair,
                                     const TaskDataset& context,
                                     const TnpModel& model,
                                     const PreferenceModel* pref,
                                     const DecaySchedule& sched, const EiConfig& cfg,
                                     std::span<const Point> background,
                                     const ExplainConfig& ecfg, std::uint64_t seed);

struct HeatmapMarker {
  std::size_t order = 0;  // 1-based visit index
  double u = 0.0;
  double v = 0.0;
};

struct HeatmapSlice {
  std::pair<std::size_t, std::size_t> dims{0, 1};
  Point fixed;
  std::size_t resolution = 0;
  std::vector<double> axis_u;
  std::vector<double> axis_v;
  // Row-major: cell (a, b) at a * resolution + b, u = axis_u[a], v = axis_v[b].
  std::vector<double> mean;
  std::vector<double> uncertainty;
  std::vector<double> acquisition;
  std::vector<HeatmapMarker> markers;

  Point cell_point(std::size_t a, std::size_t b) const;
};

/// Grid of surrogate mean, surrogate standard deviation and acquisition over
/// two dimensions, other coordinates held at `fixed` (the incumbent when
/// empty). With a preference model the acquisition layer is the fused score
/// with its bridge fitted over the grid.
HeatmapSlice slice_heatmap(const TnpModel& model, const PreferenceModel* pref,
                           const TaskDataset& context, const SearchSpace& space,
                           std::pair<std::size_t, std::size_t> dims, Point fixed,
                           std::size_t resolution, const DecaySchedule& sched,
                           const EiConfig& cfg, std::uint64_t seed);

/// The two features with the largest mean |SHAP| on the surrogate mean over
/// the context (or background) points.
std::pair<std::size_t, std::size_t> suggest_slice_dims(const TnpModel& model,
                                                       const TaskDataset& context,
                                                       const SearchSpace& space,
                                                       std::uint64_t seed);

void to_json(nlohmann::json& j, const Attribution& a);
void to_json(nlohmann::json& j, const CandidateExplanation& c);
void to_json(nlohmann::json& j, const ExplanationBundle& b);
void to_json(nlohmann::json& j, const HeatmapSlice& h);

/// CSV: candidate,method,target,feature,value,baseline,prediction
void write_attributions_csv(const ExplanationBundle& b, std::ostream& os);
/// CSV: u,v,mean,uncertainty,acquisition
void write_heatmap_csv(const HeatmapSlice& h, std::ostream& os);

}  // namespace hlmbo
