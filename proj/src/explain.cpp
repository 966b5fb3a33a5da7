#include "hlmbo/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <Eigen/Dense>

#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::acquisition: return "acquisition";
    case TargetKind::surrogate_mean: return "surrogate_mean";
    case TargetKind::surrogate_uncertainty: return "surrogate_uncertainty";
  }
  return "acquisition";
}

std::string to_string(AttributionMethod m) {
  return m == AttributionMethod::shap ? "shap" : "lime";
}

AttributionTarget make_target(TargetKind kind, const Acquisition& acq) {
  AttributionTarget t;
  t.kind = kind;
  switch (kind) {
    case TargetKind::acquisition:
      t.fn = [acq](std::span<const double> x) { return acq.score(x); };
      break;
    case TargetKind::surrogate_mean:
      t.fn = [acq](std::span<const double> x) { return acq.snapshot(x).mu_S; };
      break;
    case TargetKind::surrogate_uncertainty:
      t.fn = [acq](std::span<const double> x) {
        return std::sqrt(acq.snapshot(x).var_S);
      };
      break;
  }
  return t;
}

// ---------------------------------------------------------------------- SHAP

namespace {

// Coalition value: mean over the background of f with the masked features
// taken from x.
double coalition_value(const AttributionTarget& t, std::span<const double> x,
                       std::span<const Point> bg, const std::vector<bool>& in) {
  double s = 0.0;
  Point z(x.size());
  for (const auto& b : bg) {
    for (std::size_t j = 0; j < x.size(); ++j) z[j] = in[j] ? x[j] : b[j];
    s += t.fn(z);
  }
  return s / static_cast<double>(bg.size());
}

std::vector<double> exact_shapley(const AttributionTarget& t,
                                  std::span<const double> x,
                                  std::span<const Point> bg, double& v_empty) {
  const std::size_t d = x.size();
  const std::size_t n = std::size_t{1} << d;
  std::vector<double> v(n);
  std::vector<bool> in(d);
  for (std::size_t mask = 0; mask < n; ++mask) {
    for (std::size_t j = 0; j < d; ++j) in[j] = (mask >> j) & 1u;
    v[mask] = coalition_value(t, x, bg, in);
  }
  // weight(|S|) = |S|! (d - |S| - 1)! / d!
  std::vector<double> w(d);
  for (std::size_t s = 0; s < d; ++s)
    w[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(d - s)) -
                    std::lgamma(d + 1.0));
  std::vector<double> phi(d, 0.0);
  for (std::size_t mask = 0; mask < n; ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t j = 0; j < d; ++j)
      if (!((mask >> j) & 1u)) phi[j] += w[size] * (v[mask | (std::size_t{1} << j)] - v[mask]);
  }
  v_empty = v[0];
  return phi;
}

std::vector<double> kernel_shapley(const AttributionTarget& t,
                                   std::span<const double> x,
                                   std::span<const Point> bg, int n_coalitions,
                                   std::uint64_t seed, double& v_empty) {
  const std::size_t d = x.size();
  auto rng = make_rng(seed, 0x5a4);
  // Coalition sizes drawn proportionally to the Shapley kernel mass.
  std::vector<double> size_w(d - 1);
  for (std::size_t s = 1; s < d; ++s)
    size_w[s - 1] = static_cast<double>(d - 1) / static_cast<double>(s * (d - s));
  std::discrete_distribution<std::size_t> pick_size(size_w.begin(), size_w.end());
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);

  std::vector<bool> none(d, false), all(d, true);
  v_empty = coalition_value(t, x, bg, none);
  const double total = coalition_value(t, x, bg, all) - v_empty;

  const int n = std::max(n_coalitions, static_cast<int>(2 * d));
  Eigen::MatrixXd a(n, d - 1);
  Eigen::VectorXd r(n);
  std::vector<bool> in(d);
  for (int i = 0; i < n; ++i) {
    const std::size_t s = pick_size(rng) + 1;
    std::shuffle(order.begin(), order.end(), rng);
    std::fill(in.begin(), in.end(), false);
    for (std::size_t k = 0; k < s; ++k) in[order[k]] = true;
    const double y = coalition_value(t, x, bg, in) - v_empty;
    const double zl = in[d - 1] ? 1.0 : 0.0;
    for (std::size_t j = 0; j + 1 < d; ++j) a(i, j) = (in[j] ? 1.0 : 0.0) - zl;
    r[i] = y - zl * total;
  }
  const Eigen::VectorXd sol = a.colPivHouseholderQr().solve(r);
  std::vector<double> phi(d);
  double acc = 0.0;
  for (std::size_t j = 0; j + 1 < d; ++j) {
    phi[j] = sol[j];
    acc += sol[j];
  }
  phi[d - 1] = total - acc;
  return phi;
}

}  // namespace

Attribution shap_attributions(const AttributionTarget& target,
                              std::span<const double> x,
                              std::span<const Point> background, int n_coalitions,
                              std::uint64_t seed) {
  if (background.empty()) throw BackgroundRequired("SHAP needs a nonempty background");
  if (x.empty()) throw ShapeError("cannot attribute a zero-dimensional point");
  for (const auto& b : background)
    if (b.size() != x.size()) throw ShapeError("background point dimensionality differs");
  Attribution a;
  a.method = AttributionMethod::shap;
  a.target = target.kind;
  a.prediction = target.fn(x);
  a.exact = x.size() <= kExactShapMaxDims;
  double v0 = 0.0;
  a.values = a.exact ? exact_shapley(target, x, background, v0)
                     : kernel_shapley(target, x, background, n_coalitions, seed, v0);
  a.baseline = v0;
  return a;
}

// ---------------------------------------------------------------------- LIME

Attribution lime_attributions(const AttributionTarget& target,
                              std::span<const double> x, const SearchSpace& space,
                              const LimeConfig& cfg, std::uint64_t seed) {
  const std::size_t d = space.dims();
  space.require_inside(x);
  if (cfg.n_perturb < static_cast<int>(10 * d))
    throw InvalidConfig("LIME needs n_perturb >= 10 * dims");
  if (!(cfg.kernel_width > 0.0)) throw InvalidConfig("LIME kernel width must be > 0");
  const std::size_t k =
      cfg.sparsity > 0 ? std::min<std::size_t>(cfg.sparsity, d) : std::min<std::size_t>(d, 8);

  auto rng = make_rng(seed, 0x11e);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(cfg.n_perturb);
  Eigen::MatrixXd dx(n, static_cast<Eigen::Index>(d));
  Eigen::VectorXd y(n), w(n);
  Point z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double dist2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      z[j] = std::clamp(x[j] + 0.1 * space.range(j) * g(rng), space.lower()[j],
                        space.upper()[j]);
      dx(i, static_cast<Eigen::Index>(j)) = z[j] - x[j];
      const double u = (z[j] - x[j]) / space.range(j);
      dist2 += u * u;
    }
    y[i] = target.fn(z);
    w[i] = std::exp(-dist2 / (cfg.kernel_width * cfg.kernel_width));
  }
  if (!(w.sum() > 0.0)) throw LimeFitError("all LIME kernel weights vanished");

  // Weighted least squares with intercept over a feature subset.
  auto fit = [&](const std::vector<std::size_t>& feats, Eigen::VectorXd& beta) {
    const auto p = static_cast<Eigen::Index>(feats.size());
    Eigen::MatrixXd a(n, p + 1);
    a.col(0).setOnes();
    for (Eigen::Index c = 0; c < p; ++c)
      a.col(c + 1) = dx.col(static_cast<Eigen::Index>(feats[c]));
    const Eigen::VectorXd sw = w.array().sqrt();
    const Eigen::MatrixXd aw = sw.asDiagonal() * a;
    const Eigen::VectorXd yw = sw.asDiagonal() * y;
    Eigen::MatrixXd ata = aw.transpose() * aw;
    const Eigen::VectorXd aty = aw.transpose() * yw;
    const double scale = std::max(ata.diagonal().maxCoeff(), 1e-300);
    for (double jit : {0.0, 1e-12, 1e-10, 1e-8}) {
      Eigen::MatrixXd m = ata;
      m.diagonal().array() += jit * scale;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
      beta = ldlt.solve(aty);
      if (beta.allFinite() && ldlt.rcond() > 1e-14) return;
    }
    throw LimeFitError("LIME design matrix is degenerate");
  };

  std::vector<std::size_t> feats(d);
  std::iota(feats.begin(), feats.end(), 0);
  Eigen::VectorXd beta;
  fit(feats, beta);
  if (k < d) {
    std::vector<std::size_t> order = feats;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(beta[a + 1]) * space.range(a) > std::abs(beta[b + 1]) * space.range(b);
    });
    feats.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(feats.begin(), feats.end());
    fit(feats, beta);
  }

  Attribution a;
  a.method = AttributionMethod::lime;
  a.target = target.kind;
  a.prediction = target.fn(x);
  a.exact = false;
  a.values.assign(d, 0.0);
  for (std::size_t c = 0; c < feats.size(); ++c) a.values[feats[c]] = beta[c + 1];
  a.selected = feats;
  a.baseline = beta[0];

  const double wsum = w.sum();
  const double ybar = w.dot(y) / wsum;
  double ss_res = 0.0, ss_tot = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double pred = beta[0];
    for (std::size_t c = 0; c < feats.size(); ++c)
      pred += beta[c + 1] * dx(i, static_cast<Eigen::Index>(feats[c]));
    ss_res += w[i] * (y[i] - pred) * (y[i] - pred);
    ss_tot += w[i] * (y[i] - ybar) * (y[i] - ybar);
  }
  a.r2 = ss_tot > 1e-300 ? 1.0 - ss_res / ss_tot : 1.0;
  return a;
}

std::vector<Point> default_background(const TaskDataset& context,
                                      const SearchSpace& space, std::uint64_t seed) {
  if (context.size() >= 4) return context.points;
  return sample_space(space, 32, SampleMethod::latin_hypercube, seed);
}

// ------------------------------------------------------------------- bundles

namespace {

CandidateExplanation explain_point(const Acquisition& acq, std::span<const double> x,
                                   std::span<const Point> bg, const SearchSpace& space,
                                   const ExplainConfig& ecfg, std::uint64_t seed) {
  CandidateExplanation c;
  c.x.assign(x.begin(), x.end());
  c.snapshot = acq.snapshot(x);
  std::uint64_t sub = 0;
  for (auto kind : {TargetKind::acquisition, TargetKind::surrogate_mean,
                    TargetKind::surrogate_uncertainty}) {
    const auto t = make_target(kind, acq);
    c.attributions.push_back(shap_attributions(t, x, bg, ecfg.shap_coalitions,
                                               seed * 31 + ++sub));
    c.attributions.push_back(lime_attributions(t, x, space, ecfg.lime, seed * 31 + ++sub));
  }
  return c;
}

}  // namespace

ExplanationBundle explain_candidates(const CandidatePair& pair,
                                     const TaskDataset& context,
                                     const TnpModel& model,
                                     const PreferenceModel* pref,
                                     const DecaySchedule& sched, const EiConfig& cfg,
                                     std::span<const Point> background,
                                     const ExplainConfig& ecfg, std::uint64_t seed) {
  const auto& space = model.normalization().space;
  space.require_inside(pair.x1);
  space.require_inside(pair.x2);
  const Acquisition plain(model, context, cfg, pair.form);
  ExplanationBundle b;
  b.candidates[0] = explain_point(plain, pair.x1, background, space, ecfg, seed * 2 + 1);
  if (pref) {
    const std::vector<Point> probe{pair.x2};
    const auto fused = Acquisition(model, *pref, context, sched, cfg, pair.mc_seed,
                                   probe, pair.form)
                           .with_bridge(pair.bridge);
    b.candidates[1] = explain_point(fused, pair.x2, background, space, ecfg, seed * 2 + 2);
  } else {
    b.candidates[1] = explain_point(plain, pair.x2, background, space, ecfg, seed * 2 + 2);
  }
  return b;
}

// ------------------------------------------------------------------- heatmap

Point HeatmapSlice::cell_point(std::size_t a, std::size_t b) const {
  Point p = fixed;
  p[dims.first] = axis_u[a];
  p[dims.second] = axis_v[b];
  return p;
}

HeatmapSlice slice_heatmap(const TnpModel& model, const PreferenceModel* pref,
                           const TaskDataset& context, const SearchSpace& space,
                           std::pair<std::size_t, std::size_t> dims, Point fixed,
                           std::size_t resolution, const DecaySchedule& sched,
                           const EiConfig& cfg, std::uint64_t seed) {
  const std::size_t d = space.dims();
  if (dims.first >= d || dims.second >= d || dims.first == dims.second)
    throw ShapeError("heatmap dims must be distinct and inside the space");
  if (resolution < 2) throw ShapeError("heatmap resolution must be >= 2");
  if (fixed.empty()) {
    if (context.empty()) {
      fixed.resize(d);
      for (std::size_t j = 0; j < d; ++j) fixed[j] = space.lower()[j] + 0.5 * space.range(j);
    } else {
      fixed = context.points[context.argmax()];
    }
  }
  space.require_inside(fixed);

  HeatmapSlice h;
  h.dims = dims;
  h.fixed = fixed;
  h.resolution = resolution;
  for (std::size_t a = 0; a < resolution; ++a) {
    const double f = static_cast<double>(a) / static_cast<double>(resolution - 1);
    h.axis_u.push_back(space.lower()[dims.first] + f * space.range(dims.first));
    h.axis_v.push_back(space.lower()[dims.second] + f * space.range(dims.second));
  }
  std::vector<Point> grid;
  grid.reserve(resolution * resolution);
  for (std::size_t a = 0; a < resolution; ++a)
    for (std::size_t b = 0; b < resolution; ++b) grid.push_back(h.cell_point(a, b));

  const Acquisition acq =
      pref ? Acquisition(model, *pref, context, sched, cfg, seed ^ 0x3c3cULL, grid)
           : Acquisition(model, context, cfg);
  h.mean.reserve(grid.size());
  for (const auto& p : grid) {
    const auto s = acq.snapshot(p);
    h.mean.push_back(s.mu_S);
    h.uncertainty.push_back(std::sqrt(s.var_S));
    h.acquisition.push_back(s.score);
  }
  for (std::size_t i = 0; i < context.size(); ++i)
    h.markers.push_back({i + 1, context.points[i][dims.first], context.points[i][dims.second]});
  return h;
}

std::pair<std::size_t, std::size_t> suggest_slice_dims(const TnpModel& model,
                                                       const TaskDataset& context,
                                                       const SearchSpace& space,
                                                       std::uint64_t seed) {
  const std::size_t d = space.dims();
  if (d < 2) throw ShapeError("slicing needs at least two dimensions");
  if (d == 2) return {0, 1};
  const auto bg = default_background(context, space, seed);
  const Acquisition acq(model, context, EiConfig{});
  const auto t = make_target(TargetKind::surrogate_mean, acq);
  std::vector<double> imp(d, 0.0);
  const std::size_t probes = std::min<std::size_t>(bg.size(), 8);
  const std::span<const Point> small(bg.data(), std::min<std::size_t>(bg.size(), 16));
  for (std::size_t i = 0; i < probes; ++i) {
    const auto a = shap_attributions(t, bg[i], small, 256, seed + i);
    for (std::size_t j = 0; j < d; ++j) imp[j] += std::abs(a.values[j]);
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return imp[a] > imp[b]; });
  return {std::min(order[0], order[1]), std::max(order[0], order[1])};
}

// ---------------------------------------------------------------- serialize

void to_json(json& j, const Attribution& a) {
  j = {{"method", to_string(a.method)}, {"target", to_string(a.target)},
       {"values", a.values},            {"baseline", a.baseline},
       {"prediction", a.prediction},    {"exact", a.exact}};
  if (a.method == AttributionMethod::lime) {
    j["r2"] = a.r2;
    j["selected"] = a.selected;
  }
}

void to_json(json& j, const CandidateExplanation& c) {
  j = {{"x", c.x}, {"snapshot", c.snapshot}, {"attributions", c.attributions}};
}

void to_json(json& j, const ExplanationBundle& b) {
  j = {{"candidates", {b.candidates[0], b.candidates[1]}}};
}

void to_json(json& j, const HeatmapSlice& h) {
  json markers = json::array();
  for (const auto& m : h.markers) markers.push_back({{"order", m.order}, {"u", m.u}, {"v", m.v}});
  j = {{"dims", {h.dims.first, h.dims.second}},
       {"fixed", h.fixed},
       {"resolution", h.resolution},
       {"axis_u", h.axis_u},
       {"axis_v", h.axis_v},
       {"mean", h.mean},
       {"uncertainty", h.uncertainty},
       {"acquisition", h.acquisition},
       {"markers", markers}};
}

void write_attributions_csv(const ExplanationBundle& b, std::ostream& os) {
  os << "candidate,method,target,feature,value,baseline,prediction\n";
  os.precision(17);
  for (std::size_t c = 0; c < b.candidates.size(); ++c)
    for (const auto& a : b.candidates[c].attributions)
      for (std::size_t j = 0; j < a.values.size(); ++j)
        os << 'x' << (c + 1) << ',' << to_string(a.method) << ',' << to_string(a.target)
           << ',' << j << ',' << a.values[j] << ',' << a.baseline << ',' << a.prediction
           << '\n';
}

void write_heatmap_csv(const HeatmapSlice& h, std::ostream& os) {
  os << "u,v,mean,uncertainty,acquisition\n";
  os.precision(17);
  for (std::size_t a = 0; a < h.resolution; ++a)
    for (std::size_t b = 0; b < h.resolution; ++b) {
      const std::size_t i = a * h.resolution + b;
      os << h.axis_u[a] << ',' << h.axis_v[b] << ',' << h.mean[i] << ','
         << h.uncertainty[i] << ',' << h.acquisition[i] << '\n';
    }
}

}  // namespace hlmbo
