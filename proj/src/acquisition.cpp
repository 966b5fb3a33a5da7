#include "hlmbo/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hlmbo/errors.hpp"
#include "hlmbo/normal.hpp"

namespace hlmbo {

using nlohmann::json;

void DecaySchedule::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma))
    throw InvalidConfig("decay gamma must be positive and finite");
  if (t < 0) throw InvalidConfig("decay step t must be nonnegative");
}

void EiConfig::validate() const {
  if (!(zeta >= 0.0) || !std::isfinite(zeta))
    throw InvalidConfig("EI zeta must be nonnegative and finite");
}

namespace {

void check_variances(double var_S, double var_pi) {
  if (!(var_S > 0.0) || !std::isfinite(var_S))
    throw InvalidPosterior("surrogate variance must be positive and finite");
  if (!(var_pi > 0.0) || std::isnan(var_pi))
    throw InvalidPosterior("preference variance must be positive");
}

double decayed_variance(double var_pi, double var_S, const DecaySchedule& s) {
  const double t = static_cast<double>(s.t);
  return var_pi + s.gamma * t * t * var_S;
}

}  // namespace

CombinedPosterior combine_posterior(double mu_S, double var_S, double mu_pi,
                                    double var_pi, const DecaySchedule& sched) {
  check_variances(var_S, var_pi);
  sched.validate();
  const double s2 = decayed_variance(var_pi, var_S, sched);
  CombinedPosterior c;
  c.w_pi = var_S / (s2 + var_S);
  c.w_S = 1.0 - c.w_pi;
  c.variance = s2 * var_S / (s2 + var_S);
  c.mean = c.w_pi * mu_pi + c.w_S * mu_S;
  return c;
}

std::pair<double, double> noharm_weights(double var_pi, double var_S,
                                         const DecaySchedule& sched) {
  check_variances(var_S, var_pi);
  sched.validate();
  const double s2 = decayed_variance(var_pi, var_S, sched);
  const double w_pi = var_S / (s2 + var_S);
  return {w_pi, 1.0 - w_pi};
}

double expected_improvement(double mu, double sigma, double f_best,
                            const EiConfig& cfg) {
  const double d = mu - f_best - cfg.zeta;
  if (!(sigma > 0.0)) return std::max(d, 0.0);
  const double z = d / sigma;
  return std::max(d * normal_cdf(z) + sigma * normal_pdf(z), 0.0);
}

double ucb(double mu, double sigma) { return mu + sigma; }

std::string to_string(AcquisitionForm f) {
  return f == AcquisitionForm::ei ? "ei" : "ucb";
}

double PreferenceBridge::variance(double var_pi) const {
  return std::max(slope * slope * var_pi, 1e-12);
}

PreferenceBridge PreferenceBridge::fit(std::span<const double> mu_S,
                                       std::span<const double> mu_pi) {
  if (mu_S.empty() || mu_S.size() != mu_pi.size())
    throw ShapeError("bridge needs equally sized, nonempty posterior sets");
  auto moments = [](std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / n)};
  };
  const auto [ms, ss] = moments(mu_S);
  const auto [mp, sp] = moments(mu_pi);
  PreferenceBridge b;
  b.s_mean = ms;
  b.pi_mean = mp;
  b.slope = ss / std::max(sp, 1e-3);
  return b;
}

// --------------------------------------------------------------- Acquisition

namespace {

std::optional<double> best_value(const TaskDataset& ctx) {
  if (ctx.empty()) return std::nullopt;
  return *std::max_element(ctx.values.begin(), ctx.values.end());
}

}  // namespace

Acquisition::Acquisition(const TnpModel& model, const TaskDataset& context,
                         const EiConfig& cfg, AcquisitionForm form)
    : model_(&model),
      cond_(model.condition(context)),
      f_best_(best_value(context)),
      cfg_(cfg),
      form_(form) {
  cfg_.validate();
}

Acquisition::Acquisition(const TnpModel& model, const PreferenceModel& pref,
                         const TaskDataset& context, const DecaySchedule& sched,
                         const EiConfig& cfg, std::uint64_t mc_seed,
                         std::span<const Point> bridge_set, AcquisitionForm form)
    : model_(&model),
      pref_(&pref),
      cond_(model.condition(context)),
      f_best_(best_value(context)),
      sched_(sched),
      cfg_(cfg),
      form_(form),
      mc_seed_(mc_seed) {
  cfg_.validate();
  sched_.validate();
  if (!pref.fitted()) throw ModelNotFitted("preference model has not been fitted");
  if (bridge_set.empty()) throw EmptyRequest("bridge set must be nonempty");
  const auto& space = model.normalization().space;
  if (context.empty()) {
    x_ref_.resize(space.dims());
    for (std::size_t j = 0; j < x_ref_.size(); ++j)
      x_ref_[j] = space.lower()[j] + 0.5 * space.range(j);
  } else {
    x_ref_ = context.points[context.argmax()];
  }
  std::vector<double> ms, mp;
  ms.reserve(bridge_set.size());
  for (const auto& x : bridge_set) ms.push_back(cond_.predict_one(x).first);
  mp = pref.posterior(bridge_set, x_ref_, mc_seed_).mean;
  bridge_ = PreferenceBridge::fit(ms, mp);
}

Acquisition Acquisition::with_bridge(const PreferenceBridge& b) const {
  Acquisition a = *this;
  a.bridge_ = b;
  return a;
}

double Acquisition::finish(double mean, double variance) const {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  if (form_ == AcquisitionForm::ucb) return ucb(mean, sigma);
  if (!f_best_) return mean;
  return expected_improvement(mean, sigma, *f_best_, cfg_);
}

AcquisitionSnapshot Acquisition::snapshot(std::span<const double> x) const {
  AcquisitionSnapshot s;
  std::tie(s.mu_S, s.var_S) = cond_.predict_one(x);
  s.mean = s.mu_S;
  s.variance = s.var_S;
  if (pref_) {
    const Point q(x.begin(), x.end());
    const auto pp = pref_->posterior(std::span<const Point>(&q, 1), x_ref_, mc_seed_);
    s.mu_pi = pp.mean[0];
    s.var_pi = pp.variance[0];
    const auto c = combine_posterior(s.mu_S, s.var_S, bridge_.mean(s.mu_pi),
                                     bridge_.variance(s.var_pi), sched_);
    s.mean = c.mean;
    s.variance = c.variance;
    s.w_pi = c.w_pi;
    s.w_S = c.w_S;
  }
  s.score = finish(s.mean, s.variance);
  return s;
}

std::vector<double> Acquisition::scores(std::span<const Point> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(score(x));
  return out;
}

std::vector<double> score_alpha_S(const TnpModel& model, const TaskDataset& context,
                                  std::span<const Point> candidates,
                                  const EiConfig& cfg) {
  if (candidates.empty()) throw EmptyRequest("no candidates to score");
  return Acquisition(model, context, cfg).scores(candidates);
}

std::vector<double> score_alpha_S_pi(const TnpModel& model,
                                     const PreferenceModel& pref,
                                     const TaskDataset& context,
                                     std::span<const Point> candidates,
                                     const DecaySchedule& sched, const EiConfig& cfg,
                                     std::uint64_t mc_seed) {
  if (candidates.empty()) throw EmptyRequest("no candidates to score");
  return Acquisition(model, pref, context, sched, cfg, mc_seed, candidates)
      .scores(candidates);
}

// ---------------------------------------------------------------- maximizer

Maximum maximize(const Acquisition& acq, const SearchSpace& space,
                 std::span<const Point> batch, const SearchConfig& search,
                 std::uint64_t seed) {
  if (batch.empty()) throw EmptyRequest("acquisition batch is empty");
  const auto raw = acq.scores(batch);
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t top = std::min<std::size_t>(std::max(search.top, 1), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + top, idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return raw[a] > raw[b] || (raw[a] == raw[b] && a < b);
                    });
  Maximum best{batch[idx[0]], raw[idx[0]], raw[idx[0]]};
  const std::size_t d = space.dims();
  for (std::size_t s = 0; s < top; ++s) {
    auto rng = make_rng(seed, 0x5ea + s);
    std::uniform_int_distribution<int> coin(0, 1);
    Point x = batch[idx[s]];
    double fx = raw[idx[s]];
    std::vector<double> step(d);
    for (std::size_t j = 0; j < d; ++j) step[j] = search.initial_step * space.range(j);
    for (int it = 0; it < search.iterations; ++it) {
      for (std::size_t j = 0; j < d; ++j) {
        const double dir = coin(rng) ? 1.0 : -1.0;
        bool moved = false;
        for (double sgn : {dir, -dir}) {
          Point y = x;
          y[j] = std::clamp(x[j] + sgn * step[j], space.lower()[j], space.upper()[j]);
          if (y[j] == x[j]) continue;
          const double fy = acq.score(y);
          if (fy > fx) {
            x = std::move(y);
            fx = fy;
            moved = true;
            break;
          }
        }
        step[j] = moved ? std::min(step[j] * 1.5, 0.5 * space.range(j)) : step[j] * 0.5;
      }
    }
    if (fx > best.score) {
      best.x = x;
      best.score = fx;
    }
  }
  return best;
}

CandidatePair propose_pair(const TnpModel& model, const PreferenceModel* pref,
                           const TaskDataset& context, const SearchSpace& space,
                           const DecaySchedule& sched, const EiConfig& cfg,
                           const SearchConfig& search, std::uint64_t seed,
                           AcquisitionForm form) {
  if (search.candidates < 1) throw InvalidConfig("search needs >= 1 candidate");
  auto rng = make_rng(seed, 0xba7);
  const auto batch = sample_space(space, static_cast<std::size_t>(search.candidates),
                                  SampleMethod::latin_hypercube, rng);
  const Acquisition plain(model, context, cfg, form);
  CandidatePair pair;
  pair.form = form;
  pair.mc_seed = seed ^ 0x3c3cULL;
  const auto m1 = maximize(plain, space, batch, search, seed * 2 + 1);
  pair.x1 = m1.x;
  pair.first = plain.snapshot(pair.x1);
  if (!pref) {
    pair.x2 = pair.x1;
    pair.second = pair.first;
    return pair;
  }
  const Acquisition fused(model, *pref, context, sched, cfg, pair.mc_seed, batch,
                          form);
  const auto m2 = maximize(fused, space, batch, search, seed * 2 + 1);
  pair.x2 = m2.x;
  pair.second = fused.snapshot(pair.x2);
  pair.bridge = fused.bridge();
  return pair;
}

void to_json(json& j, const AcquisitionSnapshot& s) {
  j = {{"mu_S", s.mu_S},         {"var_S", s.var_S}, {"mu_pi", s.mu_pi},
       {"var_pi", s.var_pi},     {"mean", s.mean},   {"variance", s.variance},
       {"w_pi", s.w_pi},         {"w_S", s.w_S},     {"score", s.score}};
}

void to_json(json& j, const CandidatePair& p) {
  j = {{"x1", p.x1},
       {"x2", p.x2},
       {"first", p.first},
       {"second", p.second},
       {"bridge",
        {{"pi_mean", p.bridge.pi_mean},
         {"s_mean", p.bridge.s_mean},
         {"slope", p.bridge.slope}}},
       {"mc_seed", p.mc_seed},
       {"form", to_string(p.form)}};
}

}  // namespace hlmbo
