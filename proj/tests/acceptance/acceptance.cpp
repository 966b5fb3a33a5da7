// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. The desk-scale checkpoint and benchmark
// outputs are kept in a cache directory so reruns skip training.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hlmbo/acquisition.hpp"
#include "hlmbo/bench.hpp"
#include "hlmbo/errors.hpp"
#include "hlmbo/explain.hpp"
#include "hlmbo/orchestrator.hpp"
#include "hlmbo/preference.hpp"
#include "hlmbo/tnp.hpp"

using namespace hlmbo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "" : "FAILED ") + what);
  }
};

std::string num(double v, int precision = 4) {
  std::ostringstream o;
  o.precision(precision);
  o << v;
  return o.str();
}

// --------------------------------------------------------------- rationals

struct Q {
  __int128 n = 0, d = 1;

  Q(long long a = 0, long long b = 1) : n(a), d(b) { norm(); }
  void norm() {
    if (d < 0) n = -n, d = -d;
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
      const __int128 r = a % b;
      a = b;
      b = r;
    }
    if (a > 1) n /= a, d /= a;
  }
  friend Q operator+(Q a, Q b) { return mk(a.n * b.d + b.n * a.d, a.d * b.d); }
  friend Q operator*(Q a, Q b) { return mk(a.n * b.n, a.d * b.d); }
  friend Q operator/(Q a, Q b) { return mk(a.n * b.d, a.d * b.n); }
  static Q mk(__int128 n, __int128 d) {
    Q q;
    q.n = n;
    q.d = d;
    q.norm();
    return q;
  }
  double value() const { return static_cast<double>(n) / static_cast<double>(d); }
};

// ---------------------------------------------------------------- criteria

Outcome formula_fidelity() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> mu_d(-2.0, 2.0), sd_d(0.1, 2.0), z_d(0.0, 0.5);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 1000000;
  int within = 0;
  double worst = 0.0;
  for (int set = 0; set < 20; ++set) {
    const double mu = mu_d(rng), sd = sd_d(rng), fb = mu_d(rng), zeta = z_d(rng);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = std::max(mu + sd * g(rng) - fb - zeta, 0.0);
      s += v;
      s2 += v * v;
    }
    const double mean = s / n;
    const double se = std::sqrt(std::max(s2 / n - mean * mean, 0.0) / n);
    const double ei = expected_improvement(mu, sd, fb, {zeta});
    const double k = se > 0 ? std::abs(ei - mean) / se : (ei == mean ? 0.0 : INFINITY);
    worst = std::max(worst, k);
    within += k <= 3.0;
  }
  o.require(within == 20, "EI vs 1e6-sample MC: " + std::to_string(within) +
                              "/20 within 3 SE (worst " + num(worst, 3) + " SE)");

  // t = 10, gamma = 1/10, mu_S = 2, var_S = 1, mu_pi = 0, var_pi = 1
  const Q gamma(1, 10), t2(100), mu_s(2), var_s(1), mu_pi(0), var_pi(1);
  const Q S2 = var_pi + gamma * t2 * var_s;
  const Q w_pi = var_s / (S2 + var_s), w_s = S2 / (S2 + var_s);
  const Q mean = w_s * mu_s + w_pi * mu_pi;
  const Q var = S2 * var_s / (S2 + var_s);
  const auto c = combine_posterior(2.0, 1.0, 0.0, 1.0, {0.1, 10});
  const double dm = std::abs(c.mean - mean.value()), dv = std::abs(c.variance - var.value());
  o.require(mean.n == 11 && mean.d == 6 && var.n == 11 && var.d == 12,
            "rational oracle gives mean 11/6, variance 11/12");
  o.require(dm <= 1e-12 && dv <= 1e-12,
            "combine_posterior vs exact rationals: |dmean| " + num(dm, 3) + ", |dvar| " + num(dv, 3));
  return o;
}

Outcome noharm_limits() {
  Outcome o;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> lv(-6.0, 3.0), mu(-5.0, 5.0), gm(0.0, 2.0);
  std::uniform_int_distribution<int> tt(0, 10000);
  double worst_sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double vp = std::exp(lv(rng)), vs = std::exp(lv(rng));
    const auto [wp, ws] = noharm_weights(vp, vs, {gm(rng), tt(rng)});
    worst_sum = std::max(worst_sum, std::abs(wp + ws - 1.0));
  }
  o.require(worst_sum <= 1e-12, "|w_pi + w_S - 1| over 1e4 inputs <= " + num(worst_sum, 3));
  double worst_ratio = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double vp = std::exp(lv(rng)), vs = std::exp(lv(rng));
    const double ms = mu(rng), mp = mu(rng);
    const auto c = combine_posterior(ms, vs, mp, vp, {0.1, 10000});
    const double gap = std::abs(mp - ms);
    if (gap > 0) worst_ratio = std::max(worst_ratio, std::abs(c.mean - ms) / gap);
  }
  o.require(worst_ratio <= 1e-6,
            "t=1e4, gamma=0.1: max |mu_comb - mu_S| / |mu_pi - mu_S| = " + num(worst_ratio, 3));
  return o;
}

bool same_bits(const Posterior& a, const Posterior& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.mean.data(), b.mean.data(), a.size() * sizeof(double)) == 0 &&
         std::memcmp(a.variance.data(), b.variance.data(), a.size() * sizeof(double)) == 0;
}

double gradient_check() {
  detail::NetShape shape;
  shape.input = 3;
  shape.model = 8;
  shape.ff = 16;
  shape.heads = 2;
  shape.layers = 1;
  shape.embed_layers = 2;
  auto rng = make_rng(21);
  detail::Network<double> net(shape, detail::Params<double>::init(shape, rng));
  const detail::SequenceLayout lay{1, 1};
  detail::Mat<double> tokens(3, 3);
  tokens << 0.2, 0.7, 1.0, 0.6, -0.4, 1.0, 0.6, 0.0, 0.0;
  const std::vector<double> y{-0.4};
  const auto mask = detail::autoregressive_mask(lay);
  detail::ForwardCache<double> cache;
  const auto out = net.forward(tokens, mask, &cache);
  detail::Mat<double> dout = detail::Mat<double>::Zero(out.rows(), out.cols());
  detail::sequence_nll<double>(out, lay, y, &dout);
  auto grad = detail::Params<double>::zeros(shape);
  net.backward(cache, dout, grad);

  std::vector<double*> ps;
  std::vector<double> gs;
  net.params().visit([&](const std::string&, detail::Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) ps.push_back(m.data() + i);
  });
  grad.visit([&](const std::string&, detail::Mat<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) gs.push_back(m.data()[i]);
  });
  double worst = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const double saved = *ps[k];
    const double h = 1e-4;
    auto at = [&](double off) {
      *ps[k] = saved + off;
      return detail::sequence_nll<double>(net.forward(tokens, mask, nullptr), lay, y, nullptr);
    };
    const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    *ps[k] = saved;
    const double scale = std::max(std::abs(fd), std::abs(gs[k]));
    if (scale < 1e-7) continue;
    worst = std::max(worst, std::abs(fd - gs[k]) / scale);
  }
  return worst;
}

Outcome tnp_correctness(BenchContext& ctx, double train_seconds) {
  Outcome o;
  const auto model = ctx.model();
  const auto& fam = ctx.family();
  const auto& space = fam.space;

  // permutation invariance
  bool invariant = true;
  auto rng = make_rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto& task = fam.test[trial % fam.test.size()];
    TaskDataset c;
    for (const auto& p : sample_space(space, 5 + trial, SampleMethod::uniform, 100 + trial))
      c.add(p, task.evaluate(p));
    const auto targets = sample_space(space, 8, SampleMethod::uniform, 200 + trial);
    const auto base = model->predict(c, targets);
    std::vector<std::size_t> perm(c.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TaskDataset p;
    for (auto i : perm) p.add(c.points[i], c.values[i]);
    invariant = invariant && same_bits(model->predict(p, targets), base);
  }
  o.require(invariant, "context permutation invariance (20 shuffles, bitwise)");

  // causality: earlier targets unaffected by later truth and query rows
  bool causal = true;
  const auto& net = model->network();
  detail::SequenceLayout lay{6, 8};
  std::normal_distribution<float> g(0.0f, 1.0f);
  detail::Mat<float> tokens(lay.length(), static_cast<Eigen::Index>(space.dims() + 2));
  for (Eigen::Index r = 0; r < tokens.rows(); ++r)
    for (Eigen::Index c = 0; c < tokens.cols(); ++c) tokens(r, c) = g(rng);
  const auto mask = detail::autoregressive_mask(lay);
  const auto base = net.forward(tokens, mask, nullptr);
  for (Eigen::Index j = 1; j < lay.targets; ++j) {
    auto t2 = tokens;
    t2.row(lay.truth(j)).setConstant(3.0f);
    t2.row(lay.query(j)).setConstant(-2.0f);
    const auto out = net.forward(t2, mask, nullptr);
    for (Eigen::Index i = 0; i < j; ++i)
      for (Eigen::Index c = 0; c < 2; ++c)
        causal = causal && std::memcmp(&out(lay.query(i), c), &base(lay.query(i), c),
                                       sizeof(float)) == 0;
  }
  o.require(causal, "target causality (bitwise)");

  const double worst = gradient_check();
  o.require(worst <= 1e-4, "gradient check worst relative error " + num(worst, 3));

  // coverage on held-out test tasks: 100 sequences x 10 targets
  auto crng = make_rng(4242, 1);
  int hit = 0, total = 0;
  for (int s = 0; s < 100; ++s) {
    const auto& task = fam.test[s % fam.test.size()];
    const int m = 5 + s % 20;
    const auto pts = sample_space(space, m + 10, SampleMethod::uniform, crng);
    TaskDataset c;
    std::vector<Point> q;
    for (int i = 0; i < m; ++i) c.add(pts[i], task.evaluate(pts[i]));
    for (int i = m; i < m + 10; ++i) q.push_back(pts[i]);
    const auto post = model->predict(c, q);
    for (int i = 0; i < 10; ++i) {
      const double z = std::abs(task.evaluate(q[i]) - post.mean[i]) / std::sqrt(post.variance[i]);
      hit += z <= 1.959963984540054;
      ++total;
    }
  }
  const double cov = static_cast<double>(hit) / total;
  o.require(total >= 500 && cov >= 0.85 && cov <= 0.99,
            "95% interval coverage " + num(cov, 3) + " over " + std::to_string(total) +
                " held-out targets");
  o.require(train_seconds <= 1800.0,
            "desk training time " + num(train_seconds, 4) + " s (limit 1800 s)");
  return o;
}

Outcome preference_model() {
  Outcome o;
  auto bump = std::make_shared<FunctionObjective>([](std::span<const double> x) {
    return std::exp(-8.0 * ((x[0] - 0.3) * (x[0] - 0.3) + (x[1] - 0.6) * (x[1] - 0.6)));
  });
  const BlackBoxTask t("bump", SearchSpace::unit(2), bump, Optimum{{0.3, 0.6}, 1.0});
  SimulatedExpert e(std::sqrt(0.1), 3);
  const auto d = build_pref_dataset(simulated_oracle(e, t), t.space(),
                                    Hypothesis::full(t.space()), 24, 8);
  const auto m = fit_preference_model(augment_skew(d), t.space());
  const auto a = sample_space(t.space(), 100, SampleMethod::uniform, 77);
  const auto b = sample_space(t.space(), 100, SampleMethod::uniform, 78);
  double lo = 2.0, hi = -1.0;
  for (std::size_t i = 0; i < 100; ++i) {
    const double s = m.probability(a[i], b[i], 4) + m.probability(b[i], a[i], 4);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  o.require(lo >= 0.95 && hi <= 1.05,
            "p(a>b)+p(b>a) over 100 pairs in [" + num(lo, 4) + ", " + num(hi, 4) + "]");

  auto lin = std::make_shared<FunctionObjective>([](std::span<const double> x) { return x[0]; });
  const BlackBoxTask l("linear", SearchSpace::unit(1), lin, Optimum{{1.0}, 1.0});
  SimulatedExpert perfect(0.0, 1);
  const auto sd = build_pref_dataset(simulated_oracle(perfect, l), l.space(),
                                     Hypothesis::full(l.space()), 40, 2);
  const auto sm = fit_preference_model(augment_skew(sd), l.space());
  int right = 0;
  for (const auto& p : sd.pairs) right += (sm.probability(p.x1, p.x2, 1) > 0.5) == (p.y == 1);
  const double rate = static_cast<double>(right) / sd.pairs.size();
  o.require(rate >= 0.95, "separable 1-D label consistency " + num(100 * rate, 4) + "%");
  return o;
}

AttributionTarget fn_target(std::function<double(std::span<const double>)> f) {
  return {TargetKind::acquisition, std::move(f)};
}

// Shapley values from all orderings of the features.
std::vector<double> enumeration_oracle(const AttributionTarget& t, const Point& x,
                                       const std::vector<Point>& bg) {
  const std::size_t d = x.size();
  auto value = [&](const std::vector<bool>& in) {
    double s = 0.0;
    for (const auto& b : bg) {
      Point z = b;
      for (std::size_t j = 0; j < d; ++j)
        if (in[j]) z[j] = x[j];
      s += t.fn(z);
    }
    return s / bg.size();
  };
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(d, 0.0);
  double count = 0;
  do {
    std::vector<bool> in(d, false);
    double prev = value(in);
    for (auto j : order) {
      in[j] = true;
      const double cur = value(in);
      phi[j] += cur - prev;
      prev = cur;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& p : phi) p /= count;
  return phi;
}

Outcome shap_axioms() {
  Outcome o;
  auto rng = make_rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point> bg(8, Point(5));
  for (auto& b : bg)
    for (auto& v : b) v = u(rng);
  const Point x{0.9, 0.1, 0.6, 0.3, 0.75};
  // feature 3 is a null player; features 0 and 1 are symmetric
  const auto t = fn_target([](std::span<const double> z) {
    return std::sin(3 * z[0] * z[1]) + z[0] + z[1] + z[2] * z[2] * z[4] + std::exp(z[4]);
  });
  const auto a = shap_attributions(t, x, bg, 0, 1);
  double fbg = 0.0;
  for (const auto& b : bg) fbg += t.fn(b);
  fbg /= bg.size();
  const double eff = std::abs(std::accumulate(a.values.begin(), a.values.end(), 0.0) -
                              (t.fn(x) - fbg));
  o.require(a.exact && eff <= 1e-6, "efficiency error " + num(eff, 3) + " (exact mode)");
  o.require(std::abs(a.values[3]) <= 1e-6, "null player |phi_3| = " + num(std::abs(a.values[3]), 3));

  const Point xs{0.8, 0.8, 0.2, 0.5, 0.4};
  std::vector<Point> sbg;
  for (int i = 0; i < 6; ++i) {
    const double v = u(rng);
    sbg.push_back({v, v, u(rng), u(rng), u(rng)});
  }
  const auto s = shap_attributions(t, xs, sbg, 0, 1);
  o.require(std::abs(s.values[0] - s.values[1]) <= 1e-6,
            "symmetry |phi_0 - phi_1| = " + num(std::abs(s.values[0] - s.values[1]), 3));

  const auto add = fn_target([](std::span<const double> z) {
    return 3 * z[0] - 2 * z[1] * z[1] + std::sin(4 * z[2]) + 0.5 * z[3] + z[4];
  });
  const auto aa = shap_attributions(add, x, bg, 0, 1);
  const auto oracle = enumeration_oracle(add, x, bg);
  double dev = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) dev = std::max(dev, std::abs(aa.values[j] - oracle[j]));
  const auto inter_oracle = enumeration_oracle(t, x, bg);
  for (std::size_t j = 0; j < x.size(); ++j)
    dev = std::max(dev, std::abs(a.values[j] - inter_oracle[j]));
  o.require(dev <= 1e-6, "max deviation from the enumeration oracle " + num(dev, 3));
  return o;
}

Outcome lime_recovery() {
  Outcome o;
  const auto t = fn_target([](std::span<const double> z) { return 2 * z[0] - z[1] + 0.5 * z[2]; });
  LimeConfig cfg;
  cfg.sparsity = 3;
  const auto a = lime_attributions(t, Point{0.5, 0.4, 0.3}, SearchSpace::unit(3), cfg, 1);
  const double err = std::max({std::abs(a.values[0] - 2.0), std::abs(a.values[1] + 1.0),
                               std::abs(a.values[2] - 0.5)});
  o.require(err <= 0.1, "max coefficient error " + num(err, 3));
  o.require(a.r2 >= 0.9, "weighted R^2 " + num(a.r2, 4));
  const SearchSpace wide({0.0, -10.0, 1.0}, {10.0, 10.0, 2.0});
  const auto w = lime_attributions(t, Point{5.0, 0.0, 1.5}, wide, cfg, 2);
  const double werr = std::max({std::abs(w.values[0] - 2.0), std::abs(w.values[1] + 1.0),
                                std::abs(w.values[2] - 0.5)});
  o.require(werr <= 0.1 && w.r2 >= 0.9,
            "scaled box: max coefficient error " + num(werr, 3) + ", R^2 " + num(w.r2, 4));
  return o;
}

Outcome method_ordering(const BenchTable& t) {
  Outcome o;
  const auto h = t.finals("hlmbo_ei");
  for (const std::string other : {"tnp_ei", "mcoexbo_ucb"}) {
    const auto b = t.finals(other);
    const auto st = sign_test_less(h, b);
    const double mh = median(h), mb = median(b);
    o.require(mh <= mb, "median final regret hlmbo_ei " + num(mh) + " <= " + other + " " + num(mb));
    o.require(st.p_value <= 0.1, "sign test vs " + other + ": " + std::to_string(st.wins) + "W/" +
                                     std::to_string(st.losses) + "L/" + std::to_string(st.ties) +
                                     "T, p = " + num(st.p_value, 3));
  }
  return o;
}

bool monotone_valid(const std::vector<double>& tr, std::size_t expected) {
  if (tr.size() != expected) return false;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (!std::isfinite(tr[i]) || tr[i] < 0) return false;
    if (i > 0 && tr[i] > tr[i - 1]) return false;
  }
  return true;
}

Outcome hypothesis_trend(const BenchTable& t, std::size_t length) {
  Outcome o;
  const auto s = summarize(t);
  std::map<std::string, double> mean;
  for (const auto& m : s) mean[m.method] = m.final_mean;
  o.require(mean.at("hypothesis_expert") <= mean.at("hypothesis_random"),
            "EH mean final regret " + num(mean.at("hypothesis_expert")) + " <= RH " +
                num(mean.at("hypothesis_random")));
  bool valid = true;
  const auto seeds = t.seeds("hypothesis_adversarial");
  for (auto sd : seeds) valid = valid && monotone_valid(t.trace("hypothesis_adversarial", sd), length);
  o.require(valid && seeds.size() == 10,
            "AH: " + std::to_string(seeds.size()) + " runs with valid monotone traces (mean final " +
                num(mean.at("hypothesis_adversarial")) + ")");
  return o;
}

Outcome accuracy_trend(const BenchTable& t) {
  Outcome o;
  std::map<std::string, double> mean;
  for (const auto& m : summarize(t)) mean[m.method] = m.final_mean;
  o.require(mean.at("accuracy_100") <= mean.at("accuracy_50"),
            "100% accuracy mean final regret " + num(mean.at("accuracy_100")) + " <= 50% " +
                num(mean.at("accuracy_50")));
  return o;
}

Outcome budget_and_replay(BenchContext& ctx, const BenchTable& compare) {
  Outcome o;
  const auto& cfg = ctx.config();
  const std::size_t expected = static_cast<std::size_t>(cfg.session.budget + cfg.session.initial);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(ctx.out_dir() / "runs" / "compare"))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  bool counts = !files.empty();
  for (const auto& f : files) {
    const auto r = load_run(f);
    counts = counts && r.phase == Phase::done && r.evaluations == static_cast<int>(expected) &&
             r.trace.size() == expected;
  }
  for (const auto& m : compare.methods())
    for (auto s : compare.seeds(m)) counts = counts && compare.trace(m, s).size() == expected;
  o.require(counts, std::to_string(files.size()) + " completed runs perform exactly I+B = " +
                        std::to_string(expected) + " evaluations");

  int exact = 0, tried = 0;
  for (std::size_t i = 0; i < files.size() && tried < 20; ++i, ++tried) {
    const auto r = load_run(files[i]);
    const auto tr = replay(r, task_from_json(r.task), ctx.model());
    exact += tr == r.trace;
  }
  o.require(tried == 20 && exact == 20,
            "replay reproduces " + std::to_string(exact) + "/" + std::to_string(tried) +
                " stored traces exactly");
  return o;
}

// ------------------------------------------------------------------ driver

struct Desk {
  BenchContext ctx;
  double train_seconds = 0.0;
};

Desk prepare(const fs::path& cache, int jobs) {
  BenchConfig cfg = desk_bench_config();
  if (jobs >= 0) cfg.jobs = jobs;
  fs::create_directories(cache);
  const auto stamp = cache / "model.json";
  const json want = {{"tnp", cfg.tnp}, {"family", json(cfg).at("family")},
                     {"family_seed", cfg.family_seed}, {"train_seed", cfg.train_seed}};
  Desk d{BenchContext(cfg, cache), 0.0};
  bool cached = false;
  if (fs::exists(stamp) && fs::exists(d.ctx.checkpoint_path())) {
    std::ifstream in(stamp);
    const json have = json::parse(in, nullptr, false);
    if (!have.is_discarded() && have.value("config", json()) == want) {
      d.train_seconds = have.at("seconds").get<double>();
      cached = true;
    }
  }
  if (!cached) {
    std::cout << "training the desk-scale surrogate (" << cfg.tnp.train_steps << " steps)...\n"
              << std::flush;
    for (const auto& e : fs::directory_iterator(cache)) fs::remove_all(e.path());
    const auto t0 = std::chrono::steady_clock::now();
    cmd_train(d.ctx);
    d.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(stamp) << json{{"config", want}, {"seconds", d.train_seconds}}.dump(2) << "\n";
  }
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string cache = "acceptance_cache";
  std::vector<int> only;
  int jobs = -1;
  app.add_option("--cache", cache, "Directory for the desk checkpoint and benchmark outputs")
      ->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (1-10)");
  app.add_option("--jobs", jobs, "Worker threads for benchmark runs (0 = all cores)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> wanted(only.begin(), only.end());
  auto want = [&](int k) { return wanted.empty() || wanted.count(k) > 0; };

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int k, const std::string& name, const std::function<Outcome()>& fn) {
    if (!want(k)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.notes.push_back(std::string("FAILED with exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.notes.push_back("runtime " + num(secs, 3) + " s");
    std::cout << "  [" << k << "] " << name << " done\n" << std::flush;
    results[k] = {name, o};
  };

  record(1, "formula fidelity", formula_fidelity);
  record(2, "no-harm limits", noharm_limits);
  record(4, "preference model", preference_model);
  record(5, "SHAP axioms", shap_axioms);
  record(6, "LIME recovery", lime_recovery);

  const bool need_desk = want(3) || want(7) || want(8) || want(9) || want(10);
  if (need_desk) {
    std::optional<Desk> desk;
    std::string desk_error;
    try {
      desk.emplace(prepare(cache, jobs));
    } catch (const std::exception& e) {
      desk_error = e.what();
    }
    auto with_desk = [&](const std::function<Outcome(Desk&)>& fn) -> std::function<Outcome()> {
      return [&, fn]() -> Outcome {
        if (!desk) throw std::runtime_error("desk setup failed: " + desk_error);
        return fn(*desk);
      };
    };
    record(3, "TNP correctness", with_desk([](Desk& d) { return tnp_correctness(d.ctx, d.train_seconds); }));
    std::optional<BenchTable> compare;
    auto get_compare = [&](Desk& d) -> const BenchTable& {
      if (!compare) {
        cmd_sweep_zeta(d.ctx);
        compare = cmd_compare(d.ctx);
      }
      return *compare;
    };
    record(7, "method ordering", with_desk([&](Desk& d) { return method_ordering(get_compare(d)); }));
    record(8, "expert hypothesis trend", with_desk([](Desk& d) {
             const auto& s = d.ctx.config().session;
             return hypothesis_trend(cmd_ablate_hypothesis(d.ctx),
                                     static_cast<std::size_t>(s.budget + s.initial));
           }));
    record(9, "expert accuracy trend",
           with_desk([](Desk& d) { return accuracy_trend(cmd_ablate_accuracy(d.ctx)); }));
    record(10, "budget and replay", with_desk([&](Desk& d) {
             const auto& t = get_compare(d);
             return budget_and_replay(d.ctx, t);
           }));
  }

  std::cout << "\n";
  bool all = true;
  for (const auto& [k, entry] : results) {
    const auto& [name, o] = entry;
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << k << ": " << name << "\n";
    for (const auto& n : o.notes) std::cout << "        " << n << "\n";
  }
  std::cout << "\n" << (all ? "all criteria passed" : "some criteria failed") << "\n";
  return all ? 0 : 1;
}
