#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "hlmbo/acquisition.hpp"
#include "hlmbo/errors.hpp"
#include "hlmbo/normal.hpp"

using namespace hlmbo;

TEST_CASE("combine_posterior worked examples") {
  DecaySchedule s{0.1, 0};
  auto c = combine_posterior(2.0, 1.0, 0.0, 1.0, s);
  CHECK(c.variance == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c.mean == doctest::Approx(1.0).epsilon(1e-15));

  s.t = 10;
  c = combine_posterior(2.0, 1.0, 0.0, 1.0, s);
  CHECK(std::abs(c.mean - 11.0 / 6.0) <= 1e-12);
  CHECK(std::abs(c.variance - 11.0 / 12.0) <= 1e-12);
  CHECK(std::abs(c.w_pi - 1.0 / 12.0) <= 1e-12);
  CHECK(std::abs(c.w_S - 11.0 / 12.0) <= 1e-12);

  s.t = 0;
  c = combine_posterior(2.0, 1.0, 0.0, 1e12, s);
  CHECK(std::abs(c.mean - 2.0) <= 1e-6 * 2.0);
  CHECK(std::abs(c.variance - 1.0) <= 1e-6);

  CHECK_THROWS_AS(combine_posterior(0, 0.0, 0, 1, s), InvalidPosterior);
  CHECK_THROWS_AS(combine_posterior(0, 1.0, 0, -1, s), InvalidPosterior);
  CHECK_THROWS_AS(combine_posterior(0, NAN, 0, 1, s), InvalidPosterior);
}

TEST_CASE("no-harm weights") {
  auto [wp, ws] = noharm_weights(1.0, 1.0, {0.1, 0});
  CHECK(wp == doctest::Approx(0.5));
  CHECK(ws == doctest::Approx(0.5));
  std::tie(wp, ws) = noharm_weights(1.0, 1.0, {0.1, 1000});
  CHECK(wp <= 1e-5);
  CHECK(wp <= 1.0 / (0.1 * 1e6 + 2) + 1e-18);

  auto rng = make_rng(4);
  std::uniform_real_distribution<double> lv(-6, 6);
  std::uniform_int_distribution<int> tt(0, 100);
  for (int i = 0; i < 1000; ++i) {
    const double vp = std::exp(lv(rng)), vs = std::exp(lv(rng));
    const DecaySchedule s{0.1, tt(rng)};
    const auto [a, b] = noharm_weights(vp, vs, s);
    const auto c = combine_posterior(0.3, vs, -0.2, vp, s);
    CHECK(std::abs(a + b - 1.0) <= 1e-12);
    CHECK(std::abs(a - c.w_pi) <= 1e-12);
    const auto later = noharm_weights(vp, vs, {0.1, s.t + 1});
    CHECK(later.first <= a);
  }
}

TEST_CASE("expected improvement closed form") {
  CHECK(expected_improvement(1.0, 0.0, 0.5, {0.0}) == 0.5);
  CHECK(expected_improvement(0.2, 0.0, 0.5, {0.0}) == 0.0);
  CHECK(expected_improvement(0.6, 1.0, 0.5, {0.1}) == doctest::Approx(0.398942).epsilon(1e-6));
  const double oracle = 0.5 * normal_cdf(0.5) + normal_pdf(0.5);
  CHECK(std::abs(expected_improvement(1.0, 1.0, 0.5, {0.0}) - oracle) <= 1e-12);
  CHECK(std::abs(oracle - 0.697796) <= 1e-5);
  double prev = -1.0;
  for (double mu = -2; mu <= 2; mu += 0.25) {
    const double v = expected_improvement(mu, 0.7, 0.1, {0.1});
    CHECK(v >= 0.0);
    CHECK(v > prev);
    prev = v;
  }
  CHECK(expected_improvement(1.0, 1e-9, 0.5, {0.1}) == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("ucb") {
  CHECK(ucb(1, 2) == 3);
  CHECK(ucb(0, 0) == 0);
  CHECK(ucb(0.3, 0.7) - ucb(0.3, 0.0) == doctest::Approx(0.7));
}

TEST_CASE("bridge matches the surrogate mean and spread") {
  const std::vector<double> s{1.0, 2.0, 3.0, 4.0}, p{0.1, 0.2, 0.3, 0.4};
  const auto b = PreferenceBridge::fit(s, p);
  CHECK(b.slope == doctest::Approx(10.0));
  CHECK(b.mean(0.25) == doctest::Approx(2.5));
  CHECK(b.variance(0.01) == doctest::Approx(1.0));
  const std::vector<double> flat{0.5, 0.5, 0.5, 0.5};
  CHECK(std::isfinite(PreferenceBridge::fit(s, flat).slope));
}

TEST_CASE("alpha_S matches pointwise recomputation") {
  const auto model = testing::shared_model(2);
  const auto fam = testing::small_family(2);
  TaskDataset ctx;
  for (auto& p : sample_space(fam.space, 5, SampleMethod::latin_hypercube, 2))
    ctx.add(p, fam.test[0].evaluate(p));
  const auto grid = sample_space(fam.space, 200, SampleMethod::uniform, 3);
  const EiConfig cfg{0.1};
  const auto scores = score_alpha_S(*model, ctx, grid, cfg);
  const auto post = model->predict(ctx, grid);
  const double fb = *std::max_element(ctx.values.begin(), ctx.values.end());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(scores[i] >= 0.0);
    CHECK(scores[i] == doctest::Approx(expected_improvement(post.mean[i], std::sqrt(post.variance[i]), fb, cfg)).epsilon(1e-9));
  }
  const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
  std::size_t oracle = 0;
  double ov = -1;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = expected_improvement(post.mean[i], std::sqrt(post.variance[i]), fb, cfg);
    if (v > ov) {
      ov = v;
      oracle = i;
    }
  }
  CHECK(static_cast<std::size_t>(best) == oracle);
}

TEST_CASE("incumbent with negligible variance scores about zero") {
  const auto model = testing::shared_model(2);
  TaskDataset ctx;
  ctx.add({0.4, 0.4}, 0.3);
  // an incumbent far above anything the model predicts
  ctx.add({0.6, 0.6}, 1e3);
  const std::vector<Point> q{{0.6, 0.6}};
  CHECK(score_alpha_S(*model, ctx, q, {0.1})[0] <= 1e-9);
}

namespace {

PreferenceModel region_preference(double centre, std::uint64_t seed) {
  auto obj = std::make_shared<FunctionObjective>(
      [centre](std::span<const double> x) { return -std::abs(x[0] - centre); });
  const BlackBoxTask t("pref", SearchSpace::unit(2), obj);
  SimulatedExpert perfect(0.0, seed);
  const auto d = build_pref_dataset(simulated_oracle(perfect, t), t.space(),
                                    Hypothesis::full(t.space()), 30, seed);
  return fit_preference_model(augment_skew(d), t.space());
}

}  // namespace

TEST_CASE("fused scores: no-harm limit, determinism and preference pull") {
  const auto model = testing::shared_model(2);
  const auto fam = testing::small_family(2);
  TaskDataset ctx;
  for (auto& p : sample_space(fam.space, 3, SampleMethod::latin_hypercube, 5))
    ctx.add(p, fam.test[1].evaluate(p));
  const auto pref = region_preference(0.9, 2);
  const auto grid = sample_space(fam.space, 400, SampleMethod::latin_hypercube, 6);
  const EiConfig cfg{0.1};

  const auto plain = score_alpha_S(*model, ctx, grid, cfg);
  const auto late = score_alpha_S_pi(*model, pref, ctx, grid, {0.1, 1000000}, cfg, 7);
  for (std::size_t i = 0; i < grid.size(); ++i)
    CHECK(std::abs(late[i] - plain[i]) <= 1e-4 * std::max(std::abs(plain[i]), 1e-12));

  const auto a = score_alpha_S_pi(*model, pref, ctx, grid, {0.1, 0}, cfg, 7);
  const auto b = score_alpha_S_pi(*model, pref, ctx, grid, {0.1, 0}, cfg, 7);
  CHECK(a == b);

  const auto arg = [&](const std::vector<double>& v) {
    return grid[std::max_element(v.begin(), v.end()) - v.begin()];
  };
  // the preference favours large x[0]
  CHECK(std::abs(arg(a)[0] - 0.9) <= std::abs(arg(plain)[0] - 0.9));
  double mean_fused = 0, mean_plain = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    mean_fused += a[i] * grid[i][0];
    mean_plain += plain[i] * grid[i][0];
  }
  const double sa = std::accumulate(a.begin(), a.end(), 0.0);
  const double sp = std::accumulate(plain.begin(), plain.end(), 0.0);
  CHECK(mean_fused / sa > mean_plain / sp);
}

TEST_CASE("maximize refines the batch and matches a dense 1-D grid") {
  const auto model = testing::shared_model(1);
  const auto space = SearchSpace::unit(1);
  TaskDataset ctx;
  ctx.add({0.2}, 0.1);
  ctx.add({0.7}, -0.2);
  const Acquisition acq(*model, ctx, {0.1});
  const SearchConfig search;
  const auto batch = sample_space(space, search.candidates, SampleMethod::latin_hypercube, 3);
  const auto m = maximize(acq, space, batch, search, 4);
  for (const auto& p : batch) CHECK(m.score >= acq.score(p));
  CHECK(m.score >= m.batch_best);

  double best = -1, bx = 0;
  std::vector<double> v(10000);
  for (int i = 0; i < 10000; ++i) {
    v[i] = acq.score(Point{(i + 0.5) / 10000});
    if (v[i] > best) {
      best = v[i];
      bx = (i + 0.5) / 10000;
    }
  }
  CHECK(m.score >= best);
  // Grid points indistinguishable from the maximum at single precision.
  double lo = bx, hi = bx;
  for (int i = 0; i < 10000; ++i)
    if (v[i] >= best - 1e-6 * std::abs(best)) {
      lo = std::min(lo, (i + 0.5) / 10000);
      hi = std::max(hi, (i + 0.5) / 10000);
    }
  INFO("maximizer ", m.x[0], " grid argmax ", bx, " plateau [", lo, ", ", hi, "]");
  CHECK(m.x[0] >= lo - 1e-4);
  CHECK(m.x[0] <= hi + 1e-4);
}

TEST_CASE("propose_pair is deterministic and searches the whole space") {
  const auto model = testing::shared_model(2);
  const auto fam = testing::small_family(2);
  TaskDataset ctx;
  ctx.add({0.5, 0.5}, fam.test[0].evaluate(Point{0.5, 0.5}));
  const auto pref = region_preference(0.1, 4);
  SearchConfig search;
  search.candidates = 256;
  search.iterations = 10;
  const auto a = propose_pair(*model, &pref, ctx, fam.space, {0.1, 0}, {0.1}, search, 9);
  const auto b = propose_pair(*model, &pref, ctx, fam.space, {0.1, 0}, {0.1}, search, 9);
  CHECK(a.x1 == b.x1);
  CHECK(a.x2 == b.x2);
  CHECK(a.first.score == b.first.score);
  CHECK(fam.space.contains(a.x1));
  CHECK(fam.space.contains(a.x2));
  CHECK(a.second.w_pi > 0.0);
  CHECK(a.second.w_pi + a.second.w_S == doctest::Approx(1.0));
  const auto solo = propose_pair(*model, nullptr, ctx, fam.space, {0.1, 0}, {0.1}, search, 9);
  CHECK(solo.x1 == solo.x2);
  CHECK(solo.x1 == a.x1);
}
