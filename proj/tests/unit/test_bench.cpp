#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "hlmbo/bench.hpp"
#include "hlmbo/errors.hpp"

using namespace hlmbo;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("hlmbo_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

BenchTable synthetic_table() {
  BenchTable t;
  for (const std::string m : {"a", "b"})
    for (std::uint64_t s = 0; s < 3; ++s)
      for (int k = 0; k < 4; ++k)
        t.rows.push_back({m, s, k, (m == "a" ? 1.0 : 2.0) / (k + 1) + 0.1 * s, 0.5 * k});
  return t;
}

BenchConfig tiny_bench() {
  BenchConfig c;
  c.family.dims = 2;
  c.family.n_train = 6;
  c.family.n_val = 2;
  c.family.n_test = 2;
  c.tnp = testing::small_tnp(30);
  c.seeds = {0, 1};
  c.session.budget = 2;
  c.session.initial = 1;
  c.session.preference.pairs = 6;
  c.session.search.candidates = 64;
  c.session.search.iterations = 3;
  c.session.explain_steps = false;
  c.jobs = 1;
  return c;
}

// Binomial upper tail computed by direct summation of exact counts.
double upper_tail(int n, int k) {
  double num = 0.0;
  for (int i = k; i <= n; ++i) {
    double c = 1.0;
    for (int j = 0; j < i; ++j) c = c * (n - j) / (j + 1);
    num += c;
  }
  return num / std::pow(2.0, n);
}

}  // namespace

TEST_CASE("median and summary statistics") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  const auto s = summarize(synthetic_table());
  REQUIRE(s.size() == 2);
  CHECK(s[0].method == "a");
  REQUIRE(s[0].mean.size() == 4);
  CHECK(s[0].mean[0] == doctest::Approx(1.1));
  // finals of "a": 0.25, 0.35, 0.45 -> population std sqrt(2/3)*0.1
  CHECK(s[0].final_mean == doctest::Approx(0.35));
  CHECK(s[0].final_std == doctest::Approx(std::sqrt(2.0 / 3.0) * 0.1));
  CHECK(s[0].final_median == doctest::Approx(0.35));
}

TEST_CASE("sign test against exact binomial tails") {
  for (int n = 1; n <= 12; ++n)
    for (int w = 0; w <= n; ++w) {
      std::vector<double> a, b;
      for (int i = 0; i < n; ++i) {
        a.push_back(i < w ? 0.0 : 1.0);
        b.push_back(0.5);
      }
      a.push_back(0.5);  // a tie is dropped
      b.push_back(0.5);
      const auto st = sign_test_less(a, b);
      CHECK(st.wins == w);
      CHECK(st.losses == n - w);
      CHECK(st.ties == 1);
      CHECK(st.p_value == doctest::Approx(upper_tail(n, w)).epsilon(1e-12));
    }
  // 8 of 10 is the smallest winning count at the 0.1 level
  CHECK(upper_tail(10, 8) <= 0.1);
  CHECK(upper_tail(10, 7) > 0.1);
  CHECK(sign_test_less({1.0}, {1.0}).p_value == 1.0);
  CHECK_THROWS(sign_test_less({1.0, 2.0}, {1.0}));
}

TEST_CASE("table CSV round trip and density") {
  const auto dir = fresh_dir("csv");
  const auto t = synthetic_table();
  write_table_csv(t, dir / "x.csv");
  const auto back = read_table_csv(dir / "x.csv");
  REQUIRE(back.rows.size() == t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(back.rows[i].method == t.rows[i].method);
    CHECK(back.rows[i].seed == t.rows[i].seed);
    CHECK(back.rows[i].step == t.rows[i].step);
    CHECK(back.rows[i].regret == t.rows[i].regret);
  }
  CHECK(back.methods() == std::vector<std::string>{"a", "b"});
  CHECK(back.trace("b", 1) == t.trace("b", 1));
  back.check_dense();

  auto holed = t;
  holed.rows.erase(holed.rows.begin() + 5);
  CHECK_THROWS_AS(holed.check_dense(), RecordError);
  auto dup = t;
  dup.rows.push_back(dup.rows.front());
  CHECK_THROWS_AS(dup.check_dense(), RecordError);
  CHECK_THROWS_AS(BenchTable{}.check_dense(), RecordError);

  std::ofstream(dir / "bad.csv") << "method,seed\n";
  CHECK_THROWS_AS(read_table_csv(dir / "bad.csv"), RecordError);
  std::ofstream(dir / "bad2.csv") << "method,seed,step,regret,wall_ms\na,0,zero,1,1\n";
  CHECK_THROWS_AS(read_table_csv(dir / "bad2.csv"), RecordError);
  CHECK_THROWS_AS(read_table_csv(dir / "missing.csv"), RecordError);
}

TEST_CASE("best zeta picks the lowest final mean, ties to the smaller value") {
  BenchTable t;
  const auto add = [&](const std::string& m, double final) {
    for (std::uint64_t s = 0; s < 2; ++s) {
      t.rows.push_back({m, s, 0, 1.0, 0.0});
      t.rows.push_back({m, s, 1, final, 0.0});
    }
  };
  add("zeta_0.5", 0.2);
  add("zeta_0.1", 0.3);
  add("zeta_0.3", 0.2);
  CHECK(best_zeta(t) == 0.3);
  CHECK_THROWS_AS(best_zeta(synthetic_table()), NothingToReport);
}

TEST_CASE("bench config JSON and validation") {
  const auto d = desk_bench_config();
  d.validate();
  CHECK(d.seeds.size() == 10);
  nlohmann::json j = d;
  const auto back = bench_config_from_json(j);
  CHECK(nlohmann::json(back) == j);

  const auto partial = bench_config_from_json(nlohmann::json::object());
  CHECK(partial.seeds.size() == 10);
  CHECK_THROWS_AS(bench_config_from_json(nlohmann::json::array()), ConfigError);
  CHECK_THROWS_AS(bench_config_from_json({{"methods", {"nope"}}}), ConfigError);
  CHECK_THROWS_AS(bench_config_from_json({{"accuracies", {1.5}}}), ConfigError);
  CHECK_THROWS_AS(bench_config_from_json({{"split", "dev"}}), ConfigError);
  CHECK_THROWS_AS(load_bench_config("/nonexistent/bench.json"), ConfigError);
}

TEST_CASE("train, compare, sweep and report end to end") {
  const auto dir = fresh_dir("e2e");
  BenchContext missing(tiny_bench(), dir);
  CHECK_THROWS_AS(missing.model(), ConfigError);
  CHECK_THROWS_AS(cmd_report(dir), NothingToReport);

  BenchContext ctx(tiny_bench(), dir);
  const auto tr = cmd_train(ctx);
  CHECK(fs::exists(tr.checkpoint));
  CHECK(fs::exists(tr.loss_csv));
  CHECK(std::isfinite(tr.final_loss));

  const auto cmp = cmd_compare(ctx);
  cmp.check_dense();
  CHECK(cmp.methods().size() == 3);
  CHECK(cmp.trace("hlmbo_ei", 0).size() == 3);
  CHECK(fs::exists(dir / "compare_regret.csv"));
  CHECK(fs::exists(dir / "runs" / "compare" / "hlmbo_ei_s1.json"));
  // a rerun reproduces every regret value
  BenchContext again(tiny_bench(), dir);
  const auto cmp2 = cmd_compare(again);
  for (std::size_t i = 0; i < cmp.rows.size(); ++i) CHECK(cmp2.rows[i].regret == cmp.rows[i].regret);

  const auto sweep = cmd_sweep_zeta(ctx);
  CHECK(sweep.methods().size() == 3);
  const auto bz = nlohmann::json::parse(slurp(dir / "best_zeta.json"));
  CHECK(bz.at("zeta").get<double>() == best_zeta(sweep));
  CHECK(ctx.session_template().ei.zeta == best_zeta(sweep));

  const auto md = cmd_report(dir);
  const auto first = slurp(md);
  CHECK(first.find("## compare") != std::string::npos);
  CHECK(first.find("## zeta") != std::string::npos);
  CHECK(first.find("Paired sign tests") != std::string::npos);
  const auto svg = slurp(dir / "compare_regret.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  cmd_report(dir);
  CHECK(slurp(md) == first);
  CHECK(slurp(dir / "compare_regret.svg") == svg);

  auto wrong = tiny_bench();
  wrong.family.dims = 3;
  BenchContext mismatch(wrong, dir);
  CHECK_THROWS_AS(mismatch.model(), ConfigError);
}
