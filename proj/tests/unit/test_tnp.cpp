#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "hlmbo/errors.hpp"
#include "hlmbo/tnp.hpp"

using namespace hlmbo;
namespace fs = std::filesystem;

namespace {

TnpConfig tiny_config(int steps) {
  TnpConfig c;
  c.model_dim = 16;
  c.heads = 2;
  c.ff_dim = 32;
  c.embed_layers = 2;
  c.transformer_layers = 2;
  c.max_sequence = 16;
  c.dataset_points = 64;
  c.batch_tasks = 8;
  c.learning_rate = 1e-3;
  c.warmup_steps = 20;
  c.train_steps = steps;
  return c;
}

TaskFamily constant_family(std::size_t n, std::uint64_t seed) {
  TaskFamily f;
  f.seed = seed;
  f.space = SearchSpace::unit(1);
  auto rng = make_rng(seed, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double c = u(rng);
    auto obj = std::make_shared<FunctionObjective>([c](std::span<const double>) { return c; });
    f.train.emplace_back("const" + std::to_string(i), f.space, obj, Optimum{{0.5}, c});
  }
  return f;
}

TnpModel untrained(std::size_t dims = 2, std::uint64_t seed = 5) {
  FamilyConfig fc;
  fc.dims = dims;
  return meta_train(make_synthetic_family(fc, 1), tiny_config(0), seed);
}

TaskDataset random_context(const SearchSpace& s, std::size_t m, std::uint64_t seed) {
  TaskDataset d;
  auto rng = make_rng(seed, 2);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& p : sample_space(s, m, SampleMethod::uniform, seed)) d.add(p, g(rng));
  return d;
}

bool same_bits(const Posterior& a, const Posterior& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a.mean[i], &b.mean[i], sizeof(double)) != 0 ||
        std::memcmp(&a.variance[i], &b.variance[i], sizeof(double)) != 0)
      return false;
  return true;
}

bool model_weights_equal(const TnpModel& a, const TnpModel& b) {
  std::vector<float> wa, wb;
  a.network().params().visit([&](const std::string&, const detail::Mat<float>& m) {
    wa.insert(wa.end(), m.data(), m.data() + m.size());
  });
  b.network().params().visit([&](const std::string&, const detail::Mat<float>& m) {
    wb.insert(wb.end(), m.data(), m.data() + m.size());
  });
  return wa.size() == wb.size() &&
         std::memcmp(wa.data(), wb.data(), wa.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("config validation") {
  TnpConfig c;
  c.validate();
  c.heads = 7;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = TnpConfig{};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidConfig);
  c = TnpConfig{};
  c.max_sequence = 1;
  CHECK_THROWS_AS(c.validate(), InsufficientData);
}

TEST_CASE("predict is invariant to context order, bitwise") {
  const auto model = untrained();
  const auto space = model.normalization().space;
  auto ctx = random_context(space, 9, 3);
  const auto targets = sample_space(space, 7, SampleMethod::uniform, 4);
  const auto base = model.predict(ctx, targets);
  auto rng = make_rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(ctx.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    TaskDataset p;
    for (auto i : perm) p.add(ctx.points[i], ctx.values[i]);
    CHECK(same_bits(model.predict(p, targets), base));
  }
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base.variance[i] > 0.0);
}

TEST_CASE("target causality holds bitwise in the autoregressive mask") {
  const auto model = untrained(2, 9);
  const auto& net = model.network();
  detail::SequenceLayout lay{4, 5};
  auto rng = make_rng(12);
  std::normal_distribution<float> g(0.0f, 1.0f);
  detail::Mat<float> tokens(lay.length(), 4);
  for (Eigen::Index r = 0; r < tokens.rows(); ++r)
    for (Eigen::Index c = 0; c < tokens.cols(); ++c) tokens(r, c) = g(rng);
  const auto mask = detail::autoregressive_mask(lay);
  const auto base = net.forward(tokens, mask, nullptr);
  for (Eigen::Index j = 1; j < lay.targets; ++j) {
    auto t2 = tokens;
    t2.row(lay.truth(j)).setConstant(3.0f);
    t2.row(lay.query(j)).setConstant(-2.0f);
    const auto out = net.forward(t2, mask, nullptr);
    for (Eigen::Index i = 0; i < j; ++i) {
      const auto r = lay.query(i);
      CHECK(std::memcmp(&out(r, 0), &base(r, 0), sizeof(float)) == 0);
      CHECK(std::memcmp(&out(r, 1), &base(r, 1), sizeof(float)) == 0);
    }
  }
  // Through the public API: each prediction depends on its own target only.
  const auto space = model.normalization().space;
  const auto ctx = random_context(space, 6, 1);
  auto targets = sample_space(space, 5, SampleMethod::uniform, 2);
  const auto before = model.predict(ctx, targets);
  targets[4] = Point{0.123, 0.456};
  const auto after = model.predict(ctx, targets);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(before.mean[i] == after.mean[i]);
    CHECK(before.variance[i] == after.variance[i]);
  }
}

TEST_CASE("analytic gradients match central differences on a miniature model") {
  detail::NetShape shape;
  shape.input = 3;
  shape.model = 8;
  shape.ff = 16;
  shape.heads = 2;
  shape.layers = 1;
  shape.embed_layers = 2;
  auto rng = make_rng(21);
  detail::Network<double> net(shape, detail::Params<double>::init(shape, rng));
  // one context token, one target (truth + query): three tokens
  const detail::SequenceLayout lay{1, 1};
  detail::Mat<double> tokens(3, 3);
  tokens << 0.2, 0.7, 1.0, 0.6, -0.4, 1.0, 0.6, 0.0, 0.0;
  const std::vector<double> y{-0.4};
  const auto mask = detail::autoregressive_mask(lay);

  auto loss_of = [&](detail::Network<double>& n) {
    const auto out = n.forward(tokens, mask, nullptr);
    return detail::sequence_nll<double>(out, lay, y, nullptr);
  };
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
  REQUIRE(ps.size() == gs.size());
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    // fourth-order central stencil keeps round-off well below the tolerance
    const double saved = *ps[k];
    const double h = 1e-4;
    auto at = [&](double off) {
      *ps[k] = saved + off;
      return loss_of(net);
    };
    const double fd = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    *ps[k] = saved;
    const double scale = std::max(std::abs(fd), std::abs(gs[k]));
    if (scale < 1e-7) continue;  // both essentially zero
    worst = std::max(worst, std::abs(fd - gs[k]) / scale);
    ++checked;
  }
  CHECK(checked > 100);
  CHECK(worst <= 1e-4);
}

TEST_CASE("Gaussian NLL closed form") {
  CHECK(gaussian_nll(1.5, 1.5, 1.0) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));
  double prev = gaussian_nll(0.0, 0.0, 1.0);
  for (double v : {0.5, 0.1, 0.01}) {
    const double cur = gaussian_nll(0.0, 0.0, v);
    CHECK(cur < prev);
    prev = cur;
  }
  const auto model = untrained();
  const auto space = model.normalization().space;
  CHECK(std::isfinite(nll(model, random_context(space, 5, 1), random_context(space, 4, 2))));
  CHECK_THROWS_AS(nll(model, random_context(space, 5, 1), TaskDataset{}), EmptyRequest);
}

TEST_CASE("shape errors and empty contexts") {
  const auto model = untrained();
  const std::vector<Point> bad{{0.1, 0.2, 0.3}};
  CHECK_THROWS_AS(model.predict(TaskDataset{}, bad), ShapeError);
  const std::vector<Point> ok{{0.1, 0.2}};
  const auto prior = model.predict(TaskDataset{}, ok);
  CHECK(prior.variance[0] > 0.0);
}

TEST_CASE("training is deterministic, lowers held-out NLL and checkpoints round-trip") {
  FamilyConfig fc;
  fc.kind = FamilyKind::random_features;
  fc.dims = 1;
  fc.n_train = 32;
  fc.n_val = 4;
  fc.n_test = 2;
  const auto fam = make_synthetic_family(fc, 3);
  const auto m0 = meta_train(fam, tiny_config(0), 2);
  const auto a = meta_train(fam, tiny_config(300), 2);
  const auto b = meta_train(fam, tiny_config(300), 2);
  CHECK(model_weights_equal(a, b));
  CHECK(a.loss_curve.size() == 300);
  for (double l : a.loss_curve) CHECK(std::isfinite(l));
  const double before = heldout_nll(m0, fam.val, 40, 7);
  const double after = heldout_nll(a, fam.val, 40, 7);
  CHECK(after <= 0.8 * before);

  const auto dir = fs::temp_directory_path() / "hlmbo_tnp_test";
  fs::create_directories(dir);
  const auto path = dir / "m.ckpt";
  save_model(a, path);
  const auto back = load_model(path);
  const auto ctx = random_context(fam.space, 6, 3);
  const auto q = sample_space(fam.space, 9, SampleMethod::uniform, 5);
  CHECK(same_bits(a.predict(ctx, q), back.predict(ctx, q)));
  CHECK(back.normalization().y_mean == a.normalization().y_mean);
  CHECK(file_digest(path) == file_digest(path));
  const std::vector<Point> wrong{{0.1, 0.2}};
  CHECK_THROWS_AS(back.predict(ctx, wrong), ShapeError);

  const auto size = fs::file_size(path);
  fs::copy_file(path, dir / "t.ckpt", fs::copy_options::overwrite_existing);
  fs::resize_file(dir / "t.ckpt", size / 2);
  CHECK_THROWS_AS(load_model(dir / "t.ckpt"), CheckpointError);
  {
    std::ofstream junk(dir / "j.ckpt", std::ios::binary);
    junk << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_model(dir / "j.ckpt"), CheckpointError);
  fs::remove_all(dir);
}

TEST_CASE("constant tasks: the posterior mean tracks the context mean") {
  const auto fam = constant_family(64, 4);
  auto cfg = tiny_config(600);
  const auto model = meta_train(fam, cfg, 1);
  auto rng = make_rng(5, 9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const double c = u(rng);
    TaskDataset ctx;
    for (auto& p : sample_space(fam.space, 1 + trial % 6, SampleMethod::uniform, trial)) ctx.add(p, c);
    const auto q = sample_space(fam.space, 5, SampleMethod::uniform, 100 + trial);
    const auto post = model.predict(ctx, q);
    for (double m : post.mean) worst = std::max(worst, std::abs(m - c));
  }
  CHECK(worst <= 0.05);

  // a repeated observation pins the prediction at that point
  const Point x0{0.3};
  const double y0 = 0.8;
  TaskDataset rep;
  for (int i = 0; i < 10; ++i) rep.add(x0, y0);
  const std::vector<Point> q{x0};
  const auto conditioned = model.predict(rep, q);
  const auto prior = model.predict(TaskDataset{}, q);
  CHECK(std::abs(conditioned.mean[0] - y0) <= 0.1);
  CHECK(conditioned.variance[0] < prior.variance[0]);
}
