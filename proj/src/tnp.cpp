#include "hlmbo/tnp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "hlmbo/detail/hash.hpp"
#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;
using detail::fnv1a;
using detail::hex64;
using detail::Mat;

namespace {

constexpr char kMagic[8] = {'H', 'L', 'M', 'B', 'O', 'T', 'N', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

detail::NetShape shape_of(const TnpConfig& c, std::size_t dims) {
  detail::NetShape s;
  s.input = static_cast<int>(dims) + 2;
  s.model = c.model_dim;
  s.ff = c.ff_dim;
  s.heads = c.heads;
  s.layers = c.transformer_layers;
  s.embed_layers = c.embed_layers;
  return s;
}

}  // namespace

void TnpConfig::validate() const {
  if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
    throw InvalidConfig("model_dim must be a positive multiple of heads");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw InvalidConfig("dropout must lie in [0, 1)");
  if (dropout != 0.0)
    throw InvalidConfig("only dropout = 0 is supported");
  if (embed_layers < 1 || transformer_layers < 1 || ff_dim < 1)
    throw InvalidConfig("layer counts and ff_dim must be positive");
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
  if (max_sequence < 2) throw InsufficientData("max_sequence must be >= 2");
  if (train_steps < 0 || batch_tasks < 1 || dataset_points < 2)
    throw InvalidConfig("train_steps >= 0, batch_tasks >= 1, dataset_points >= 2");
  if (!(local_fraction >= 0.0 && local_fraction <= 1.0))
    throw InvalidConfig("local_fraction must lie in [0, 1]");
}

void to_json(json& j, const TnpConfig& c) {
  j = {{"model_dim", c.model_dim},
       {"embed_layers", c.embed_layers},
       {"ff_dim", c.ff_dim},
       {"heads", c.heads},
       {"transformer_layers", c.transformer_layers},
       {"dropout", c.dropout},
       {"learning_rate", c.learning_rate},
       {"warmup_steps", c.warmup_steps},
       {"grad_clip", c.grad_clip},
       {"max_sequence", c.max_sequence},
       {"train_steps", c.train_steps},
       {"batch_tasks", c.batch_tasks},
       {"dataset_points", c.dataset_points},
       {"local_fraction", c.local_fraction}};
}

void from_json(const json& j, TnpConfig& c) {
  const TnpConfig d;
  c.model_dim = j.value("model_dim", d.model_dim);
  c.embed_layers = j.value("embed_layers", d.embed_layers);
  c.ff_dim = j.value("ff_dim", d.ff_dim);
  c.heads = j.value("heads", d.heads);
  c.transformer_layers = j.value("transformer_layers", d.transformer_layers);
  c.dropout = j.value("dropout", d.dropout);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.max_sequence = j.value("max_sequence", d.max_sequence);
  c.train_steps = j.value("train_steps", d.train_steps);
  c.batch_tasks = j.value("batch_tasks", d.batch_tasks);
  c.dataset_points = j.value("dataset_points", d.dataset_points);
  c.local_fraction = j.value("local_fraction", d.local_fraction);
  c.log_every = j.value("log_every", d.log_every);
}

// ------------------------------------------------------------------ TnpModel

TnpModel::TnpModel(TnpConfig config, Normalization norm,
                   detail::Params<float> weights)
    : config_(std::move(config)),
      norm_(std::move(norm)),
      net_(shape_of(config_, norm_.space.dims()), std::move(weights)) {}

Mat<float> TnpModel::token(std::span<const double> x, const double* y) const {
  if (x.size() != input_dims())
    throw ShapeError("point has " + std::to_string(x.size()) +
                     " coordinates, model expects " +
                     std::to_string(input_dims()));
  const std::size_t d = x.size();
  Mat<float> t(1, d + 2);
  for (std::size_t j = 0; j < d; ++j)
    t(0, j) = static_cast<float>((x[j] - norm_.space.lower()[j]) /
                                 norm_.space.range(j));
  t(0, d) = y ? static_cast<float>((*y - norm_.y_mean) / norm_.y_std) : 0.0f;
  t(0, d + 1) = y ? 1.0f : 0.0f;
  return t;
}

std::vector<std::size_t> canonical_order(const TaskDataset& context) {
  std::vector<std::size_t> idx(context.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = context.points[a];
    const auto& pb = context.points[b];
    if (pa != pb)
      return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
    return context.values[a] < context.values[b];
  });
  return idx;
}

ConditionedTnp TnpModel::condition(const TaskDataset& context) const {
  if (context.points.size() != context.values.size())
    throw ShapeError("context points/values length mismatch");
  const auto order = canonical_order(context);
  Mat<float> tokens(static_cast<Eigen::Index>(order.size()),
                    static_cast<Eigen::Index>(input_dims() + 2));
  for (std::size_t r = 0; r < order.size(); ++r)
    tokens.row(r) = token(context.points[order[r]], &context.values[order[r]]);
  return ConditionedTnp(*this, net_.encode_context(tokens));
}

Posterior TnpModel::predict(const TaskDataset& context,
                            std::span<const Point> targets) const {
  return condition(context).predict(targets);
}

std::pair<double, double> ConditionedTnp::predict_one(
    std::span<const double> x) const {
  const auto raw = model_->network().query(model_->token(x, nullptr), ctx_);
  const auto [mu, var] = detail::gaussian_head(raw[0], raw[1]);
  const auto& n = model_->normalization();
  return {n.y_mean + n.y_std * static_cast<double>(mu),
          n.y_std * n.y_std * static_cast<double>(var)};
}

Posterior ConditionedTnp::predict(std::span<const Point> targets) const {
  if (targets.empty()) throw EmptyRequest("predict requires at least one target");
  Posterior post;
  post.mean.reserve(targets.size());
  post.variance.reserve(targets.size());
  for (const auto& x : targets) {
    const auto [m, v] = predict_one(x);
    post.mean.push_back(m);
    post.variance.push_back(v);
  }
  return post;
}

// ---------------------------------------------------------------------- nll

double gaussian_nll(double y, double mean, double variance) {
  const double r = y - mean;
  return 0.5 * (std::log(2.0 * std::numbers::pi * variance) + r * r / variance);
}

namespace {

struct Sequence {
  Mat<float> tokens;
  detail::SequenceLayout layout;
  std::vector<float> targets;  // standardized
};

Sequence build_sequence(const TnpModel& model,
                        std::span<const Point> ctx_x, std::span<const double> ctx_y,
                        std::span<const Point> tgt_x, std::span<const double> tgt_y) {
  Sequence s;
  s.layout.context = static_cast<Eigen::Index>(ctx_x.size());
  s.layout.targets = static_cast<Eigen::Index>(tgt_x.size());
  const auto width = static_cast<Eigen::Index>(model.input_dims() + 2);
  s.tokens.resize(s.layout.length(), width);
  for (std::size_t i = 0; i < ctx_x.size(); ++i)
    s.tokens.row(i) = model.token(ctx_x[i], &ctx_y[i]);
  const auto& n = model.normalization();
  for (std::size_t i = 0; i < tgt_x.size(); ++i) {
    s.tokens.row(s.layout.truth(i)) = model.token(tgt_x[i], &tgt_y[i]);
    s.tokens.row(s.layout.query(i)) = model.token(tgt_x[i], nullptr);
    s.targets.push_back(static_cast<float>((tgt_y[i] - n.y_mean) / n.y_std));
  }
  return s;
}

}  // namespace

double nll(const TnpModel& model, const TaskDataset& context,
           const TaskDataset& targets) {
  if (targets.empty()) throw EmptyRequest("nll requires at least one target");
  if (targets.points.size() != targets.values.size() ||
      context.points.size() != context.values.size())
    throw ShapeError("dataset points/values length mismatch");
  const auto order = canonical_order(context);
  std::vector<Point> cx;
  std::vector<double> cy;
  for (auto i : order) {
    cx.push_back(context.points[i]);
    cy.push_back(context.values[i]);
  }
  const auto seq = build_sequence(model, cx, cy, targets.points, targets.values);
  const auto mask = detail::autoregressive_mask(seq.layout);
  const Mat<float> out = model.network().forward(seq.tokens, mask, nullptr);
  const auto& n = model.normalization();
  double total = 0.0;
  for (Eigen::Index i = 0; i < seq.layout.targets; ++i) {
    const auto r = seq.layout.query(i);
    const auto [mu, var] = detail::gaussian_head(out(r, 0), out(r, 1));
    total += gaussian_nll(targets.values[i],
                          n.y_mean + n.y_std * static_cast<double>(mu),
                          n.y_std * n.y_std * static_cast<double>(var));
  }
  return total / static_cast<double>(seq.layout.targets);
}

// ----------------------------------------------------------------- training

TaskDataset make_task_dataset(const BlackBoxTask& task, std::size_t points,
                              std::uint64_t seed) {
  TaskDataset d;
  d.task_id = task.id();
  d.points = sample_space(task.space(), points, SampleMethod::latin_hypercube, seed);
  for (const auto& x : d.points) d.values.push_back(task.evaluate(x));
  return d;
}

namespace {

struct Adam {
  detail::Params<float> m, v;
  int t = 0;
};

double lr_at(const TnpConfig& c, int step) {
  if (step < c.warmup_steps)
    return c.learning_rate * (step + 1) / static_cast<double>(c.warmup_steps);
  const double span = std::max(1, c.train_steps - c.warmup_steps);
  const double prog = (step - c.warmup_steps) / span;
  return c.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
}

void adam_step(detail::Params<float>& p, detail::Params<float>& g, Adam& st,
               double lr, double clip) {
  double sq = 0.0;
  g.visit([&](const std::string&, const Mat<float>& m) {
    sq += m.cast<double>().squaredNorm();
  });
  const double norm = std::sqrt(sq);
  const float factor =
      (clip > 0.0 && norm > clip) ? static_cast<float>(clip / norm) : 1.0f;
  ++st.t;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const float c1 = static_cast<float>(1.0 - std::pow(b1, st.t));
  const float c2 = static_cast<float>(1.0 - std::pow(b2, st.t));
  std::vector<Mat<float>*> ps, gs, ms, vs;
  p.visit([&](const std::string&, Mat<float>& m) { ps.push_back(&m); });
  g.visit([&](const std::string&, Mat<float>& m) { gs.push_back(&m); });
  st.m.visit([&](const std::string&, Mat<float>& m) { ms.push_back(&m); });
  st.v.visit([&](const std::string&, Mat<float>& m) { vs.push_back(&m); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto gr = (gs[i]->array() * factor).eval();
    ms[i]->array() = float(b1) * ms[i]->array() + float(1 - b1) * gr;
    vs[i]->array() = float(b2) * vs[i]->array() + float(1 - b2) * gr.square();
    ps[i]->array() -= float(lr) * (ms[i]->array() / c1) /
                      ((vs[i]->array() / c2).sqrt() + float(eps));
  }
}

bool all_finite(const detail::Params<float>& p) {
  bool ok = true;
  p.visit([&](const std::string&, const Mat<float>& m) {
    ok = ok && m.allFinite();
  });
  return ok;
}

}  // namespace

TnpModel meta_train(const TaskFamily& family, const TnpConfig& cfg,
                    std::uint64_t seed, const TrainOptions& opts) {
  cfg.validate();
  if (family.train.empty()) throw InsufficientData("family has no training tasks");
  const std::size_t e_n =
      std::min<std::size_t>(cfg.max_sequence, cfg.dataset_points);
  if (e_n < 2) throw InsufficientData("training sequences need >= 2 points");

  std::vector<TaskDataset> data;
  for (std::size_t i = 0; i < family.train.size(); ++i)
    data.push_back(make_task_dataset(family.train[i], cfg.dataset_points,
                                     seed * 7919 + i + 1));

  Normalization norm{family.space, 0.0, 1.0};
  {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& d : data)
      for (double y : d.values) {
        sum += y;
        sq += y * y;
        ++n;
      }
    norm.y_mean = sum / n;
    const double var = std::max(sq / n - norm.y_mean * norm.y_mean, 0.0);
    norm.y_std = var > 1e-24 ? std::sqrt(var) : 1.0;
  }

  auto rng = make_rng(seed, 0x7e9);
  const auto shape = shape_of(cfg, family.space.dims());
  TnpModel model(cfg, norm, detail::Params<float>::zeros(shape));
  detail::Network<float> net(shape, detail::Params<float>::init(shape, rng));
  Adam adam{detail::Params<float>::zeros(shape), detail::Params<float>::zeros(shape)};
  std::vector<double> curve;
  curve.reserve(cfg.train_steps);

  std::vector<std::size_t> perm(cfg.dataset_points);
  for (int step = 0; step < cfg.train_steps; ++step) {
    auto grad = detail::Params<float>::zeros(shape);
    double loss = 0.0;
    const float w = 1.0f / static_cast<float>(cfg.batch_tasks);
    for (int b = 0; b < cfg.batch_tasks; ++b) {
      const std::size_t n =
          std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng);
      const auto& d = data[n];
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = 0; i < e_n; ++i)
        std::swap(perm[i], perm[std::uniform_int_distribution<std::size_t>(
                               i, perm.size() - 1)(rng)]);
      std::vector<Point> xs(e_n);
      std::vector<double> ys(e_n);
      for (std::size_t i = 0; i < e_n; ++i) {
        xs[i] = d.points[perm[i]];
        ys[i] = d.values[perm[i]];
      }
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.local_fraction) {
        // Optimization traces cluster around promising points; replace a
        // random share of the sequence with draws around one anchor.
        const Point anchor = family.space.to_unit(xs[0]);
        const double scale =
            std::exp(std::uniform_real_distribution<double>(std::log(0.005), std::log(0.2))(rng));
        const double share = std::uniform_real_distribution<double>(0.25, 1.0)(rng);
        std::normal_distribution<double> gauss(0.0, scale);
        for (std::size_t i = 1; i < e_n; ++i) {
          if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= share) continue;
          Point u = anchor;
          for (double& v : u) v = std::clamp(v + gauss(rng), 0.0, 1.0);
          xs[i] = family.space.from_unit(u);
          ys[i] = family.train[n].evaluate(xs[i]);
        }
        for (std::size_t i = e_n - 1; i > 0; --i) {
          const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(rng);
          std::swap(xs[i], xs[j]);
          std::swap(ys[i], ys[j]);
        }
      }
      const std::size_t m =
          std::uniform_int_distribution<std::size_t>(0, e_n - 1)(rng);
      std::vector<Point> cx, tx;
      std::vector<double> cy, ty;
      for (std::size_t i = 0; i < e_n; ++i) {
        (i < m ? cx : tx).push_back(xs[i]);
        (i < m ? cy : ty).push_back(ys[i]);
      }
      const auto seq = build_sequence(model, cx, cy, tx, ty);
      const auto mask = detail::autoregressive_mask(seq.layout);
      detail::ForwardCache<float> cache;
      const Mat<float> out = net.forward(seq.tokens, mask, &cache);
      Mat<float> dout = Mat<float>::Zero(out.rows(), out.cols());
      loss += w * detail::sequence_nll(out, seq.layout, seq.targets, &dout, w);
      net.backward(cache, dout, grad);
    }
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("non-finite loss at step " + std::to_string(step) +
                             " (lr " + std::to_string(lr_at(cfg, step)) +
                             ", last finite loss " +
                             (curve.empty() ? std::string("n/a")
                                            : std::to_string(curve.back())) +
                             ")");
    }
    adam_step(net.params(), grad, adam, lr_at(cfg, step), cfg.grad_clip);
    if (!all_finite(net.params()))
      throw TrainingDiverged("non-finite weights after step " + std::to_string(step));
    curve.push_back(loss);
    if (opts.on_step) opts.on_step(step, loss);
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.train_steps))
      std::cerr << "[train] step " << step << " loss " << loss << " lr "
                << lr_at(cfg, step) << "\n";
  }
  TnpModel trained(cfg, norm, net.params());
  trained.loss_curve = std::move(curve);
  return trained;
}

double heldout_nll(const TnpModel& model, std::span<const BlackBoxTask> tasks,
                   int sequences, std::uint64_t seed) {
  if (tasks.empty() || sequences <= 0) throw EmptyRequest("heldout_nll needs tasks");
  auto rng = make_rng(seed, 0x4e11);
  const std::size_t e_n = static_cast<std::size_t>(model.config().max_sequence);
  double total = 0.0;
  for (int s = 0; s < sequences; ++s) {
    const auto& task = tasks[s % tasks.size()];
    auto pts = sample_space(task.space(), e_n, SampleMethod::uniform, rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, e_n - 1)(rng);
    TaskDataset ctx, tgt;
    for (std::size_t i = 0; i < e_n; ++i)
      (i < m ? ctx : tgt).add(pts[i], task.evaluate(pts[i]));
    total += nll(model, ctx, tgt);
  }
  return total / sequences;
}

// --------------------------------------------------------------- checkpoints

void save_model(const TnpModel& model, const std::filesystem::path& path) {
  std::vector<float> blob;
  json tensors = json::array();
  model.network().params().visit([&](const std::string& name, const Mat<float>& m) {
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"offset", blob.size()}});
    blob.insert(blob.end(), m.data(), m.data() + m.size());
  });
  const auto* bytes = reinterpret_cast<const char*>(blob.data());
  const std::size_t nbytes = blob.size() * sizeof(float);
  const auto& n = model.normalization();
  json header = {{"format_version", kCheckpointVersion},
                 {"config", model.config()},
                 {"input_dims", model.input_dims()},
                 {"normalization",
                  {{"space", n.space}, {"y_mean", n.y_mean}, {"y_std", n.y_std}}},
                 {"dtype", "float32"},
                 {"layout", "row-major"},
                 {"tensors", tensors},
                 {"blob_bytes", nbytes},
                 {"blob_fnv1a", hex64(fnv1a(bytes, nbytes))}};
  const std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  const std::uint32_t ver = kCheckpointVersion;
  const std::uint64_t hlen = hs.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&ver), sizeof ver);
  out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(bytes, static_cast<std::streamsize>(nbytes));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

TnpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t pre = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (raw.size() < pre || std::memcmp(raw.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint file: '" + path.string() + "'");
  std::uint32_t ver = 0;
  std::uint64_t hlen = 0;
  std::memcpy(&ver, raw.data() + sizeof kMagic, sizeof ver);
  std::memcpy(&hlen, raw.data() + sizeof kMagic + sizeof ver, sizeof hlen);
  if (ver != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(ver) +
                          " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  if (raw.size() < pre + hlen) throw CheckpointError("checkpoint header truncated");
  json header;
  try {
    header = json::parse(raw.substr(pre, hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  try {
    const auto nbytes = header.at("blob_bytes").get<std::size_t>();
    if (raw.size() != pre + hlen + nbytes)
      throw CheckpointError("checkpoint blob truncated or padded");
    const char* bytes = raw.data() + pre + hlen;
    if (hex64(fnv1a(bytes, nbytes)) != header.at("blob_fnv1a").get<std::string>())
      throw CheckpointError("checkpoint blob digest mismatch");
    const auto cfg = header.at("config").get<TnpConfig>();
    Normalization norm;
    norm.space = header.at("normalization").at("space").get<SearchSpace>();
    norm.y_mean = header["normalization"].at("y_mean").get<double>();
    norm.y_std = header["normalization"].at("y_std").get<double>();
    if (header.at("input_dims").get<std::size_t>() != norm.space.dims())
      throw CheckpointError("checkpoint input_dims disagrees with its space");
    auto params = detail::Params<float>::zeros(shape_of(cfg, norm.space.dims()));
    const auto& tensors = header.at("tensors");
    std::size_t i = 0;
    params.visit([&](const std::string& name, Mat<float>& m) {
      if (i >= tensors.size()) throw CheckpointError("checkpoint is missing tensors");
      const auto& t = tensors[i++];
      const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
      if (t.at("name").get<std::string>() != name || shape.size() != 2 ||
          shape[0] != m.rows() || shape[1] != m.cols())
        throw CheckpointError("tensor '" + name + "' does not match the architecture");
      const auto off = t.at("offset").get<std::size_t>();
      if ((off + m.size()) * sizeof(float) > nbytes)
        throw CheckpointError("tensor '" + name + "' exceeds the blob");
      std::memcpy(m.data(), bytes + off * sizeof(float), m.size() * sizeof(float));
    });
    if (i != tensors.size()) throw CheckpointError("checkpoint has extra tensors");
    return TnpModel(cfg, norm, std::move(params));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const InvalidSpace& e) {
    throw CheckpointError(std::string("corrupt checkpoint space: ") + e.what());
  }
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read '" + path.string() + "'");
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(raw.data(), raw.size()));
}

}  // namespace hlmbo
