#include "hlmbo/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------ config

void BenchConfig::validate() const {
  if (methods.empty()) throw ConfigError("at least one method is required");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (zeta_grid.empty()) throw ConfigError("zeta_grid must be nonempty");
  for (double z : zeta_grid)
    if (!(z >= 0.0)) throw ConfigError("zeta values must be >= 0");
  for (double a : accuracies)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("accuracies must lie in [0, 1]");
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("split must be train, val or test");
  if (jobs < 0) throw ConfigError("jobs must be >= 0");
  if (family.n_test == 0 || family.n_val == 0)
    throw ConfigError("family needs validation and test tasks");
  try {
    tnp.validate();
    session.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void to_json(json& j, const BenchConfig& c) {
  json methods = json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  json hyps = json::array();
  for (auto h : c.hypotheses) hyps.push_back(to_string(h));
  j = {{"family", c.family},
       {"family_seed", c.family_seed},
       {"tnp", c.tnp},
       {"train_seed", c.train_seed},
       {"checkpoint", c.checkpoint.string()},
       {"methods", methods},
       {"seeds", c.seeds},
       {"session", c.session},
       {"auto_zeta", c.auto_zeta},
       {"zeta_grid", c.zeta_grid},
       {"hypotheses", hyps},
       {"accuracies", c.accuracies},
       {"split", c.split},
       {"jobs", c.jobs},
       {"save_records", c.save_records}};
}

BenchConfig bench_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("bench config must be a JSON object");
  BenchConfig c;
  try {
    if (j.contains("family")) c.family = j["family"].get<FamilyConfig>();
    c.family_seed = j.value("family_seed", c.family_seed);
    if (j.contains("tnp")) c.tnp = j["tnp"].get<TnpConfig>();
    c.train_seed = j.value("train_seed", c.train_seed);
    c.checkpoint = j.value("checkpoint", c.checkpoint.string());
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("session")) c.session = j["session"].get<SessionConfig>();
    c.auto_zeta = j.value("auto_zeta", c.auto_zeta);
    if (j.contains("zeta_grid")) c.zeta_grid = j["zeta_grid"].get<std::vector<double>>();
    if (j.contains("hypotheses")) {
      c.hypotheses.clear();
      for (const auto& h : j["hypotheses"])
        c.hypotheses.push_back(hypothesis_kind_from_string(h.get<std::string>()));
    }
    if (j.contains("accuracies")) c.accuracies = j["accuracies"].get<std::vector<double>>();
    c.split = j.value("split", c.split);
    c.jobs = j.value("jobs", c.jobs);
    c.save_records = j.value("save_records", c.save_records);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("bad bench config: ") + e.what());
  }
  if (c.seeds.empty())
    for (std::uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
  c.validate();
  return c;
}

BenchConfig load_bench_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return bench_config_from_json(j);
}

BenchConfig desk_bench_config() {
  BenchConfig c;
  c.family.kind = FamilyKind::multimodal;
  c.family.dims = 2;
  c.family.n_train = 256;
  c.family.n_val = 8;
  c.family.n_test = 8;
  c.tnp.train_steps = 10000;
  c.tnp.max_sequence = 48;
  c.tnp.learning_rate = 5e-4;
  c.tnp.warmup_steps = 100;
  c.tnp.dataset_points = 512;
  c.session.explain_steps = false;
  for (std::uint64_t s = 0; s < 10; ++s) c.seeds.push_back(s);
  return c;
}

// ------------------------------------------------------------------ tables

std::vector<std::string> BenchTable::methods() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.method) == out.end()) out.push_back(r.method);
  return out;
}

std::vector<std::uint64_t> BenchTable::seeds(const std::string& method) const {
  std::set<std::uint64_t> s;
  for (const auto& r : rows)
    if (r.method == method) s.insert(r.seed);
  return {s.begin(), s.end()};
}

std::vector<double> BenchTable::trace(const std::string& method, std::uint64_t seed) const {
  std::vector<std::pair<int, double>> cells;
  for (const auto& r : rows)
    if (r.method == method && r.seed == seed) cells.emplace_back(r.step, r.regret);
  std::sort(cells.begin(), cells.end());
  std::vector<double> out;
  for (const auto& c : cells) out.push_back(c.second);
  return out;
}

std::vector<double> BenchTable::finals(const std::string& method) const {
  std::vector<double> out;
  for (auto s : seeds(method)) {
    const auto t = trace(method, s);
    if (!t.empty()) out.push_back(t.back());
  }
  return out;
}

void BenchTable::check_dense() const {
  const auto ms = methods();
  if (ms.empty()) throw RecordError("table is empty");
  std::set<std::uint64_t> all_seeds;
  int max_step = -1;
  for (const auto& r : rows) {
    all_seeds.insert(r.seed);
    max_step = std::max(max_step, r.step);
  }
  std::set<std::tuple<std::string, std::uint64_t, int>> cells;
  for (const auto& r : rows)
    if (!cells.insert({r.method, r.seed, r.step}).second)
      throw RecordError("duplicate cell for " + r.method + " seed " + std::to_string(r.seed));
  for (const auto& m : ms)
    for (auto s : all_seeds)
      for (int k = 0; k <= max_step; ++k)
        if (!cells.count({m, s, k}))
          throw RecordError("missing cell " + m + " seed " + std::to_string(s) + " step " +
                            std::to_string(k));
}

namespace {

std::string fmt(double v, int precision = 6) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

std::string fixed(double v, int digits) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_table_csv(const BenchTable& t, const fs::path& path) {
  std::ostringstream o;
  o << "method,seed,step,regret,wall_ms\n";
  for (const auto& r : t.rows)
    o << r.method << ',' << r.seed << ',' << r.step << ',' << fmt(r.regret, 17) << ','
      << fixed(r.wall_ms, 3) << '\n';
  write_text(path, o.str());
}

BenchTable read_table_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw RecordError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "method,seed,step,regret,wall_ms")
    throw RecordError(path.string() + ": unexpected CSV header");
  BenchTable t;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw RecordError(path.string() + ": bad row at line " + std::to_string(lineno));
    try {
      t.rows.push_back({f[0], std::stoull(f[1]), std::stoi(f[2]), std::stod(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      throw RecordError(path.string() + ": bad number at line " + std::to_string(lineno));
    }
  }
  return t;
}

// ------------------------------------------------------------------ stats

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<Summary> summarize(const BenchTable& t) {
  std::vector<Summary> out;
  for (const auto& m : t.methods()) {
    Summary s;
    s.method = m;
    std::vector<std::vector<double>> traces;
    std::size_t steps = 0;
    for (auto seed : t.seeds(m)) {
      traces.push_back(t.trace(m, seed));
      steps = std::max(steps, traces.back().size());
    }
    for (std::size_t k = 0; k < steps; ++k) {
      double sum = 0.0, sq = 0.0;
      int n = 0;
      for (const auto& tr : traces)
        if (k < tr.size()) {
          sum += tr[k];
          sq += tr[k] * tr[k];
          ++n;
        }
      const double mean = sum / n;
      s.mean.push_back(mean);
      s.std.push_back(std::sqrt(std::max(sq / n - mean * mean, 0.0)));
    }
    if (!s.mean.empty()) {
      s.final_mean = s.mean.back();
      s.final_std = s.std.back();
    }
    s.final_median = median(t.finals(m));
    out.push_back(std::move(s));
  }
  return out;
}

SignTest sign_test_less(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("sign test needs paired samples");
  SignTest r;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) ++r.wins;
    else if (a[i] > b[i]) ++r.losses;
    else ++r.ties;
  }
  const int n = r.wins + r.losses;
  double p = 0.0;
  for (int k = r.wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                  n * std::log(2.0));
  r.p_value = std::min(1.0, p);
  return r;
}

// ------------------------------------------------------------------ context

BenchContext::BenchContext(BenchConfig cfg, fs::path out_dir)
    : cfg_(std::move(cfg)), out_(std::move(out_dir)) {
  cfg_.validate();
  family_ = make_synthetic_family(cfg_.family, cfg_.family_seed);
}

fs::path BenchContext::checkpoint_path() const {
  return cfg_.checkpoint.is_absolute() ? cfg_.checkpoint : out_ / cfg_.checkpoint;
}

std::shared_ptr<const TnpModel> BenchContext::model() {
  if (!model_) {
    const auto path = checkpoint_path();
    if (!fs::exists(path))
      throw ConfigError("checkpoint " + path.string() + " not found; run `bench train` first");
    model_ = std::make_shared<const TnpModel>(load_model(path));
    if (model_->normalization().space.dims() != family_.space.dims())
      throw ConfigError("checkpoint dimensionality does not match the family");
  }
  return model_;
}

const std::vector<BlackBoxTask>& BenchContext::tasks(const std::string& split) const {
  if (split == "train") return family_.train;
  if (split == "val") return family_.val;
  if (split == "test") return family_.test;
  throw ConfigError("unknown split " + split);
}

SessionConfig BenchContext::session_template() const {
  SessionConfig s = cfg_.session;
  if (cfg_.auto_zeta) {
    const auto path = out_ / "best_zeta.json";
    if (fs::exists(path)) {
      std::ifstream in(path);
      try {
        s.ei.zeta = json::parse(in).at("zeta").get<double>();
      } catch (const std::exception& e) {
        throw ConfigError("unreadable " + path.string() + ": " + e.what());
      }
    }
  }
  return s;
}

BenchTable BenchContext::run(const std::vector<Variant>& variants, const std::string& split,
                             const std::string& label) {
  auto model = this->model();
  const auto& pool = tasks(split);
  const SessionConfig base = session_template();
  const std::string ref = checkpoint_path().string();

  struct Job {
    std::size_t variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (auto s : cfg_.seeds) jobs.push_back({v, s});
  std::vector<std::vector<BenchRow>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());

  const fs::path rec_dir = out_ / "runs" / label;
  if (cfg_.save_records) fs::create_directories(rec_dir);

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      const auto& var = variants[job.variant];
      try {
        const auto& task = pool[job.seed % pool.size()];
        SessionConfig cfg = base;
        cfg.method = var.method;
        if (var.adjust) var.adjust(cfg);
        cfg.seed = job.seed;
        cfg.task_id = task.id();
        cfg.model_ref = ref;
        const RunRecord rec = run_baseline(cfg.method, cfg, task, model);
        if (rec.phase != Phase::done)
          throw std::runtime_error("run ended in phase " + to_string(rec.phase));
        for (std::size_t k = 0; k < rec.trace.size(); ++k)
          results[i].push_back({var.name, job.seed, static_cast<int>(k), rec.trace[k],
                                k < rec.wall_ms.size() ? rec.wall_ms[k] : 0.0});
        if (cfg_.save_records)
          save_run(rec, rec_dir / (var.name + "_s" + std::to_string(job.seed) + ".json"));
      } catch (const std::exception& e) {
        errors[i] = var.name + " seed " + std::to_string(job.seed) + ": " + e.what();
      }
    }
  };
  unsigned n = cfg_.jobs > 0 ? static_cast<unsigned>(cfg_.jobs)
                             : std::max(1u, std::thread::hardware_concurrency());
  n = std::min<unsigned>(n, static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < n; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();

  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  BenchTable table;
  for (auto& r : results) table.rows.insert(table.rows.end(), r.begin(), r.end());
  table.check_dense();
  return table;
}

// ------------------------------------------------------------------ plots

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape_xml(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace

std::string regret_plot_svg(const std::vector<Summary>& s, const std::string& title) {
  const double W = 640, H = 400, L = 60, R = 160, T = 40, B = 50;
  std::size_t steps = 1;
  double ymax = 0.0;
  for (const auto& m : s) {
    steps = std::max(steps, m.mean.size());
    for (std::size_t k = 0; k < m.mean.size(); ++k) ymax = std::max(ymax, m.mean[k] + m.std[k]);
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const auto px = [&](double k) { return L + (W - L - R) * (steps > 1 ? k / (steps - 1) : 0.5); };
  const auto py = [&](double v) { return H - B - (H - T - B) * std::clamp(v / ymax, 0.0, 1.0); };

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape_xml(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = ymax * i / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
      << fixed(v, 2) << "</text>\n";
  }
  for (std::size_t k = 0; k < steps; ++k)
    o << "<text x=\"" << px(k) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << k
      << "</text>\n";
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\">evaluation</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\" text-anchor=\"middle\">simple regret</text>\n";

  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& m = s[i];
    const char* color = kPalette[i % std::size(kPalette)];
    if (m.mean.empty()) continue;
    o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" points=\"";
    for (std::size_t k = 0; k < m.mean.size(); ++k) o << px(k) << ',' << py(m.mean[k] + m.std[k]) << ' ';
    for (std::size_t k = m.mean.size(); k-- > 0;) o << px(k) << ',' << py(m.mean[k] - m.std[k]) << ' ';
    o << "\"/>\n";
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < m.mean.size(); ++k) o << px(k) << ',' << py(m.mean[k]) << ' ';
    o << "\"/>\n";
    const double ly = T + 18.0 * i + 10;
    o << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 32 << "\" y2=\""
      << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << W - R + 38 << "\" y=\"" << ly + 4 << "\">" << escape_xml(m.method)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string final_bar_svg(const std::vector<Summary>& s, const std::string& title) {
  const double W = 640, H = 400, L = 60, R = 20, T = 40, B = 60;
  double ymax = 0.0;
  for (const auto& m : s) ymax = std::max(ymax, m.final_mean + m.final_std);
  if (!(ymax > 0.0)) ymax = 1.0;
  const auto py = [&](double v) { return H - B - (H - T - B) * std::clamp(v / ymax, 0.0, 1.0); };
  const double slot = (W - L - R) / std::max<std::size_t>(s.size(), 1);

  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape_xml(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = ymax * i / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
      << fixed(v, 2) << "</text>\n";
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& m = s[i];
    const double x0 = L + slot * i + slot * 0.2, w = slot * 0.6, cx = x0 + w / 2;
    o << "<rect x=\"" << x0 << "\" y=\"" << py(m.final_mean) << "\" width=\"" << w
      << "\" height=\"" << H - B - py(m.final_mean) << "\" fill=\""
      << kPalette[i % std::size(kPalette)] << "\"/>\n";
    o << "<line x1=\"" << cx << "\" y1=\"" << py(m.final_mean - m.final_std) << "\" x2=\"" << cx
      << "\" y2=\"" << py(m.final_mean + m.final_std) << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << cx << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
      << escape_xml(m.method) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ------------------------------------------------------------------ commands

namespace {

void emit(BenchContext& ctx, const BenchTable& t, const std::string& label,
          const std::string& title) {
  const auto dir = ctx.out_dir();
  write_table_csv(t, dir / (label + "_regret.csv"));
  const auto s = summarize(t);
  write_text(dir / (label + "_regret.svg"), regret_plot_svg(s, title));
  write_text(dir / (label + "_final.svg"), final_bar_svg(s, title + " (final)"));
}

std::string zeta_name(double z) { return "zeta_" + fmt(z, 6); }

}  // namespace

TrainResult cmd_train(BenchContext& ctx) {
  const auto& cfg = ctx.config();
  fs::create_directories(ctx.out_dir());
  TrainResult r;
  r.checkpoint = ctx.checkpoint_path();
  r.loss_csv = r.checkpoint;
  r.loss_csv.replace_extension(".loss.csv");
  const TnpModel model = meta_train(ctx.family(), cfg.tnp, cfg.train_seed);
  if (r.checkpoint.has_parent_path()) fs::create_directories(r.checkpoint.parent_path());
  save_model(model, r.checkpoint);
  std::ostringstream o;
  o << "step,loss\n";
  for (std::size_t i = 0; i < model.loss_curve.size(); ++i)
    o << i << ',' << fmt(model.loss_curve[i], 9) << '\n';
  write_text(r.loss_csv, o.str());
  r.digest = file_digest(r.checkpoint);
  if (!model.loss_curve.empty()) {
    r.initial_loss = model.loss_curve.front();
    r.final_loss = model.loss_curve.back();
  }
  return r;
}

BenchTable cmd_compare(BenchContext& ctx) {
  std::vector<Variant> vs;
  for (auto m : ctx.config().methods) vs.push_back({to_string(m), m, nullptr});
  auto t = ctx.run(vs, ctx.config().split, "compare");
  emit(ctx, t, "compare", "Simple regret by method");
  return t;
}

BenchTable cmd_ablate_hypothesis(BenchContext& ctx) {
  std::vector<Variant> vs;
  for (auto h : ctx.config().hypotheses)
    vs.push_back({"hypothesis_" + to_string(h), Method::hlmbo_ei, [h](SessionConfig& c) {
                    c.preference.hypothesis = h;
                    c.preference.boxes.clear();
                  }});
  auto t = ctx.run(vs, ctx.config().split, "hypothesis");
  emit(ctx, t, "hypothesis", "Expert hypothesis ablation");
  return t;
}

BenchTable cmd_ablate_accuracy(BenchContext& ctx) {
  std::vector<Variant> vs;
  for (double a : ctx.config().accuracies)
    vs.push_back({"accuracy_" + fmt(100.0 * a, 4), Method::hlmbo_ei,
                  [a](SessionConfig& c) { c.preference.accuracy = a; }});
  auto t = ctx.run(vs, ctx.config().split, "accuracy");
  emit(ctx, t, "accuracy", "Expert accuracy ablation");
  return t;
}

double best_zeta(const BenchTable& sweep) {
  double best = std::nan(""), best_mean = std::numeric_limits<double>::infinity();
  for (const auto& s : summarize(sweep)) {
    if (s.method.rfind("zeta_", 0) != 0) continue;
    const double z = std::stod(s.method.substr(5));
    if (s.final_mean < best_mean || (s.final_mean == best_mean && z < best)) {
      best_mean = s.final_mean;
      best = z;
    }
  }
  if (std::isnan(best)) throw NothingToReport("sweep table has no zeta variants");
  return best;
}

BenchTable cmd_sweep_zeta(BenchContext& ctx) {
  std::vector<Variant> vs;
  for (double z : ctx.config().zeta_grid)
    vs.push_back({zeta_name(z), Method::hlmbo_ei, [z](SessionConfig& c) { c.ei.zeta = z; }});
  auto t = ctx.run(vs, "val", "zeta");
  emit(ctx, t, "zeta", "Exploration margin sweep (validation)");
  json means = json::object();
  for (const auto& s : summarize(t)) means[s.method] = s.final_mean;
  write_text(ctx.out_dir() / "best_zeta.json",
             json{{"zeta", best_zeta(t)}, {"split", "val"}, {"final_mean", means}}.dump(2) + "\n");
  return t;
}

fs::path cmd_report(const fs::path& dir) {
  std::vector<fs::path> csvs;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > 11 &&
          name.compare(name.size() - 11, 11, "_regret.csv") == 0)
        csvs.push_back(e.path());
    }
  if (csvs.empty()) throw NothingToReport("no *_regret.csv files in " + dir.string());
  std::sort(csvs.begin(), csvs.end());

  std::ostringstream md;
  md << "# Benchmark report\n";
  for (const auto& csv : csvs) {
    const auto label = csv.filename().string().substr(0, csv.filename().string().size() - 11);
    const auto t = read_table_csv(csv);
    t.check_dense();
    const auto s = summarize(t);
    write_text(dir / (label + "_regret.svg"), regret_plot_svg(s, label + ": simple regret"));
    write_text(dir / (label + "_final.svg"), final_bar_svg(s, label + ": final regret"));

    md << "\n## " << label << "\n\n";
    md << "| variant | seeds | final mean | final std | final median |\n";
    md << "|---|---|---|---|---|\n";
    for (const auto& m : s)
      md << "| " << m.method << " | " << t.seeds(m.method).size() << " | " << fixed(m.final_mean, 4)
         << " | " << fixed(m.final_std, 4) << " | " << fixed(m.final_median, 4) << " |\n";
    if (s.size() > 1) {
      const auto& ref = s.front().method;
      md << "\nPaired sign tests (" << ref << " lower final regret):\n\n";
      for (std::size_t i = 1; i < s.size(); ++i) {
        const auto st = sign_test_less(t.finals(ref), t.finals(s[i].method));
        md << "- vs " << s[i].method << ": " << st.wins << " wins, " << st.losses << " losses, "
           << st.ties << " ties, p = " << fixed(st.p_value, 4) << "\n";
      }
    }
    md << "\n![" << label << " regret](" << label << "_regret.svg)\n";
    md << "![" << label << " final](" << label << "_final.svg)\n";
  }
  const auto path = dir / "report.md";
  write_text(path, md.str());
  return path;
}

}  // namespace hlmbo
