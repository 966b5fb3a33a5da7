#include "hlmbo/orchestrator.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>

#include "hlmbo/detail/hash.hpp"
#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;

// ------------------------------------------------------------------- enums

std::string to_string(Method m) {
  switch (m) {
    case Method::hlmbo_ei: return "hlmbo_ei";
    case Method::tnp_ei: return "tnp_ei";
    case Method::mcoexbo_ucb: return "mcoexbo_ucb";
  }
  return "hlmbo_ei";
}

Method method_from_string(const std::string& s) {
  if (s == "hlmbo_ei" || s == "hlmbo") return Method::hlmbo_ei;
  if (s == "tnp_ei") return Method::tnp_ei;
  if (s == "mcoexbo_ucb" || s == "mcoexbo") return Method::mcoexbo_ucb;
  throw InvalidConfig("unknown method '" + s + "'");
}

std::string to_string(ExpertMode m) {
  return m == ExpertMode::simulated ? "simulated" : "interactive";
}

ExpertMode expert_mode_from_string(const std::string& s) {
  if (s == "simulated") return ExpertMode::simulated;
  if (s == "interactive") return ExpertMode::interactive;
  throw InvalidConfig("unknown expert mode '" + s + "'");
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::eliciting_preferences: return "eliciting_preferences";
    case Phase::awaiting_choice: return "awaiting_choice";
    case Phase::evaluating: return "evaluating";
    case Phase::done: return "done";
    case Phase::aborted: return "aborted";
  }
  return "done";
}

Phase phase_from_string(const std::string& s) {
  for (auto p : {Phase::eliciting_preferences, Phase::awaiting_choice,
                 Phase::evaluating, Phase::done, Phase::aborted})
    if (to_string(p) == s) return p;
  throw RecordError("unknown phase '" + s + "'");
}

bool uses_preferences(Method m) { return m != Method::tnp_ei; }

// ------------------------------------------------------------------- config

void SessionConfig::validate() const {
  if (budget < 1) throw InvalidConfig("budget B must be >= 1");
  if (initial < 1) throw InvalidConfig("initial samples I must be >= 1");
  sched.validate();
  ei.validate();
  if (!(sigma_pref >= 0.0)) throw InvalidConfig("sigma_pref must be >= 0");
  if (uses_preferences(method) && preference.pairs < 1)
    throw InvalidConfig("preference pairs M must be >= 1");
  if (preference.accuracy && !(*preference.accuracy >= 0.0 && *preference.accuracy <= 1.0))
    throw InvalidConfig("label accuracy must lie in [0, 1]");
  if (search.candidates < 1 || search.top < 1 || search.iterations < 0)
    throw InvalidConfig("invalid acquisition search settings");
}

void to_json(json& j, const SessionConfig& c) {
  json boxes = json::array();
  for (const auto& b : c.preference.boxes) boxes.push_back(b);
  j = {{"task_id", c.task_id},
       {"model_ref", c.model_ref},
       {"method", to_string(c.method)},
       {"preference",
        {{"pairs", c.preference.pairs},
         {"hypothesis", to_string(c.preference.hypothesis)},
         {"boxes", boxes},
         {"slices", c.preference.slices},
         {"points_per_slice", c.preference.points_per_slice},
         {"accuracy", c.preference.accuracy ? json(*c.preference.accuracy) : json(nullptr)},
         {"model", c.preference.model}}},
       {"budget", c.budget},
       {"initial", c.initial},
       {"gamma", c.sched.gamma},
       {"zeta", c.ei.zeta},
       {"search",
        {{"candidates", c.search.candidates},
         {"top", c.search.top},
         {"iterations", c.search.iterations},
         {"initial_step", c.search.initial_step}}},
       {"explain",
        {{"enabled", c.explain_steps},
         {"shap_coalitions", c.explain.shap_coalitions},
         {"lime_perturbations", c.explain.lime.n_perturb},
         {"lime_kernel_width", c.explain.lime.kernel_width},
         {"lime_sparsity", c.explain.lime.sparsity}}},
       {"mode", to_string(c.mode)},
       {"sigma_pref", c.sigma_pref},
       {"seed", c.seed}};
}

void from_json(const json& j, SessionConfig& c) {
  const SessionConfig d;
  try {
    c.task_id = j.value("task_id", d.task_id);
    c.model_ref = j.value("model_ref", d.model_ref);
    c.method = method_from_string(j.value("method", to_string(d.method)));
    if (j.contains("preference")) {
      const auto& p = j["preference"];
      c.preference.pairs = p.value("pairs", d.preference.pairs);
      c.preference.hypothesis = hypothesis_kind_from_string(
          p.value("hypothesis", to_string(d.preference.hypothesis)));
      c.preference.boxes.clear();
      if (p.contains("boxes"))
        for (const auto& b : p["boxes"]) c.preference.boxes.push_back(b.get<SearchSpace>());
      c.preference.slices = p.value("slices", d.preference.slices);
      c.preference.points_per_slice = p.value("points_per_slice", d.preference.points_per_slice);
      c.preference.accuracy.reset();
      if (p.contains("accuracy") && !p["accuracy"].is_null())
        c.preference.accuracy = p["accuracy"].get<double>();
      if (p.contains("model")) c.preference.model = p["model"].get<PreferenceConfig>();
    }
    c.budget = j.value("budget", d.budget);
    c.initial = j.value("initial", d.initial);
    c.sched.gamma = j.value("gamma", d.sched.gamma);
    c.ei.zeta = j.value("zeta", d.ei.zeta);
    if (j.contains("search")) {
      const auto& s = j["search"];
      c.search.candidates = s.value("candidates", d.search.candidates);
      c.search.top = s.value("top", d.search.top);
      c.search.iterations = s.value("iterations", d.search.iterations);
      c.search.initial_step = s.value("initial_step", d.search.initial_step);
    }
    if (j.contains("explain")) {
      const auto& e = j["explain"];
      c.explain_steps = e.value("enabled", d.explain_steps);
      c.explain.shap_coalitions = e.value("shap_coalitions", d.explain.shap_coalitions);
      c.explain.lime.n_perturb = e.value("lime_perturbations", d.explain.lime.n_perturb);
      c.explain.lime.kernel_width = e.value("lime_kernel_width", d.explain.lime.kernel_width);
      c.explain.lime.sparsity = e.value("lime_sparsity", d.explain.lime.sparsity);
    }
    c.mode = expert_mode_from_string(j.value("mode", to_string(d.mode)));
    c.sigma_pref = j.value("sigma_pref", d.sigma_pref);
    c.seed = j.value("seed", d.seed);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("bad session config: ") + e.what());
  }
}

// ------------------------------------------------------------------ helpers

namespace {

std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  auto r = make_rng(seed, stream);
  return r();
}

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kPairStream = 2;
constexpr std::uint64_t kLabelStream = 3;
constexpr std::uint64_t kChoiceStream = 4;
constexpr std::uint64_t kHypothesisStream = 5;
constexpr std::uint64_t kProposeStream = 100;
constexpr std::uint64_t kExplainStream = 1000;
constexpr std::uint64_t kHeatmapStream = 5000;

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

Hypothesis session_hypothesis(const SessionConfig& cfg, const BlackBoxTask& task) {
  if (!cfg.preference.boxes.empty()) return Hypothesis(task.space(), cfg.preference.boxes);
  return make_hypothesis(cfg.preference.hypothesis, task, cfg.preference.slices,
                         cfg.preference.points_per_slice,
                         derive(cfg.seed, kHypothesisStream));
}

}  // namespace

// ------------------------------------------------------------------ session

Session::Session(SessionConfig cfg, BlackBoxTask task, std::shared_ptr<const TnpModel> model)
    : cfg_(std::move(cfg)), task_(std::move(task)), model_(std::move(model)) {
  cfg_.validate();
  if (!model_) throw InvalidConfig("session needs a trained model");
  if (model_->input_dims() != task_.space().dims())
    throw ShapeError("model and task dimensionality differ");
  started_ = now_iso();
  context_.task_id = task_.id();
  initial_.task_id = task_.id();
  auto rng = make_rng(cfg_.seed, kInitStream);
  for (const auto& x : sample_space(task_.space(), static_cast<std::size_t>(cfg_.initial),
                                    SampleMethod::latin_hypercube, rng)) {
    const double y = evaluate(x);
    initial_.add(x, y);
  }
  if (uses_preferences(cfg_.method)) {
    pending_ = sample_pref_pairs(task_.space(), session_hypothesis(cfg_, task_),
                                 cfg_.preference.pairs, derive(cfg_.seed, kPairStream));
    phase_ = Phase::eliciting_preferences;
  } else {
    phase_ = Phase::evaluating;
    prepare_next();
  }
}

double Session::evaluate(std::span<const double> x) {
  const auto t0 = std::chrono::steady_clock::now();
  const double y = task_.evaluate(x);
  ++evaluations_;
  context_.add(Point(x.begin(), x.end()), y);
  double regret = std::numeric_limits<double>::quiet_NaN();
  if (task_.known_optimum()) {
    const double best = *std::max_element(context_.values.begin(), context_.values.end());
    regret = task_.known_optimum()->value - best;
  }
  trace_.push_back(regret);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  wall_.push_back((wall_.empty() ? 0.0 : wall_.back()) + ms);
  return y;
}

const PreferenceModel* Session::preference_model() const {
  return pref_ ? &*pref_ : nullptr;
}

void Session::submit_labels(std::span<const int> ys, const std::string& source) {
  if (phase_ != Phase::eliciting_preferences)
    throw PhaseError("preference labels are only accepted while eliciting");
  if (labels_.size() + ys.size() > pending_.size())
    throw BadRequest("more labels than pending preference pairs");
  for (int y : ys)
    if (y != 0 && y != 1) throw BadRequest("preference labels must be 0 or 1");
  for (int y : ys) {
    const auto& [x1, x2] = pending_[labels_.size()];
    labels_.pairs.push_back({x1, x2, y, source});
  }
  if (labels_.size() == pending_.size()) {
    fit_preferences();
    phase_ = Phase::evaluating;
    prepare_next();
  }
}

void Session::elicit(const ChoiceOracle& oracle) {
  if (phase_ != Phase::eliciting_preferences)
    throw PhaseError("preference labels are only accepted while eliciting");
  while (labels_.size() < pending_.size()) {
    const auto& [x1, x2] = pending_[labels_.size()];
    const auto c = oracle(x1, x2);
    if (!c) {
      labels_.aborted = true;
      abort();
      return;
    }
    const int y = *c == Choice::first ? 1 : 0;
    const std::string source = cfg_.mode == ExpertMode::simulated ? "simulated" : "human";
    submit_labels(std::span<const int>(&y, 1), source);
  }
}

void Session::fit_preferences() {
  pref_ = fit_preference_model(augment_skew(labels_), task_.space(), cfg_.preference.model);
}

const CandidatePair& Session::current_pair() const {
  if (!pair_ || phase_ != Phase::awaiting_choice)
    throw PhaseError("no candidate pair is awaiting a choice");
  return *pair_;
}

Session::Proposal Session::next_proposal() const {
  DecaySchedule sched = cfg_.sched;
  sched.t = step();
  const auto form = cfg_.method == Method::mcoexbo_ucb ? AcquisitionForm::ucb
                                                       : AcquisitionForm::ei;
  Proposal p;
  p.pair = propose_pair(*model_, preference_model(), context_, task_.space(), sched, cfg_.ei,
                        cfg_.search, derive(cfg_.seed, kProposeStream + step()), form);
  if (cfg_.explain_steps) {
    const auto eseed = derive(cfg_.seed, kExplainStream + step());
    const auto bg = default_background(context_, task_.space(), eseed);
    p.explanation = explain_candidates(p.pair, context_, *model_, preference_model(), sched,
                                       cfg_.ei, bg, cfg_.explain, eseed);
  }
  return p;
}

void Session::install(Proposal p) {
  if (phase_ != Phase::evaluating) return;
  pair_ = std::move(p.pair);
  explanation_ = std::move(p.explanation);
  phase_ = Phase::awaiting_choice;
}

void Session::prepare_next() {
  if (phase_ != Phase::evaluating) throw PhaseError("no proposal is due");
  install(next_proposal());
}

void Session::commit_choice(Choice c) {
  if (phase_ != Phase::awaiting_choice || !pair_)
    throw PhaseError("a choice is only accepted while awaiting one");
  StepRecord s;
  s.t = step();
  s.pair = *pair_;
  s.explanation = explanation_;
  s.choice = c;
  s.x = c == Choice::first ? pair_->x1 : pair_->x2;
  s.y = evaluate(s.x);
  s.regret = trace_.back();
  s.wall_ms = wall_.back();
  steps_.push_back(std::move(s));
  pair_.reset();
  explanation_ = nullptr;
  if (step() >= cfg_.budget) {
    phase_ = Phase::done;
    finished_ = now_iso();
  } else {
    phase_ = Phase::evaluating;
  }
}

void Session::choose(Choice c) {
  commit_choice(c);
  if (phase_ == Phase::evaluating) prepare_next();
}

void Session::abort() {
  if (phase_ == Phase::done || phase_ == Phase::aborted)
    throw PhaseError("session already finished");
  phase_ = Phase::aborted;
  pair_.reset();
  finished_ = now_iso();
}

HeatmapSlice Session::heatmap(std::optional<std::pair<std::size_t, std::size_t>> dims,
                              std::size_t resolution) const {
  const auto hseed = derive(cfg_.seed, kHeatmapStream + step());
  const auto d = dims ? *dims : suggest_slice_dims(*model_, context_, task_.space(), hseed);
  DecaySchedule sched = cfg_.sched;
  sched.t = step();
  return slice_heatmap(*model_, preference_model(), context_, task_.space(), d, {},
                       resolution, sched, cfg_.ei, hseed);
}

RunRecord Session::record() const {
  RunRecord r;
  r.config = cfg_;
  try {
    r.task = task_to_json(task_);
  } catch (const Error&) {
    r.task = nullptr;
  }
  r.model_digest = model_digest(*model_);
  r.phase = phase_;
  r.preferences = labels_;
  r.preference_lengthscale = pref_ ? pref_->lengthscale() : 0.0;
  r.initial = initial_;
  r.steps = steps_;
  r.trace = trace_;
  r.wall_ms = wall_;
  r.evaluations = evaluations_;
  r.started = started_;
  r.finished = finished_;
  return r;
}

// -------------------------------------------------------------------- runs

Experts simulated_experts(const SessionConfig& cfg, const BlackBoxTask& task) {
  Experts e;
  if (cfg.preference.accuracy) {
    e.labels = accuracy_oracle(task, *cfg.preference.accuracy, derive(cfg.seed, kLabelStream));
  } else {
    auto labeler = std::make_shared<SimulatedExpert>(cfg.sigma_pref,
                                                     derive(cfg.seed, kLabelStream));
    e.labels = [labeler, task](std::span<const double> a,
                               std::span<const double> b) -> std::optional<Choice> {
      return labeler->choose(task, a, b);
    };
  }
  auto chooser = std::make_shared<SimulatedExpert>(cfg.sigma_pref,
                                                   derive(cfg.seed, kChoiceStream));
  e.choices = [chooser](const Session& s) -> std::optional<Choice> {
    const auto& p = s.current_pair();
    return chooser->choose(s.task(), p.x1, p.x2);
  };
  return e;
}

RunRecord run_baseline(Method kind, SessionConfig cfg, const BlackBoxTask& task,
                       std::shared_ptr<const TnpModel> model, Experts experts) {
  cfg.method = kind;
  const Experts sim = simulated_experts(cfg, task);
  if (!experts.labels) experts.labels = sim.labels;
  if (!experts.choices) experts.choices = sim.choices;
  Session s(cfg, task, std::move(model));
  if (s.phase() == Phase::eliciting_preferences) s.elicit(experts.labels);
  while (s.phase() == Phase::awaiting_choice) {
    if (!uses_preferences(kind)) {
      s.choose(Choice::first);
      continue;
    }
    const auto c = experts.choices(s);
    if (!c) {
      s.abort();
      break;
    }
    s.choose(*c);
  }
  return s.record();
}

RunRecord run_hlmbo(const SessionConfig& cfg, const BlackBoxTask& task,
                    std::shared_ptr<const TnpModel> model, Experts experts) {
  return run_baseline(cfg.method, cfg, task, std::move(model), std::move(experts));
}

std::vector<double> replay(const RunRecord& record, const BlackBoxTask& task,
                           std::shared_ptr<const TnpModel> model) {
  if (!record.model_digest.empty() && model_digest(*model) != record.model_digest)
    throw RecordError("record was produced with a different model");
  auto li = std::make_shared<std::size_t>(0);
  auto ci = std::make_shared<std::size_t>(0);
  const auto prefs = record.preferences;
  const auto steps = record.steps;
  Experts e;
  e.labels = [li, prefs](std::span<const double>, std::span<const double>)
      -> std::optional<Choice> {
    if (*li >= prefs.pairs.size()) return std::nullopt;
    return prefs.pairs[(*li)++].y == 1 ? Choice::first : Choice::second;
  };
  e.choices = [ci, steps](const Session&) -> std::optional<Choice> {
    if (*ci >= steps.size()) return std::nullopt;
    return steps[(*ci)++].choice;
  };
  return run_baseline(record.config.method, record.config, task, std::move(model), e).trace;
}

// ------------------------------------------------------------------ records

std::string model_digest(const TnpModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  model.network().params().visit([&](const std::string& name, const detail::Mat<float>& m) {
    h = detail::fnv1a(name.data(), name.size(), h);
    h = detail::fnv1a(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(float), h);
  });
  const auto& n = model.normalization();
  const std::string norm =
      json{{"space", n.space}, {"y_mean", n.y_mean}, {"y_std", n.y_std}}.dump();
  h = detail::fnv1a(norm.data(), norm.size(), h);
  return detail::hex64(h);
}

namespace {

json step_to_json(const StepRecord& s) {
  return {{"t", s.t},
          {"pair", s.pair},
          {"explanation", s.explanation},
          {"choice", to_string(s.choice)},
          {"x", s.x},
          {"y", s.y},
          {"regret", number_or_null(s.regret)}};
}

AcquisitionSnapshot snapshot_from_json(const json& j) {
  AcquisitionSnapshot s;
  s.mu_S = j.at("mu_S").get<double>();
  s.var_S = j.at("var_S").get<double>();
  s.mu_pi = j.at("mu_pi").get<double>();
  s.var_pi = j.at("var_pi").get<double>();
  s.mean = j.at("mean").get<double>();
  s.variance = j.at("variance").get<double>();
  s.w_pi = j.at("w_pi").get<double>();
  s.w_S = j.at("w_S").get<double>();
  s.score = j.at("score").get<double>();
  return s;
}

StepRecord step_from_json(const json& j) {
  StepRecord s;
  s.t = j.at("t").get<int>();
  const auto& p = j.at("pair");
  s.pair.x1 = p.at("x1").get<Point>();
  s.pair.x2 = p.at("x2").get<Point>();
  s.pair.first = snapshot_from_json(p.at("first"));
  s.pair.second = snapshot_from_json(p.at("second"));
  s.pair.bridge.pi_mean = p.at("bridge").at("pi_mean").get<double>();
  s.pair.bridge.s_mean = p.at("bridge").at("s_mean").get<double>();
  s.pair.bridge.slope = p.at("bridge").at("slope").get<double>();
  s.pair.mc_seed = p.at("mc_seed").get<std::uint64_t>();
  s.pair.form = p.at("form").get<std::string>() == "ucb" ? AcquisitionForm::ucb
                                                         : AcquisitionForm::ei;
  s.explanation = j.at("explanation");
  s.choice = choice_from_string(j.at("choice").get<std::string>());
  s.x = j.at("x").get<Point>();
  s.y = j.at("y").get<double>();
  s.regret = number_from(j.at("regret"));
  return s;
}

json hashed_body(const json& record_json) {
  json body = record_json;
  body.erase("integrity");
  body.erase("timing");
  return body;
}

}  // namespace

std::string record_hash(const json& record_json) {
  return detail::hex64(detail::fnv1a(hashed_body(record_json).dump()));
}

json record_to_json(const RunRecord& r) {
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(step_to_json(s));
  json trace = json::array();
  for (double v : r.trace) trace.push_back(number_or_null(v));
  json prefs = json::array();
  for (const auto& p : r.preferences.pairs) prefs.push_back(p);
  json j = {{"format", "hlmbo.run"},
            {"format_version", kRunRecordVersion},
            {"config", r.config},
            {"task", r.task},
            {"model_digest", r.model_digest},
            {"phase", to_string(r.phase)},
            {"preferences", {{"pairs", prefs}, {"aborted", r.preferences.aborted}}},
            {"preference_lengthscale", r.preference_lengthscale},
            {"initial", r.initial},
            {"steps", steps},
            {"trace", trace},
            {"evaluations", r.evaluations},
            {"timing", {{"started", r.started}, {"finished", r.finished}, {"wall_ms", r.wall_ms}}}};
  j["integrity"] = {{"algorithm", "fnv1a64"}, {"hash", record_hash(j)}};
  return j;
}

RunRecord record_from_json(const json& j) {
  try {
    if (j.value("format", "") != "hlmbo.run")
      throw RecordError("not a run record");
    if (j.at("format_version").get<int>() != kRunRecordVersion)
      throw RecordError("unsupported run record version " +
                        std::to_string(j.at("format_version").get<int>()));
    if (!j.contains("integrity") ||
        j["integrity"].at("hash").get<std::string>() != record_hash(j))
      throw RecordError("run record integrity hash does not verify");
    RunRecord r;
    r.config = j.at("config").get<SessionConfig>();
    r.task = j.at("task");
    r.model_digest = j.at("model_digest").get<std::string>();
    r.phase = phase_from_string(j.at("phase").get<std::string>());
    for (const auto& p : j.at("preferences").at("pairs"))
      r.preferences.pairs.push_back(p.get<PreferencePair>());
    r.preferences.aborted = j["preferences"].at("aborted").get<bool>();
    r.preference_lengthscale = j.at("preference_lengthscale").get<double>();
    r.initial = j.at("initial").get<TaskDataset>();
    for (const auto& s : j.at("steps")) r.steps.push_back(step_from_json(s));
    for (const auto& v : j.at("trace")) r.trace.push_back(number_from(v));
    r.evaluations = j.at("evaluations").get<int>();
    if (j.contains("timing")) {
      const auto& t = j["timing"];
      r.started = t.value("started", "");
      r.finished = t.value("finished", "");
      r.wall_ms = t.value("wall_ms", std::vector<double>{});
    }
    return r;
  } catch (const json::exception& e) {
    throw RecordError(std::string("malformed run record: ") + e.what());
  } catch (const InvalidConfig& e) {
    throw RecordError(std::string("malformed run record config: ") + e.what());
  }
}

void save_run(const RunRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RecordError("cannot write run record '" + path.string() + "'");
  out << record_to_json(r).dump(1) << '\n';
}

RunRecord load_run(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RecordError("cannot read run record '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw RecordError(std::string("run record is not valid JSON: ") + e.what());
  }
  return record_from_json(j);
}

// -------------------------------------------------------------- state JSON

json session_state_json(const Session& s, const std::string& id) {
  json history = json::array();
  for (const auto& st : s.history())
    history.push_back({{"t", st.t},
                       {"x1", st.pair.x1},
                       {"x2", st.pair.x2},
                       {"choice", to_string(st.choice)},
                       {"x", st.x},
                       {"y", st.y},
                       {"regret", number_or_null(st.regret)}});
  json trace = json::array();
  for (double v : s.trace()) trace.push_back(number_or_null(v));
  json pending = json::array();
  const auto& pairs = s.elicitation_pairs();
  for (std::size_t i = s.labels_received(); i < pairs.size(); ++i)
    pending.push_back({{"index", i}, {"x1", pairs[i].first}, {"x2", pairs[i].second}});
  const auto& space = s.task().space();
  json j = {{"schema", "hlmbo.session/1"},
            {"id", id},
            {"phase", to_string(s.phase())},
            {"method", to_string(s.config().method)},
            {"mode", to_string(s.config().mode)},
            {"task_id", s.task().id()},
            {"space", space},
            {"t", s.step()},
            {"budget", s.config().budget},
            {"initial", s.config().initial},
            {"evaluations", s.evaluations()},
            {"context", s.context()},
            {"elicitation",
             {{"total", pairs.size()},
              {"received", s.labels_received()},
              {"pending", pending}}},
            {"history", history},
            {"regret", trace},
            {"current", nullptr}};
  if (s.phase() == Phase::awaiting_choice)
    j["current"] = {{"pair", s.current_pair()}, {"explanation", s.current_explanation()}};
  return j;
}

// ----------------------------------------------------------------- manager

SessionManager::SessionManager(Resolver resolver, std::optional<std::filesystem::path> store,
                               bool background)
    : resolver_(std::move(resolver)), store_(std::move(store)), background_(background) {
  if (store_) {
    std::filesystem::create_directories(*store_);
    restore();
  }
}

SessionManager::~SessionManager() {
  std::map<std::string, std::shared_ptr<Entry>> all;
  {
    std::lock_guard lk(mu_);
    all = sessions_;
  }
  for (auto& [id, e] : all) {
    std::thread w;
    {
      std::lock_guard lk(e->mu);
      w = std::move(e->worker);
    }
    if (w.joinable()) w.join();
  }
}

std::shared_ptr<SessionManager::Entry> SessionManager::find(const std::string& id) {
  std::lock_guard lk(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("no session '" + id + "'");
  return it->second;
}

std::vector<std::string> SessionManager::ids() {
  std::lock_guard lk(mu_);
  std::vector<std::string> out;
  for (const auto& [id, e] : sessions_) out.push_back(id);
  return out;
}

void SessionManager::persist(const std::string& id, Entry& e) {
  if (!store_) return;
  const json j = {{"id", id},
                  {"config", e.session->config()},
                  {"labels", e.labels},
                  {"choices", [&] {
                     json c = json::array();
                     for (auto ch : e.choices) c.push_back(to_string(ch));
                     return c;
                   }()},
                  {"aborted", e.session->phase() == Phase::aborted}};
  const auto path = *store_ / (id + ".json");
  const auto tmp = *store_ / (id + ".json.tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void SessionManager::restore() {
  for (const auto& de : std::filesystem::directory_iterator(*store_)) {
    if (de.path().extension() != ".json") continue;
    std::ifstream in(de.path());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) continue;
    const auto id = j.at("id").get<std::string>();
    const auto cfg = j.at("config").get<SessionConfig>();
    auto e = std::make_shared<Entry>();
    e->session = std::make_unique<Session>(cfg, resolver_.task(cfg.task_id),
                                           resolver_.model(cfg.model_ref));
    auto& s = *e->session;
    if (s.phase() == Phase::eliciting_preferences) {
      if (cfg.mode == ExpertMode::simulated) {
        s.elicit(simulated_experts(cfg, s.task()).labels);
      } else {
        e->labels = j.at("labels").get<std::vector<int>>();
        if (!e->labels.empty()) s.submit_labels(e->labels);
      }
    }
    for (const auto& c : j.at("choices")) {
      const auto ch = choice_from_string(c.get<std::string>());
      s.choose(ch);
      e->choices.push_back(ch);
    }
    if (j.value("aborted", false) && s.phase() != Phase::aborted && s.phase() != Phase::done)
      s.abort();
    std::lock_guard lk(mu_);
    sessions_[id] = e;
    if (id.size() > 1 && id[0] == 's') {
      try {
        counter_ = std::max<std::uint64_t>(counter_, std::stoull(id.substr(1)));
      } catch (const std::exception&) {
      }
    }
  }
}

std::string SessionManager::create(const SessionConfig& cfg) {
  cfg.validate();
  auto e = std::make_shared<Entry>();
  e->session = std::make_unique<Session>(cfg, resolver_.task(cfg.task_id),
                                         resolver_.model(cfg.model_ref));
  if (e->session->phase() == Phase::eliciting_preferences && cfg.mode == ExpertMode::simulated)
    e->session->elicit(simulated_experts(cfg, e->session->task()).labels);
  std::string id;
  {
    std::lock_guard lk(mu_);
    id = "s" + std::to_string(++counter_);
    sessions_[id] = e;
  }
  std::lock_guard lk(e->mu);
  persist(id, *e);
  return id;
}

json SessionManager::state(const std::string& id) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  return session_state_json(*e->session, id);
}

json SessionManager::submit_preferences(const std::string& id, const std::vector<int>& labels) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  e->session->submit_labels(labels, "human");
  e->labels.insert(e->labels.end(), labels.begin(), labels.end());
  persist(id, *e);
  return session_state_json(*e->session, id);
}

json SessionManager::candidates(const std::string& id) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  const auto& s = *e->session;
  return {{"schema", "hlmbo.candidates/1"},
          {"id", id},
          {"t", s.step()},
          {"pair", s.current_pair()},
          {"explanation", s.current_explanation()}};
}

json SessionManager::choose(const std::string& id, Choice side) {
  auto e = find(id);
  std::unique_lock lk(e->mu);
  auto& s = *e->session;
  s.commit_choice(side);
  e->choices.push_back(side);
  persist(id, *e);
  if (s.phase() == Phase::evaluating) {
    if (background_) {
      if (e->worker.joinable()) e->worker.join();
      e->worker = std::thread([this, e, id] {
        Session::Proposal p;
        try {
          p = e->session->next_proposal();
        } catch (const std::exception&) {
          std::lock_guard g(e->mu);
          if (e->session->phase() == Phase::evaluating) e->session->abort();
          persist(id, *e);
          return;
        }
        std::lock_guard g(e->mu);
        e->session->install(std::move(p));
      });
    } else {
      s.prepare_next();
    }
  }
  return session_state_json(s, id);
}

void SessionManager::wait(const std::string& id) {
  auto e = find(id);
  std::thread w;
  {
    std::lock_guard lk(e->mu);
    w = std::move(e->worker);
  }
  if (w.joinable()) w.join();
}

json SessionManager::heatmap(const std::string& id,
                             std::optional<std::pair<std::size_t, std::size_t>> dims,
                             std::size_t resolution) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  json j = e->session->heatmap(dims, resolution);
  j["schema"] = "hlmbo.heatmap/1";
  j["id"] = id;
  return j;
}

json SessionManager::abort(const std::string& id) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  e->session->abort();
  persist(id, *e);
  return session_state_json(*e->session, id);
}

RunRecord SessionManager::record(const std::string& id) {
  auto e = find(id);
  std::lock_guard lk(e->mu);
  return e->session->record();
}

}  // namespace hlmbo
