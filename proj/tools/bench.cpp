// Command-line front end for training, benchmarks, reports, replay and the
// session server.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "hlmbo/bench.hpp"
#include "hlmbo/errors.hpp"
#include "hlmbo/server.hpp"

namespace fs = std::filesystem;
using namespace hlmbo;

namespace {

constexpr int kConfigExit = 2;
constexpr int kRuntimeExit = 3;

struct Options {
  std::string config;
  std::string out = "bench_out";
  int seeds = 0;
  int jobs = -1;
};

BenchConfig resolve(const Options& o) {
  BenchConfig c = o.config.empty() ? desk_bench_config() : load_bench_config(o.config);
  if (o.seeds < 0) throw ConfigError("--seeds must be positive");
  if (o.seeds > 0) {
    c.seeds.clear();
    for (int s = 0; s < o.seeds; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (o.jobs >= 0) c.jobs = o.jobs;
  c.validate();
  return c;
}

void print_summary(const BenchTable& t) {
  for (const auto& s : summarize(t))
    std::cout << s.method << ": final mean " << s.final_mean << " +- " << s.final_std
              << ", median " << s.final_median << "\n";
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "Bench config (JSON); defaults to the desk configuration");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--seeds", o.seeds, "Use seeds 0..n-1");
  cmd->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human-in-the-loop meta Bayesian optimization benchmark harness"};
  app.require_subcommand(1);
  Options o;

  auto* train = app.add_subcommand("train", "Meta-train the surrogate and write a checkpoint");
  auto* compare = app.add_subcommand("compare", "Compare methods on the test tasks");
  auto* hyp = app.add_subcommand("ablate-hypothesis", "Vary the expert hypothesis");
  auto* acc = app.add_subcommand("ablate-accuracy", "Vary the expert label accuracy");
  auto* zeta = app.add_subcommand("sweep-zeta", "Select zeta on the validation tasks");
  for (auto* c : {train, compare, hyp, acc, zeta}) add_common(c, o);

  auto* report = app.add_subcommand("report", "Write report.md and plots for a run directory");
  report->add_option("--out", o.out, "Directory holding *_regret.csv files")->capture_default_str();

  std::string record_path;
  auto* rep = app.add_subcommand("replay", "Re-execute a run record and compare its trace");
  rep->add_option("record", record_path, "Run record JSON")->required();
  add_common(rep, o);

  std::string host = "127.0.0.1", static_dir, store;
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the session API over HTTP");
  add_common(serve_cmd, o);
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--static", static_dir, "Directory with the browser console");
  serve_cmd->add_option("--store", store, "Directory for persisted sessions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (report->parsed()) {
      std::cout << cmd_report(o.out).string() << "\n";
      return 0;
    }
    BenchContext ctx(resolve(o), o.out);
    if (train->parsed()) {
      const auto r = cmd_train(ctx);
      std::cout << "checkpoint " << r.checkpoint.string() << " (" << r.digest << ")\n"
                << "loss " << r.initial_loss << " -> " << r.final_loss << "\n";
    } else if (compare->parsed()) {
      print_summary(cmd_compare(ctx));
    } else if (hyp->parsed()) {
      print_summary(cmd_ablate_hypothesis(ctx));
    } else if (acc->parsed()) {
      print_summary(cmd_ablate_accuracy(ctx));
    } else if (zeta->parsed()) {
      print_summary(cmd_sweep_zeta(ctx));
      std::cout << "best zeta written to " << (ctx.out_dir() / "best_zeta.json").string() << "\n";
    } else if (rep->parsed()) {
      const RunRecord rec = load_run(record_path);
      const BlackBoxTask task = task_from_json(rec.task);
      const auto trace = replay(rec, task, ctx.model());
      const bool same = trace == rec.trace;
      std::cout << (same ? "replay matches" : "replay differs") << " (" << trace.size()
                << " evaluations)\n";
      return same ? 0 : kRuntimeExit;
    } else if (serve_cmd->parsed()) {
      auto model = ctx.model();
      const auto& fam = ctx.family();
      SessionManager::Resolver resolver;
      resolver.task = [&fam](const std::string& id) -> BlackBoxTask {
        for (const auto* split : {&fam.test, &fam.val, &fam.train})
          for (const auto& t : *split)
            if (t.id() == id) return t;
        if (id.empty() && !fam.test.empty()) return fam.test.front();
        throw NotFound("unknown task " + id);
      };
      resolver.model = [model](const std::string&) { return model; };
      SessionManager manager(resolver, store.empty() ? std::nullopt
                                                     : std::optional<fs::path>(store));
      std::cout << "listening on http://" << host << ":" << port << "\n" << std::flush;
      return serve(manager, host, port,
                   static_dir.empty() ? std::nullopt : std::optional<std::string>(static_dir))
                 ? 0
                 : kRuntimeExit;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const InvalidConfig& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
}
