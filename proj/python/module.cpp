#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hlmbo/acquisition.hpp"
#include "hlmbo/errors.hpp"
#include "hlmbo/explain.hpp"
#include "hlmbo/orchestrator.hpp"
#include "hlmbo/tnp.hpp"

namespace py = pybind11;
using namespace hlmbo;
using nlohmann::json;

namespace {

using Model = std::shared_ptr<TnpModel>;

TaskDataset dataset(const std::vector<Point>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ShapeError("context inputs and values differ in length");
  TaskDataset d;
  for (std::size_t i = 0; i < xs.size(); ++i) d.add(xs[i], ys[i]);
  return d;
}

SampleMethod sample_method(const std::string& s) {
  if (s == "lhs" || s == "latin_hypercube") return SampleMethod::latin_hypercube;
  if (s == "uniform") return SampleMethod::uniform;
  throw InvalidConfig("unknown sampling method '" + s + "'");
}

AttributionTarget py_target(py::function fn) {
  return {TargetKind::acquisition, [fn](std::span<const double> x) {
            py::gil_scoped_acquire gil;
            return fn(std::vector<double>(x.begin(), x.end())).cast<double>();
          }};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Human-in-the-loop meta Bayesian optimization core";
  py::register_exception<Error>(m, "HlmboError", PyExc_RuntimeError);

  m.def("expected_improvement",
        [](double mu, double sigma, double f_best, double zeta) {
          return expected_improvement(mu, sigma, f_best, {zeta});
        },
        py::arg("mu"), py::arg("sigma"), py::arg("f_best"), py::arg("zeta") = 0.1);
  m.def("ucb", &ucb, py::arg("mu"), py::arg("sigma"));
  m.def("combine_posterior",
        [](double mu_s, double var_s, double mu_pi, double var_pi, double gamma, int t) {
          const auto c = combine_posterior(mu_s, var_s, mu_pi, var_pi, {gamma, t});
          return py::dict(py::arg("mean") = c.mean, py::arg("variance") = c.variance,
                          py::arg("w_pi") = c.w_pi, py::arg("w_s") = c.w_S);
        },
        py::arg("mu_s"), py::arg("var_s"), py::arg("mu_pi"), py::arg("var_pi"),
        py::arg("gamma") = 0.1, py::arg("t") = 0);
  m.def("noharm_weights",
        [](double var_pi, double var_s, double gamma, int t) {
          return noharm_weights(var_pi, var_s, {gamma, t});
        },
        py::arg("var_pi"), py::arg("var_s"), py::arg("gamma") = 0.1, py::arg("t") = 0);
  m.def("sample_space",
        [](const std::vector<double>& lower, const std::vector<double>& upper, std::size_t n,
           const std::string& method, std::uint64_t seed) {
          return sample_space(SearchSpace(lower, upper), n, sample_method(method), seed);
        },
        py::arg("lower"), py::arg("upper"), py::arg("n"), py::arg("method") = "lhs",
        py::arg("seed") = 0);

  py::class_<BlackBoxTask>(m, "Task")
      .def_property_readonly("id", &BlackBoxTask::id)
      .def_property_readonly("dims", [](const BlackBoxTask& t) { return t.space().dims(); })
      .def_property_readonly("lower", [](const BlackBoxTask& t) { return t.space().lower(); })
      .def_property_readonly("upper", [](const BlackBoxTask& t) { return t.space().upper(); })
      .def_property_readonly("optimum",
                             [](const BlackBoxTask& t) -> py::object {
                               if (!t.known_optimum()) return py::none();
                               return py::make_tuple(t.known_optimum()->point,
                                                     t.known_optimum()->value);
                             })
      .def("evaluate",
           [](const BlackBoxTask& t, const std::vector<double>& x) { return t.evaluate(x); })
      .def("to_json", [](const BlackBoxTask& t) { return task_to_json(t).dump(); })
      .def_static("from_json",
                  [](const std::string& s) { return task_from_json(json::parse(s)); });

  m.def("make_family",
        [](const std::string& config_json, std::uint64_t seed) {
          const auto fam = make_synthetic_family(json::parse(config_json).get<FamilyConfig>(), seed);
          py::dict d;
          d["train"] = fam.train;
          d["val"] = fam.val;
          d["test"] = fam.test;
          return d;
        },
        py::arg("config_json") = "{}", py::arg("seed") = 1);

  py::class_<TnpModel, Model>(m, "Model")
      .def_property_readonly("input_dims", &TnpModel::input_dims)
      .def_property_readonly("parameter_count", &TnpModel::parameter_count)
      .def_property_readonly("loss_curve", [](const TnpModel& t) { return t.loss_curve; })
      .def_property_readonly("digest", [](const TnpModel& t) { return model_digest(t); })
      .def("predict",
           [](const TnpModel& t, const std::vector<Point>& xs, const std::vector<double>& ys,
              const std::vector<Point>& targets) {
             const auto p = t.predict(dataset(xs, ys), targets);
             return py::make_tuple(p.mean, p.variance);
           },
           py::arg("context_x"), py::arg("context_y"), py::arg("targets"))
      .def("save", [](const TnpModel& t, const std::filesystem::path& p) { save_model(t, p); })
      .def_static("load", [](const std::filesystem::path& p) {
        return std::make_shared<TnpModel>(load_model(p));
      });

  m.def("meta_train",
        [](const std::string& family_json, std::uint64_t family_seed, const std::string& tnp_json,
           std::uint64_t seed) {
          const auto fam = make_synthetic_family(json::parse(family_json).get<FamilyConfig>(),
                                                 family_seed);
          const auto cfg = json::parse(tnp_json).get<TnpConfig>();
          py::gil_scoped_release nogil;
          return std::make_shared<TnpModel>(meta_train(fam, cfg, seed));
        },
        py::arg("family_json") = "{}", py::arg("family_seed") = 1, py::arg("tnp_json") = "{}",
        py::arg("seed") = 1);

  m.def("run",
        [](const std::string& session_json, const BlackBoxTask& task, const Model& model) {
          const auto cfg = json::parse(session_json).get<SessionConfig>();
          RunRecord r;
          {
            py::gil_scoped_release nogil;
            r = run_baseline(cfg.method, cfg, task, model);
          }
          return record_to_json(r).dump();
        },
        py::arg("session_json"), py::arg("task"), py::arg("model"));
  m.def("replay",
        [](const std::string& record_json, const BlackBoxTask& task, const Model& model) {
          const auto r = record_from_json(json::parse(record_json));
          py::gil_scoped_release nogil;
          return replay(r, task, model);
        },
        py::arg("record_json"), py::arg("task"), py::arg("model"));

  m.def("shap",
        [](py::function fn, const Point& x, const std::vector<Point>& background,
           int n_coalitions, std::uint64_t seed) {
          const auto a = shap_attributions(py_target(std::move(fn)), x, background,
                                           n_coalitions, seed);
          return py::make_tuple(a.values, a.baseline);
        },
        py::arg("fn"), py::arg("x"), py::arg("background"), py::arg("n_coalitions") = 512,
        py::arg("seed") = 0);
  m.def("lime",
        [](py::function fn, const Point& x, const std::vector<double>& lower,
           const std::vector<double>& upper, int n_perturb, double kernel_width, int sparsity,
           std::uint64_t seed) {
          const LimeConfig cfg{n_perturb, kernel_width, sparsity};
          const auto a = lime_attributions(py_target(std::move(fn)), x, SearchSpace(lower, upper),
                                           cfg, seed);
          return py::make_tuple(a.values, a.baseline, a.r2);
        },
        py::arg("fn"), py::arg("x"), py::arg("lower"), py::arg("upper"),
        py::arg("n_perturb") = 500, py::arg("kernel_width") = 0.25, py::arg("sparsity") = 0,
        py::arg("seed") = 0);
}
