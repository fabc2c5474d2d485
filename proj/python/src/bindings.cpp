#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "eirm/baselines.hpp"
#include "eirm/datasets.hpp"
#include "eirm/errors.hpp"
#include "eirm/experiment.hpp"
#include "eirm/game.hpp"
#include "eirm/theory.hpp"

namespace py = pybind11;
using namespace eirm;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  auto buf = out.mutable_unchecked<2>();
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) buf(r, c) = m(r, c);
  return out;
}

template <typename T>
py::array_t<T> to_numpy(const std::vector<T>& v) {
  py::array_t<T> out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

QuadGameSpec quad_spec(double c1, double c2, double a1, double a2, double bound, double step) {
  QuadGameSpec spec;
  spec.envs = {{a1, c1, 0.0}, {a2, c2, 0.0}};
  spec.lo = -bound;
  spec.hi = bound;
  spec.step = step;
  return spec;
}

py::dict report_dict(const Report& report) {
  py::dict d;
  for (const auto& [k, v] : report) d[py::str(k)] = v;
  return d;
}

ExperimentConfig make_config(const std::string& json, const std::string& preset) {
  return config_from_json(json.empty() ? "{}" : json, preset_config(preset));
}

}  // namespace

PYBIND11_MODULE(_eirm, m) {
  m.doc() = "Ensemble IRM games: benchmarks, best-response training and equilibrium checks";

  static py::exception<Error> base_error(m, "EirmError");
  static py::exception<ConfigError> config_error(m, "ConfigError", base_error.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      py::set_error(config_error, e.what());
    } catch (const Error& e) {
      py::set_error(base_error, e.what());
    }
  });

  py::class_<EnvironmentDataset>(m, "EnvironmentDataset")
      .def_property_readonly("features", [](const EnvironmentDataset& e) { return to_numpy(e.features); })
      .def_property_readonly("labels", [](const EnvironmentDataset& e) { return to_numpy(e.labels); })
      .def_property_readonly("spurious_bits", [](const EnvironmentDataset& e) { return to_numpy(e.spurious_bits); })
      .def_property_readonly("targets", [](const EnvironmentDataset& e) { return to_numpy(e.targets); })
      .def_readonly("env_id", &EnvironmentDataset::env_id)
      .def_readonly("flip_prob", &EnvironmentDataset::flip_prob)
      .def("__len__", &EnvironmentDataset::size);

  py::class_<Benchmark>(m, "Benchmark")
      .def_readonly("train_envs", &Benchmark::train_envs)
      .def_readonly("test_env", &Benchmark::test_env)
      .def_readonly("oracle_env", &Benchmark::oracle_env)
      .def_readonly("oracle_test_env", &Benchmark::oracle_test_env);

  m.def(
      "make_benchmark",
      [](const std::string& name, std::vector<std::size_t> sizes, std::vector<double> flip_probs, std::uint64_t seed,
         std::optional<std::filesystem::path> data_dir, std::size_t shape_size) {
        BenchmarkOptions o;
        o.sizes = std::move(sizes);
        o.flip_probs = std::move(flip_probs);
        o.seed = seed;
        o.data_dir = std::move(data_dir);
        o.shape_size = shape_size;
        return make_benchmark(benchmark_from_string(name), o);
      },
      py::arg("name"), py::arg("sizes"), py::arg("flip_probs") = std::vector<double>{0.2, 0.1, 0.9},
      py::arg("seed") = 0, py::arg("data_dir") = std::nullopt, py::arg("shape_size") = 16);

  m.def(
      "synth_shapes",
      [](std::size_t n, std::size_t height, std::size_t width, std::uint64_t seed) {
        Rng rng(seed);
        const auto s = synth_shapes(n, height, width, rng);
        return py::make_tuple(to_numpy(s.images), to_numpy(s.prelim_labels));
      },
      py::arg("n"), py::arg("height") = 16, py::arg("width") = 16, py::arg("seed") = 0);

  m.def(
      "scalar_game_grid",
      [](double c1, double c2, double a1, double a2, double bound, double step) {
        const auto spec = quad_spec(c1, c2, a1, a2, bound, step);
        const auto r = scalar_game_grid(spec);
        py::dict d = report_dict(to_report(r, spec));
        std::vector<double> ne, inv;
        for (auto k : r.ne_ensembles) ne.push_back(GridResult::ensemble_value(spec, k));
        for (auto k : r.invariant_set) inv.push_back(GridResult::ensemble_value(spec, k));
        d["ne_ensemble_values"] = ne;
        d["invariant_values"] = inv;
        d["ne_pairs"] = r.ne_pairs;
        d["equal"] = r.equal;
        return d;
      },
      py::arg("c1"), py::arg("c2"), py::arg("a1") = 1.0, py::arg("a2") = 1.0, py::arg("bound") = 2.0,
      py::arg("step") = 0.1);

  m.def(
      "bounded_linear_ne",
      [](double c1, double c2, double a1, double a2, double bound) {
        const auto ne = bounded_linear_ne(quad_spec(c1, c2, a1, a2, bound, 2.0 * bound / 10.0));
        py::dict d;
        d["w1"] = ne.w1;
        d["w2"] = ne.w2;
        d["ensemble"] = ne.ensemble();
        d["interior"] = ne.interior;
        d["invariant"] = ne.invariant;
        d["converged"] = ne.converged;
        return d;
      },
      py::arg("c1"), py::arg("c2"), py::arg("a1") = 1.0, py::arg("a2") = 1.0, py::arg("bound") = 2.0);

  m.def(
      "sem_nash_check",
      [](std::uint64_t seed, std::size_t turns, double eps) {
        const auto sem = sem_scenario(seed, turns);
        NashConfig nc;
        nc.loss = LossKind::SquaredError;
        nc.eps = eps;
        const auto report = verify_nash(sem.model, sem.envs, nc);
        py::dict d = report_dict(to_report(report));
        d["pass"] = report.pass;
        d["max_gain"] = report.max_gain;
        d["coefficients"] = linear_coefficients(sem.model, sem.envs[0].features.cols());
        d["gamma"] = sem.gamma;
        return d;
      },
      py::arg("seed") = 0, py::arg("turns") = 3000, py::arg("eps") = 1e-3);

  py::class_<TerminationMonitor>(m, "TerminationMonitor")
      .def(py::init([](std::size_t warm_start, std::size_t window, double q) {
             TerminationRule rule;
             rule.window = window;
             rule.quantile = q;
             return TerminationMonitor(rule, warm_start);
           }),
           py::arg("warm_start"), py::arg("window") = 20, py::arg("quantile") = 0.25)
      .def("update", &TerminationMonitor::update, py::arg("accuracy"), py::arg("step"))
      .def_property_readonly("min_steps", &TerminationMonitor::min_steps);

  m.def(
      "preset_config",
      [](const std::string& preset) { return config_to_json(preset_config(preset)); }, py::arg("preset") = "desk",
      "Preset configuration as JSON text.");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& preset, std::optional<std::filesystem::path> out_dir) {
        auto config = make_config(config_json, preset);
        if (out_dir) config.out_dir = *out_dir;
        ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = run_experiment(config);
        }
        py::list runs;
        for (const auto& r : result.runs) {
          py::dict d;
          d["method"] = std::string(to_string(r.method));
          d["seed"] = r.seed;
          d["train_acc"] = r.train_acc;
          d["test_acc"] = r.test_acc;
          d["turns"] = r.turns;
          d["terminated"] = r.terminated;
          runs.append(d);
        }
        return runs;
      },
      py::arg("config_json") = "", py::arg("preset") = "desk", py::arg("out_dir") = std::nullopt,
      "Runs every (seed, method) pair, writes the usual outputs and returns one dict per run.");
}
