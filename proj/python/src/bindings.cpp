// Python access to the environment, dataset files, training runs and
// evaluation. Heavy lifting stays in C++; values cross as plain lists/dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "modalcompose/analysis.hpp"
#include "modalcompose/config.hpp"
#include "modalcompose/dataset.hpp"
#include "modalcompose/env.hpp"
#include "modalcompose/errors.hpp"
#include "modalcompose/harness.hpp"

namespace py = pybind11;
using namespace modalcompose;

namespace {

py::dict to_dict(const Observation& obs) {
  py::dict d;
  for (const auto& [name, values] : obs.modalities) d[py::str(name)] = values;
  d["robot_state"] = obs.robot_state;
  return d;
}

py::dict to_dict(const MetricsRow& r) {
  py::dict d;
  d["task"] = r.task;
  d["method"] = r.method;
  d["success_rate"] = r.success_rate;
  d["mean_steps"] = r.mean_steps;
  d["param_count"] = r.param_count;
  d["seed"] = r.seed;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Modality-composable diffusion policies";

  auto error = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<ContractError>(m, "ContractError", error.ptr());
  py::register_exception<NumericError>(m, "NumericError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<FileFormatError>(m, "FileFormatError", error.ptr());

  py::class_<EnvSpec>(m, "EnvSpec")
      .def(py::init([](const std::string& name) { return EnvSpec::defaults(parse_env_kind(name)); }),
           py::arg("name") = "occluded_reach")
      .def_property_readonly("name", &EnvSpec::name)
      .def_readwrite("contact_radius", &EnvSpec::contact_radius)
      .def_readwrite("success_radius", &EnvSpec::success_radius)
      .def_readwrite("max_steps", &EnvSpec::max_steps)
      .def_readwrite("max_speed", &EnvSpec::max_speed)
      .def_readwrite("expert_noise", &EnvSpec::expert_noise)
      .def("modalities", [](const EnvSpec& s) {
        std::vector<std::pair<std::string, std::size_t>> out;
        for (const auto& i : s.modalities()) out.emplace_back(i.name, i.dim);
        return out;
      });

  py::class_<EnvState>(m, "EnvState")
      .def_readonly("agent", &EnvState::agent)
      .def_readonly("target", &EnvState::target)
      .def_readonly("t", &EnvState::t)
      .def_readonly("done", &EnvState::done)
      .def_readonly("success", &EnvState::success)
      .def("__eq__", [](const EnvState& a, const EnvState& b) { return a == b; });

  /// Seeded wrapper around reset/step for interactive use.
  struct PyEnv {
    EnvSpec spec;
    EnvState state;
    Rng expert_rng{0};
  };
  py::class_<PyEnv>(m, "Env")
      .def(py::init([](const EnvSpec& spec) { return PyEnv{spec, {}, Rng(0)}; }), py::arg("spec") = EnvSpec{})
      .def("reset",
           [](PyEnv& e, std::uint64_t seed) {
             Rng rng(seed);
             const auto r = env_reset(e.spec, rng);
             e.state = r.state;
             e.expert_rng = Rng(stream_key(seed, 1));
             return to_dict(r.obs);
           },
           py::arg("seed"))
      .def("step",
           [](PyEnv& e, const std::vector<double>& action) {
             const auto tr = env_step(e.spec, e.state, action);
             e.state = tr.state;
             return py::make_tuple(to_dict(tr.obs), tr.done, tr.success);
           })
      .def("expert_action", [](PyEnv& e) { return scripted_expert(e.state, e.spec, e.expert_rng); })
      .def_property_readonly("state", [](const PyEnv& e) { return e.state; });

  m.def(
      "generate_dataset",
      [](const EnvSpec& spec, std::size_t episodes, std::uint64_t seed, const std::filesystem::path& path) {
        const auto ds = generate_dataset(spec, episodes, seed);
        write_dataset(ds, path);
        return ds.step_count();
      },
      py::arg("spec"), py::arg("episodes"), py::arg("seed"), py::arg("path"),
      "Writes scripted demonstrations to an MCDS file and returns the number of steps.");
  m.def(
      "dataset_info",
      [](const std::filesystem::path& path) {
        const auto ds = read_dataset(path);
        py::dict d;
        d["env"] = ds.env_name;
        d["episodes"] = ds.episodes.size();
        d["steps"] = ds.step_count();
        std::vector<std::pair<std::string, std::size_t>> mods;
        for (const auto& i : ds.modalities) mods.emplace_back(i.name, i.dim);
        d["modalities"] = mods;
        return d;
      },
      py::arg("path"));

  m.def(
      "train",
      [](const std::string& config_text, const std::filesystem::path& out_dir) {
        const auto cfg = parse_run_config(config_text);
        py::gil_scoped_release release;
        return run_training(cfg, prepare_dataset(cfg), out_dir).manifests;
      },
      py::arg("config"), py::arg("out_dir"), "Trains every configured method and returns the manifest paths.");
  m.def(
      "evaluate",
      [](const std::filesystem::path& manifest, const EnvSpec& env, std::size_t episodes, std::uint64_t seed,
         const std::string& scenario) {
        const auto man = read_manifest(manifest);
        const auto sc = parse_scenario(scenario);
        py::gil_scoped_release release;
        const auto row = run_eval(man, env, episodes, seed, sc);
        py::gil_scoped_acquire acquire;
        return to_dict(row);
      },
      py::arg("manifest"), py::arg("env") = EnvSpec{}, py::arg("episodes") = 20, py::arg("seed") = 0,
      py::arg("scenario") = "none");

  m.def(
      "apply_strategy",
      [](const std::vector<double>& w, const std::string& strategy) {
        return apply_strategy(ConsensusWeights{w}, parse_strategy(strategy)).w;
      },
      py::arg("weights"), py::arg("strategy"));
  m.def("ema", [](const std::vector<double>& raw, double alpha) { return ema(raw, alpha); }, py::arg("raw"),
        py::arg("alpha") = 0.1);
  m.def(
      "alpha_bar",
      [](int steps, double beta_start, double beta_end) {
        const auto s = make_schedule(steps, beta_start, beta_end);
        std::vector<double> out;
        for (int k = 1; k <= steps; ++k) out.push_back(s.alpha_bar(k));
        return out;
      },
      py::arg("steps") = 50, py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02);
}
