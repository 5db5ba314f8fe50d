#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vbt/experiment.hpp"
#include "vbt/service.hpp"

namespace py = pybind11;
using namespace vbt;

namespace {

// JSON crosses the boundary as text; the Python side wraps json.loads/dumps.
EnvConfig env_from(const std::string& kind) {
  return parse_env_kind(kind) == EnvKind::LiftWorld ? EnvConfig::lift_world() : EnvConfig::grid_world();
}

Dataset collect_py(const std::string& script, std::int64_t budget, std::uint64_t seed, double noise) {
  ScriptConfig c;
  c.kind = parse_script_kind(script);
  c.step_budget = budget;
  c.seed = seed;
  c.action_noise_eps = noise;
  return collect(EnvConfig::lift_world(), c);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the vbt C++ core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);

  m.attr("DATASET_SCHEMA") = std::string(kDatasetSchema);
  m.attr("MODEL_SCHEMA") = std::string(kModelSchema);
  m.attr("TELEOP_PROTOCOL") = std::string(kTeleopProtocol);

  py::class_<StepResult>(m, "StepResult")
      .def_readonly("observation", &StepResult::observation)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_readonly("succeeded", &StepResult::succeeded)
      .def_property_readonly("event", [](const StepResult& r) { return std::string(to_string(r.event)); });

  py::class_<Environment>(m, "Environment")
      .def(py::init([](const std::string& kind) { return Environment(env_from(kind)); }), py::arg("kind") = "LiftWorld")
      .def(
          "reset",
          [](Environment& e, std::uint64_t seed, std::optional<std::vector<double>> mean) {
            return e.reset(seed, mean);
          },
          py::arg("seed"), py::arg("clutter_mean") = py::none())
      .def("step", [](Environment& e, int action) { return e.step(static_cast<Action>(action)); })
      .def("render", [](const Environment& e) { return render(e.config(), e.state()).text; })
      .def("scene_json", [](const Environment& e) { return render(e.config(), e.state()).scene.dump(); })
      .def_property_readonly("observation", &Environment::observation)
      .def_property_readonly("done", [](const Environment& e) { return e.state().done; })
      .def_property_readonly("step_count", [](const Environment& e) { return e.state().step_count; })
      .def_property_readonly("num_actions", [](const Environment& e) { return e.config().num_actions(); });

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("num_episodes", [](const Dataset& d) { return d.episodes.size(); })
      .def_property_readonly("total_steps", &Dataset::total_steps)
      .def("events",
           [](const Dataset& d, std::size_t i) {
             std::vector<std::string> out;
             for (auto e : d.episodes.at(i).events()) out.emplace_back(to_string(e));
             return out;
           })
      .def("rewards",
           [](const Dataset& d, std::size_t i) {
             std::vector<double> out;
             for (const auto& t : d.episodes.at(i).transitions) out.push_back(t.reward);
             return out;
           })
      .def("validate_vbt", [](const Dataset& d, std::size_t i) { return validate_vbt(d.episodes.at(i)).ok; })
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save(d, p); })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def("collect", &collect_py, py::arg("script"), py::arg("budget") = 10'000, py::arg("seed") = 0,
        py::arg("noise") = 0.1, "Collect a LiftWorld dataset with a scripted teleoperator");
  m.def("load_dataset", [](const std::filesystem::path& p) { return load(p); });
  m.def("mix", &mix);

  py::class_<TrainedModels>(m, "TrainedModels")
      .def_property_readonly("algorithm", [](const TrainedModels& t) { return std::string(to_string(t.algorithm)); })
      .def_property_readonly("has_critic", &TrainedModels::has_critic)
      .def("loss_history_csv", &loss_history_csv)
      .def("save", [](const TrainedModels& t, const std::filesystem::path& p) { save_models(t, p); });

  m.def(
      "train",
      [](const std::string& algorithm, const Dataset& d, long steps, std::uint64_t seed, int batch_size) {
        TrainConfig c;
        c.gradient_steps = steps;
        c.seed = seed;
        c.batch_size = batch_size;
        py::gil_scoped_release release;
        return train(parse_algorithm(algorithm), d, c);
      },
      py::arg("algorithm"), py::arg("dataset"), py::arg("steps") = 1000, py::arg("seed") = 0,
      py::arg("batch_size") = 256);
  m.def("load_models", [](const std::filesystem::path& p) { return load_models(p); });

  m.def(
      "rollout",
      [](const TrainedModels& t, int episodes, std::uint64_t seed) {
        NetworkPolicy p(t);
        const auto r = rollout(p, EnvConfig::lift_world(), episodes, seed);
        return py::make_tuple(r.success_rate, r.stderr_);
      },
      py::arg("models"), py::arg("episodes") = 100, py::arg("seed") = 0);
  m.def(
      "scripted_rollout",
      [](const std::string& script, int episodes, std::uint64_t seed) {
        ScriptConfig c;
        c.kind = parse_script_kind(script);
        c.action_noise_eps = 0.0;
        ScriptedPolicy p(c);
        const auto r = rollout(p, EnvConfig::lift_world(), episodes, seed);
        return py::make_tuple(r.success_rate, r.stderr_);
      },
      py::arg("script"), py::arg("episodes") = 100, py::arg("seed") = 0);

  m.def("expectile_loss", &expectile_loss, py::arg("u"), py::arg("tau"));
  m.def("awr_weight", &awr_weight, py::arg("q"), py::arg("v"), py::arg("beta"), py::arg("clip"));
  m.def("wasserstein1", &wasserstein1);
  m.def(
      "grad_check_max_error",
      [](std::uint64_t seed) {
        GradCheckSpec s;
        s.seed = seed;
        return grad_check(s, 1e-4).max_relative_error;
      },
      py::arg("seed") = 0);

  m.def("default_experiment_json", [] { return default_experiment_json().dump(); });
  m.def(
      "reproduce_json",
      [](const std::string& config_json) {
        const auto config = experiment_config_from_json(nlohmann::json::parse(config_json));
        py::gil_scoped_release release;
        const auto results = reproduce(config);
        return summary_text(results.criteria, config.hash());
      },
      "Run the full pipeline from a JSON config; returns the summary text");

  py::class_<Session>(m, "Session")
      .def(py::init([](const std::string& id, const std::filesystem::path& output_dir, std::optional<std::string> hint) {
             ServiceOptions o;
             o.output_dir = output_dir;
             if (hint) {
               o.hint = parse_script_kind(*hint);
             } else {
               o.hint.reset();
             }
             return Session(id, o);
           }),
           py::arg("id"), py::arg("output_dir"), py::arg("hint") = "VBT")
      .def("handle", &Session::handle_text, "Handle one protocol frame (JSON text) and return the reply frame")
      .def_property_readonly("dataset_path", &Session::dataset_path)
      .def_property_readonly("saved_episodes", &Session::saved_episodes);
}
