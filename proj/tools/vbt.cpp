// vbt: command-line entry point for collection, training, evaluation, the
// teleoperation service and the full reproduction pipeline.
//
// Exit codes: 0 success, 1 usage or config error, 2 runtime failure.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "vbt/experiment.hpp"
#include "vbt/service.hpp"

namespace {

using namespace vbt;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  int parallel = 0;
  std::optional<std::uint64_t> seed;
};

ExperimentConfig resolve(const Common& c) {
  nlohmann::json j;
  if (c.config_path.empty()) {
    j = default_experiment_json();
  } else {
    std::ifstream in(c.config_path);
    if (!in) throw ConfigError("cannot open config '" + c.config_path + "'");
    j = nlohmann::json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw ConfigError("config '" + c.config_path + "' is not valid JSON");
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  if (!c.output.empty()) j["output_dir"] = c.output;
  if (c.parallel > 0) j["parallel"] = c.parallel;
  if (c.seed) j["seed"] = *c.seed;
  return experiment_config_from_json(j);
}

std::vector<std::string> datasets_of(const ExperimentConfig& config, const std::vector<std::string>& trainings) {
  std::vector<std::string> out;
  for (const auto& t : trainings) out.push_back(config.training(t).dataset);
  return out;
}

std::vector<std::string> all_trainings(const ExperimentConfig& config) {
  std::vector<std::string> out;
  for (const auto& t : config.trainings) out.push_back(t.name);
  return out;
}

void print_written(const ExperimentConfig& config) {
  std::cout << "outputs under " << config.output_dir.string() << " (config " << config.hash() << ")\n";
}

int run_eval(const ExperimentConfig& config, const std::vector<EvalKind>& kinds) {
  std::vector<std::string> needed;
  bool replicates = false;
  for (const auto& e : config.evals) {
    if (!kinds.empty() && std::find(kinds.begin(), kinds.end(), e.kind) == kinds.end()) continue;
    needed.insert(needed.end(), e.models.begin(), e.models.end());
    replicates = replicates || e.include_replicates;
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  const auto models = load_models_for(config, model_refs(config, needed, replicates));
  const auto datasets = load_datasets(config, datasets_of(config, needed));
  ExperimentResults results;
  run_evals(config, datasets, models, results, kinds);
  for (const auto& ab : results.abtests) std::cout << ab_table_text(ab);
  print_written(config);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual backtracking teleoperation lab: collect, train, evaluate, serve"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_path, "Experiment config (JSON); built-in default if omitted");
  app.add_option("--set", common.overrides, "Override a config field by dotted path, e.g. train.gradient_steps=1000");
  app.add_option("--output", common.output, "Output directory (overrides output_dir)");
  app.add_option("--parallel", common.parallel, "Train independent models in N worker processes")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", common.seed, "Base seed; non-zero re-derives every seed in the config");

  auto* collect_cmd = app.add_subcommand("collect", "Collect the configured datasets");
  std::vector<std::string> only_datasets;
  collect_cmd->add_option("--dataset", only_datasets, "Only these datasets");

  auto* train_cmd = app.add_subcommand("train", "Train models on collected datasets");
  std::vector<std::string> only_models;
  train_cmd->add_option("--model", only_models, "Only these trainings (by name)");

  auto* eval_cmd = app.add_subcommand("eval", "Run the configured evaluations on trained models");
  std::vector<std::string> eval_kinds;
  eval_cmd->add_option("--kind", eval_kinds, "rollout, trace, keystep, histogram or abtest");

  app.add_subcommand("abtest", "Run the AB test evaluation and print the table");

  auto* serve_cmd = app.add_subcommand("serve", "Start the teleoperation WebSocket service");
  int port = 8765;
  std::string hint = "VBT";
  std::string address = "127.0.0.1";
  serve_cmd->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--hint", hint, "Protocol hint: VBT, Success, Coverage, LfP or none");
  serve_cmd->add_option("--address", address, "Bind address");

  app.add_subcommand("reproduce", "Collect, train, evaluate and write the criteria summary");
  app.add_subcommand("show-config", "Print the resolved experiment config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  ExperimentConfig config;
  try {
    config = resolve(common);
  } catch (const std::exception& e) {
    std::cerr << "config: " << e.what() << '\n';
    return 1;
  }

  try {
    if (app.got_subcommand("show-config")) {
      std::cout << to_json(config).dump(2) << '\n';
      return 0;
    }
    if (app.got_subcommand(collect_cmd)) {
      const auto datasets = run_collect(config, only_datasets);
      for (const auto& [name, d] : datasets) {
        std::cout << name << ": " << d.episodes.size() << " episodes, " << d.total_steps() << " steps\n";
      }
      print_written(config);
      return 0;
    }
    if (app.got_subcommand(train_cmd)) {
      for (const auto& m : only_models) (void)config.training(m);
      const auto names = only_models.empty() ? all_trainings(config) : only_models;
      const auto datasets = load_datasets(config, datasets_of(config, names));
      const auto models = run_train(config, datasets, only_models);
      std::cout << "trained " << models.size() << " models\n";
      print_written(config);
      return 0;
    }
    if (app.got_subcommand(eval_cmd)) {
      std::vector<EvalKind> kinds;
      for (const auto& k : eval_kinds) kinds.push_back(parse_eval_kind(k));
      return run_eval(config, kinds);
    }
    if (app.got_subcommand("abtest")) return run_eval(config, {EvalKind::ABTest});
    if (app.got_subcommand(serve_cmd)) {
      ServiceOptions options;
      options.env = config.env;
      options.output_dir = common.output.empty() ? config.output_dir / "teleop" : config.output_dir;
      options.seed = config.seed;
      if (hint == "none") {
        options.hint.reset();
      } else {
        options.hint = parse_script_kind(hint);
      }
      TeleopServer server(options, static_cast<std::uint16_t>(port), address);
      std::cout << "vbt-teleop/1 listening on ws://" << address << ':' << server.port() << " (datasets in "
                << options.output_dir.string() << ")" << std::endl;
      server.run();
      return 0;
    }
    if (app.got_subcommand("reproduce")) {
      const auto results = reproduce(config);
      std::cout << summary_text(results.criteria, config.hash());
      print_written(config);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config: " << e.what() << '\n';
    return 1;
  } catch (const StageError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
