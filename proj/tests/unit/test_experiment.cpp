#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../common/tiny_config.hpp"
#include "vbt/experiment.hpp"

using namespace vbt;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "vbt-unit-exp" / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("default config has the ten arms") {
  const auto c = experiment_config_from_json(default_experiment_json());
  CHECK(c.datasets.size() == 4);
  CHECK(c.trainings.size() == 10);
  CHECK(c.training("VBT/IQL").replicate_seeds.size() == 2);
  CHECK(c.evals.back().kind == EvalKind::ABTest);
  CHECK(c.evals.back().episodes >= 2000);
}

TEST_CASE("shipped configs/default.json equals the built-in default") {
  const auto path = std::filesystem::path(VBT_SOURCE_DIR) / "configs" / "default.json";
  const auto shipped = load_experiment_config(path);
  CHECK(shipped.hash() == experiment_config_from_json(default_experiment_json()).hash());
}

TEST_CASE("config json round trip") {
  const auto c = experiment_config_from_json(default_experiment_json());
  const auto back = experiment_config_from_json(to_json(c));
  CHECK(back.hash() == c.hash());
}

TEST_CASE("overrides") {
  auto j = default_experiment_json();
  apply_override(j, "train.gradient_steps=123");
  apply_override(j, "datasets.1.sources.0.seed=9");
  apply_override(j, "output_dir=somewhere");
  apply_override(j, "env.clutter_session_spread=0.2");
  const auto c = experiment_config_from_json(j);
  CHECK(c.train.gradient_steps == 123);
  CHECK(c.datasets[1].sources[0].seed == 9);
  CHECK(c.output_dir == "somewhere");
  CHECK(c.env.clutter_session_spread == 0.2);
  CHECK_THROWS_AS(apply_override(j, "no-equals"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "datasets.x.budget=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "datasets.99.budget=1"), ConfigError);
}

TEST_CASE("hash ignores output location and parallelism") {
  auto j = default_experiment_json();
  const auto h = experiment_config_from_json(j).hash();
  j["output_dir"] = "elsewhere";
  j["parallel"] = 4;
  CHECK(experiment_config_from_json(j).hash() == h);
  j["train"]["gamma"] = 0.98;
  CHECK(experiment_config_from_json(j).hash() != h);
}

TEST_CASE("validation names unknown references") {
  auto j = default_experiment_json();
  j["trainings"][0]["dataset"] = "Nope";
  try {
    experiment_config_from_json(j).validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("Nope") != std::string::npos);
  }
  auto k = default_experiment_json();
  k["evals"][0]["models"] = {"Ghost/BC"};
  CHECK_THROWS_AS(experiment_config_from_json(k).validate(), ConfigError);
  auto s = default_experiment_json();
  s["schema"] = "other/9";
  CHECK_THROWS_AS(experiment_config_from_json(s), ConfigError);
}

TEST_CASE("a non-zero base seed re-derives every seed") {
  auto c = experiment_config_from_json(default_experiment_json());
  CHECK(c.effective_seed(101) == 101);
  c.seed = 5;
  CHECK(c.effective_seed(101) == derive_seed(5, 101));
}

TEST_CASE("stages fail clearly when inputs are missing") {
  const auto config = experiment_config_from_json(tiny_experiment_json(fresh_dir("missing")));
  try {
    load_datasets(config, {"VBT"});
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "load");
    CHECK(std::string(e.what()).find("run collect first") != std::string::npos);
  }
  CHECK_THROWS_AS(load_models_for(config, model_refs(config, {"VBT/IQL"}, false)), StageError);
}

TEST_CASE("tiny pipeline writes every artifact") {
  const auto dir = fresh_dir("tiny");
  const auto config = experiment_config_from_json(tiny_experiment_json(dir));
  const auto results = reproduce(config);
  CHECK(std::filesystem::exists(dir / "datasets" / (slug("Coverage+Success") + ".jsonl")));
  CHECK(std::filesystem::exists(dir / "models" / (slug("VBT/IQL") + ".json")));
  CHECK(std::filesystem::exists(dir / "models" / "replicates"));
  for (const char* f : {"rollout.csv", "keystep.csv", "histogram.csv", "abtest.csv", "abtest.txt", "trace.json"}) {
    CHECK(std::filesystem::exists(dir / "reports" / f));
  }
  const auto csv = slurp(dir / "reports" / "abtest.csv");
  CHECK(csv.rfind(report_header(config.hash()), 0) == 0);
  CHECK(results.criteria.size() == 10);
  CHECK(slurp(dir / "summary.txt").find("A10") != std::string::npos);

  // Stage-by-stage runs reuse what is on disk.
  const auto datasets = load_datasets(config, {"VBT"});
  CHECK(datasets.at("VBT") == results.datasets.at("VBT"));
  const auto models = load_models_for(config, model_refs(config, {"VBT/IQL"}, true));
  CHECK(models.size() == 2);
}
