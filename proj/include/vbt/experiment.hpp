#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbt/checks.hpp"
#include "vbt/dataset.hpp"
#include "vbt/eval.hpp"
#include "vbt/learn.hpp"
#include "vbt/teleop.hpp"

namespace vbt {

inline constexpr std::string_view kReportSchema = "vbt-report/1";
inline constexpr std::string_view kExperimentSchema = "vbt-experiment/1";

struct ScriptSource {
  ScriptKind kind = ScriptKind::Success;
  std::uint64_t seed = 0;
};

// One source is a plain collection; two sources are collected in separate
// sessions at budget/2 each and mixed.
struct DatasetRecipe {
  std::string name;
  std::vector<ScriptSource> sources;
  std::int64_t budget = 10'000;
};

struct TrainingSpec {
  std::string name;  // "<dataset>/<algorithm>" unless given
  Algorithm algorithm = Algorithm::BC;
  std::string dataset;
  nlohmann::json overrides = nlohmann::json::object();  // on top of the shared train block
  std::vector<std::uint64_t> replicate_seeds;           // extra training seeds
};

enum class EvalKind { Rollout, Trace, Keystep, Histogram, ABTest };

std::string_view to_string(EvalKind kind);
EvalKind parse_eval_kind(std::string_view name);

struct EvalSpec {
  EvalKind kind = EvalKind::Rollout;
  std::vector<std::string> models;
  std::uint64_t seed = 0;
  int episodes = 0;  // rollout/abtest episodes, keystep test episodes, trace episodes
  int bins = 30;     // histogram
  bool include_replicates = false;
  ClutterPolicy::Mode clutter = ClutterPolicy::Mode::SessionMean;
};

struct ExperimentConfig {
  EnvConfig env = EnvConfig::lift_world();
  ScriptConfig script;  // noise and offsets shared by every collection
  TrainConfig train;
  std::vector<DatasetRecipe> datasets;
  std::vector<TrainingSpec> trainings;
  std::vector<EvalSpec> evals;
  std::filesystem::path output_dir = "vbt-out";
  std::uint64_t seed = 0;  // non-zero re-derives every seed in the file
  int parallel = 1;

  // Throws ConfigError naming the first unresolved reference.
  void validate() const;
  std::uint64_t effective_seed(std::uint64_t seed) const;
  const DatasetRecipe& dataset(const std::string& name) const;
  const TrainingSpec& training(const std::string& name) const;
  TrainConfig train_config(const TrainingSpec& spec, std::uint64_t seed) const;
  // Hash of everything that determines the outputs (not output_dir or parallel).
  std::string hash() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// The desk-scale default: the four datasets, the ten arms of the AB grid,
// two extra seeds for the IQL arms, and one eval of each kind.
nlohmann::json default_experiment_json();

// key = dotted path ("train.gradient_steps", "datasets.0.budget"); the value
// is parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Collects a recipe. seed_offset re-seeds every source (fresh sessions).
Dataset collect_recipe(const ExperimentConfig& config, const DatasetRecipe& recipe, std::uint64_t seed_offset = 0);

std::string slug(const std::string& name);

struct ModelRef {
  std::string training;
  std::uint64_t seed = 0;
  bool replicate = false;

  std::string file_stem() const;
};

struct KeystepEntry {
  std::string training;
  std::uint64_t seed = 0;
  KeyStepStats stats;
};

struct HistogramEntry {
  std::string training;
  std::uint64_t seed = 0;
  double divergence = 0.0;
  std::size_t train_n = 0;
  std::size_t test_n = 0;
};

struct ExperimentResults {
  std::map<std::string, Dataset> datasets;
  std::vector<KeystepEntry> keysteps;
  std::vector<HistogramEntry> histograms;
  std::vector<ABTestReport> abtests;
  std::vector<std::pair<std::string, RolloutReport>> rollouts;
  std::vector<CriterionResult> criteria;
};

/// Pipeline stages. Each writes under config.output_dir and throws
/// StageError naming the stage on failure.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

std::map<std::string, Dataset> run_collect(const ExperimentConfig& config,
                                           const std::vector<std::string>& only = {});
std::map<std::string, Dataset> load_datasets(const ExperimentConfig& config, const std::vector<std::string>& names);
std::map<std::string, TrainedModels> run_train(const ExperimentConfig& config,
                                               const std::map<std::string, Dataset>& datasets,
                                               const std::vector<std::string>& only = {});
std::map<std::string, TrainedModels> load_models_for(const ExperimentConfig& config,
                                                     const std::vector<ModelRef>& refs);
std::vector<ModelRef> model_refs(const ExperimentConfig& config, const std::vector<std::string>& trainings,
                                 bool include_replicates);
void run_evals(const ExperimentConfig& config, const std::map<std::string, Dataset>& datasets,
               const std::map<std::string, TrainedModels>& models, ExperimentResults& results,
               const std::vector<EvalKind>& kinds = {});
// Everything, then summary.txt / summary.json.
ExperimentResults reproduce(const ExperimentConfig& config);

// Criteria verdicts from computed results (A6 to A8 and A10), plus the
// cheap property checks (A1 to A5) run in-process.
std::vector<CriterionResult> evaluate_criteria(const ExperimentConfig& config, const ExperimentResults& results);
std::string summary_text(const std::vector<CriterionResult>& criteria, const std::string& config_hash);

// Header line embedded in every CSV report.
std::string report_header(const std::string& config_hash);

}  // namespace vbt
