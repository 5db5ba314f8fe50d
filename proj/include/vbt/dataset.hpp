#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "vbt/common.hpp"
#include "vbt/env.hpp"

namespace vbt {

inline constexpr std::string_view kDatasetSchema = "vbt-dataset/1";

struct Transition {
  Observation observation;
  int action = 0;
  double reward = 0.0;
  Observation next_observation;
  bool done = false;
  bool succeeded = false;
  Event event = Event::None;

  bool operator==(const Transition&) const = default;
};

struct EpisodeMetadata {
  std::string script;  // ScriptKind name, or "human" for teleop sessions
  std::uint64_t seed = 0;
  std::vector<double> clutter_mean;
  std::string env_config_hash;

  bool operator==(const EpisodeMetadata&) const = default;
};

struct Episode {
  std::vector<Transition> transitions;
  EpisodeMetadata metadata;

  std::size_t size() const { return transitions.size(); }
  bool succeeded() const { return !transitions.empty() && transitions.back().succeeded; }
  std::vector<Event> events() const;

  bool operator==(const Episode&) const = default;
};

struct DatasetMetadata {
  std::vector<std::string> sources;
  std::vector<std::uint64_t> seeds;
  std::int64_t budget = 0;
  std::vector<std::vector<double>> clutter_means;
  // Hash of the experiment config that produced the file; empty if none.
  std::string config_hash;

  bool operator==(const DatasetMetadata&) const = default;
};

struct Dataset {
  EnvConfig env;
  std::vector<Episode> episodes;
  DatasetMetadata metadata;

  std::int64_t total_steps() const;
  bool empty() const { return episodes.empty(); }

  bool operator==(const Dataset&) const = default;
};

// Line-delimited JSON: one header line, then one line per episode.
void save(const Dataset& dataset, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);
std::string serialize(const Dataset& dataset);
Dataset parse_dataset(const std::string& text);

// Appends one episode line, writing the header first if the file is new.
void append_episode(const std::filesystem::path& path, const EnvConfig& env, const Episode& episode);

nlohmann::json episode_to_json(const Episode& episode);

struct StackedSample {
  std::vector<double> observation;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_observation;
  bool done = false;
};

// One sample per transition; frames before the episode start repeat the
// first observation.
std::vector<StackedSample> stack(const Episode& episode, int k);

// Rolling window for acting online; same layout and padding as stack().
class FrameStack {
 public:
  explicit FrameStack(int k);
  void reset(const Observation& first);
  void push(const Observation& next);
  // Oldest frame first.
  std::vector<double> stacked() const;
  int k() const { return k_; }

 private:
  int k_;
  std::vector<Observation> frames_;
};

// Episode-level split. Both halves keep the source metadata.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double test_fraction, std::uint64_t seed);

// Uniform with replacement over all stacked samples of the dataset.
std::vector<StackedSample> sample_batch(const Dataset& dataset, int k, int batch_size, Rng& rng);

struct VbtReport {
  bool ok = false;
  int failure_index = -1;   // MissedGrasp
  int recovery_index = -1;  // Release after the miss
  int success_index = -1;   // Grasp that leads to the successful lift
  std::string reason;
};

VbtReport validate_vbt(const Episode& episode);

// Sparse-label contract: every reward is the step penalty except at most a
// final success reward, only the last transition is done, and the return
// matches the success identity. Returns an empty string when the episode is
// consistent, otherwise a description of the first violation.
std::string check_labels(const Episode& episode, const EnvConfig& env);

}  // namespace vbt
