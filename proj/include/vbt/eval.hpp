#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vbt/dataset.hpp"
#include "vbt/learn.hpp"
#include "vbt/teleop.hpp"

namespace vbt {

/// Anything that can drive an Environment for one episode at a time.
class Policy {
 public:
  virtual ~Policy() = default;
  // Number of frames the policy wants in `stacked`.
  virtual int frame_stack_k() const { return 1; }
  virtual void begin_episode(const EnvConfig& /*env*/, const EnvState& /*state*/, Rng& /*rng*/) {}
  virtual Action act(const EnvConfig& env, const EnvState& state, const std::vector<double>& stacked, Rng& rng) = 0;
};

// Greedy = argmax with ties to the lowest action id; otherwise samples.
class NetworkPolicy : public Policy {
 public:
  NetworkPolicy(const TrainedModels& models, bool greedy = true);
  int frame_stack_k() const override { return models_->frame_stack_k; }
  Action act(const EnvConfig& env, const EnvState& state, const std::vector<double>& stacked, Rng& rng) override;

 private:
  const TrainedModels* models_;
  bool greedy_;
};

class ScriptedPolicy : public Policy {
 public:
  explicit ScriptedPolicy(ScriptConfig config) : config_(std::move(config)) {}
  void begin_episode(const EnvConfig& env, const EnvState& state, Rng& rng) override;
  Action act(const EnvConfig& env, const EnvState& state, const std::vector<double>& stacked, Rng& rng) override;

 private:
  ScriptConfig config_;
  ScriptState script_;
};

class ConstantPolicy : public Policy {
 public:
  explicit ConstantPolicy(Action action) : action_(action) {}
  Action act(const EnvConfig&, const EnvState&, const std::vector<double>&, Rng&) override { return action_; }

 private:
  Action action_;
};

// sqrt(p (1 - p) / n)
double binomial_stderr(double p, int n);

// Deployment clutter. SessionMean: one mean for the whole evaluation (drawn
// from the evaluation seed unless given). EpisodeSession: every episode is a
// fresh session with its own mean. Uniform: Uniform[0,1] clutter per episode.
struct ClutterPolicy {
  enum class Mode { SessionMean, EpisodeSession, Uniform } mode = Mode::SessionMean;
  std::optional<std::vector<double>> mean;
};

std::string_view to_string(ClutterPolicy::Mode mode);
ClutterPolicy::Mode parse_clutter_mode(std::string_view name);

std::optional<std::vector<double>> deployment_clutter_mean(const EnvConfig& env, const ClutterPolicy& clutter,
                                                           std::uint64_t seed);
// Mean for one episode given the evaluation-level mean from deployment_clutter_mean.
std::optional<std::vector<double>> episode_clutter_mean(const EnvConfig& env, const ClutterPolicy& clutter,
                                                        const std::optional<std::vector<double>>& session_mean,
                                                        std::uint64_t env_seed);

struct EpisodeOutcome {
  bool succeeded = false;
  int length = 0;
  Event final_event = Event::None;
};

// Runs one episode of `policy` from the given reset.
EpisodeOutcome run_policy_episode(Policy& policy, const EnvConfig& env, std::uint64_t env_seed,
                                  const std::optional<std::vector<double>>& clutter_mean, Rng& rng);

struct RolloutReport {
  int n = 0;
  int successes = 0;
  double success_rate = 0.0;
  double stderr_ = 0.0;
  double mean_length = 0.0;
};

// Episode i uses env seed derive_seed(seed, i); aggregation is in episode order.
RolloutReport rollout(Policy& policy, const EnvConfig& env, int n_episodes, std::uint64_t seed,
                      const ClutterPolicy& clutter = {});

nlohmann::json to_json(const RolloutReport& report);

struct TraceRecord {
  int t = 0;
  double q = 0.0;  // Q of the taken action
  double v = 0.0;
  Event event = Event::None;
};

using TraceSeries = std::vector<TraceRecord>;

// Throws ContractViolation("no critic ...") for BC models.
TraceSeries trace(const TrainedModels& models, const Episode& episode);
std::string trace_csv(const TraceSeries& series);
// Index of the most negative q[t+1] - q[t]; the step after the drop is returned.
int sharpest_q_drop(const TraceSeries& series);

struct KeyStep {
  std::string name;
  double mean_q = 0.0;
  double mean_v = 0.0;
  double stderr_q = 0.0;
  double stderr_v = 0.0;
  int n = 0;

  double gap() const { return mean_q - mean_v; }
  // sqrt(stderr_q^2 + stderr_v^2)
  double pooled_stderr() const;
};

struct KeyStepStats {
  KeyStep missed_grasp;
  KeyStep recovery_open;
  KeyStep successful_grasp;
};

// Every test episode must pass validate_vbt; values are taken at the
// validator's indices (Q of the taken action, V of the state before it).
KeyStepStats keystep_stats(const TrainedModels& models, std::span<const Episode> test_set);
std::string keystep_csv(const KeyStepStats& stats);
nlohmann::json to_json(const KeyStepStats& stats);

// Mean and standard error with the 1/n variance, so that duplicating every
// sample k times scales the stderr by exactly 1/sqrt(k).
std::pair<double, double> mean_and_stderr(std::span<const double> values);

// Exact 1-Wasserstein distance between two empirical distributions,
// the integral of |F_a - F_b|. Sizes may differ.
double wasserstein1(std::vector<double> a, std::vector<double> b);

struct HistogramReport {
  std::vector<double> train_q;
  std::vector<double> test_q;
  std::vector<double> bin_edges;
  std::vector<int> train_counts;
  std::vector<int> test_counts;
  double divergence = 0.0;
};

// Q(s, a) over every stacked transition of both sets.
HistogramReport q_histograms(const TrainedModels& models, const Dataset& train_set, const Dataset& test_set,
                             int bins = 30);
std::vector<double> dataset_q_values(const TrainedModels& models, const Dataset& dataset);
std::string histogram_csv(const HistogramReport& report);

struct ABArm {
  std::string dataset;
  std::string algorithm;
  Policy* policy = nullptr;

  std::string name() const { return dataset + "/" + algorithm; }
};

struct ABRow {
  std::string dataset;
  std::string algorithm;
  int n = 0;
  int successes = 0;
  double success_rate = 0.0;
  double stderr_ = 0.0;
};

struct ABTestReport {
  std::vector<ABRow> rows;  // in the order the arms were given
  int total_episodes = 0;
  std::uint64_t seed = 0;

  const ABRow& row(const std::string& dataset, const std::string& algorithm) const;
};

// Each episode gets a fresh env seed and a uniformly drawn arm. Arms are
// assigned in name order, so permuting the input only permutes the rows.
ABTestReport ab_test(std::span<const ABArm> arms, const EnvConfig& env, int total_episodes, std::uint64_t seed,
                     const ClutterPolicy& clutter = {});
std::string ab_table_csv(const ABTestReport& report);
// Table-style text: dataset, policy, success +- stderr in percent.
std::string ab_table_text(const ABTestReport& report);
nlohmann::json to_json(const ABTestReport& report);

}  // namespace vbt
