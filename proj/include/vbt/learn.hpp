#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vbt/dataset.hpp"
#include "vbt/nn.hpp"

namespace vbt {

inline constexpr std::string_view kModelSchema = "vbt-model/1";

enum class Algorithm { BC, AWAC, IQL };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);

struct TrainConfig {
  double gamma = 0.99;
  double expectile_tau = 0.9;
  double inv_temperature_beta = 0.1;
  double weight_clip = 100.0;
  double learning_rate = 3e-4;
  int batch_size = 256;
  long gradient_steps = 50'000;
  double target_update_polyak = 0.005;
  int frame_stack_k = 4;
  std::vector<int> hidden_sizes = {64, 64};
  long log_every = 100;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& config);
// Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

inline constexpr double kNoLoss = std::numeric_limits<double>::quiet_NaN();

struct LossRecord {
  long step = 0;
  double policy = kNoLoss;
  double q = kNoLoss;
  double v = kNoLoss;
};

struct TrainedModels {
  Algorithm algorithm = Algorithm::BC;
  int frame_stack_k = 4;
  int observation_size = 0;  // single frame
  int num_actions = 0;
  Mlp policy;
  std::optional<Mlp> q;
  std::optional<Mlp> q_target;
  std::optional<Mlp> v;
  std::vector<LossRecord> loss_history;
  TrainConfig config;

  int input_size() const { return frame_stack_k * observation_size; }
  bool has_critic() const { return q.has_value(); }
};

struct Optimizers {
  AdamState policy;
  AdamState q;
  AdamState v;
};

// Fresh networks for the algorithm; members follow the algorithm tag
// (BC: policy; AWAC: + q, q_target; IQL: + v).
TrainedModels init_models(Algorithm algorithm, int observation_size, int num_actions, const TrainConfig& config);

/// Stacked samples of a dataset as dense column matrices, built once per
/// training run.
struct Batch {
  Eigen::MatrixXd observations;       // input_size x n
  Eigen::MatrixXd next_observations;  // input_size x n
  std::vector<int> actions;
  Eigen::VectorXd rewards;
  Eigen::VectorXd dones;

  int size() const { return static_cast<int>(actions.size()); }
};

Batch make_batch(std::span<const StackedSample> samples);
Batch table_from_dataset(const Dataset& dataset, int k);
Batch gather(const Batch& table, std::span<const int> indices);
// Uniform with replacement; draws indices exactly like sample_batch().
Batch sample_table(const Batch& table, int batch_size, Rng& rng);

// |tau - 1{u<0}| * u^2
double expectile_loss(double u, double tau);
// min(exp(beta * (q - v)), clip)
double awr_weight(double q_sa, double v_s, double beta, double clip);

struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

// Mean weighted negative log-likelihood of `actions` under softmax(policy(obs)).
// Empty `weights` means uniform weights of one; weights are constants.
LossGrad nll_loss(const Mlp& policy, const Eigen::MatrixXd& obs, std::span<const int> actions,
                  const Eigen::VectorXd& weights = {});
// Mean expectile loss of targets - V(obs).
LossGrad expectile_value_loss(const Mlp& value, const Eigen::MatrixXd& obs, const Eigen::VectorXd& targets,
                              double tau);
// Mean squared TD error of Q(obs, action) against fixed targets.
LossGrad td_loss(const Mlp& q, const Eigen::MatrixXd& obs, std::span<const int> actions,
                 const Eigen::VectorXd& targets);

Eigen::VectorXd taken_values(const Eigen::MatrixXd& per_action, std::span<const int> actions);

// r + gamma * (1 - done) * V(s')
Eigen::VectorXd iql_q_targets(const TrainedModels& models, const Batch& batch, double gamma);
// r + gamma * (1 - done) * sum_a' pi(a'|s') Q_target(s', a')
Eigen::VectorXd awac_q_targets(const TrainedModels& models, const Batch& batch, double gamma);
// awr_weight(Q_target(s,a), V(s)) per sample
Eigen::VectorXd iql_policy_weights(const TrainedModels& models, const Batch& batch, const TrainConfig& config);
// min(exp(beta * (Q_target(s,a) - sum_a pi(a|s) Q_target(s,a))), clip)
Eigen::VectorXd awac_policy_weights(const TrainedModels& models, const Batch& batch, const TrainConfig& config);

LossRecord bc_update(TrainedModels& models, const Batch& batch, Optimizers& optim, const TrainConfig& config);
LossRecord iql_update(TrainedModels& models, const Batch& batch, Optimizers& optim, const TrainConfig& config);
LossRecord awac_update(TrainedModels& models, const Batch& batch, Optimizers& optim, const TrainConfig& config);

// Deterministic in (dataset, config). Throws TrainingError naming the step
// and loss term when a loss becomes non-finite.
TrainedModels train(Algorithm algorithm, const Dataset& dataset, const TrainConfig& config);

// Per-network evaluation on stacked inputs (input_size x n).
Eigen::MatrixXd policy_probabilities(const TrainedModels& models, const Eigen::MatrixXd& obs);
Eigen::MatrixXd q_values(const TrainedModels& models, const Eigen::MatrixXd& obs);
// IQL: V network. AWAC: sum_a pi(a|s) Q(s,a). BC: ContractViolation.
Eigen::VectorXd state_values(const TrainedModels& models, const Eigen::MatrixXd& obs);

nlohmann::json to_json(const TrainedModels& models);
TrainedModels models_from_json(const nlohmann::json& j);
void save_models(const TrainedModels& models, const std::filesystem::path& path, const std::string& config_hash = {});
TrainedModels load_models(const std::filesystem::path& path);
std::string loss_history_csv(const TrainedModels& models);

enum class LossTerm { BcNll, ExpectileV, TdQ, AwrPolicy, Constant };

std::string_view to_string(LossTerm term);

struct GradCheckSpec {
  int input_size = 6;
  std::vector<int> hidden_sizes = {8, 8};
  int num_actions = 4;
  int batch_size = 4;
  double expectile_tau = 0.9;
  double step = 1e-5;
  std::uint64_t seed = 0;
  std::vector<LossTerm> losses = {LossTerm::BcNll, LossTerm::ExpectileV, LossTerm::TdQ, LossTerm::AwrPolicy};
};

struct GradCheckReport {
  struct Entry {
    LossTerm term;
    double max_relative_error;
    double max_abs_analytic;
    double max_abs_numeric;
  };
  std::vector<Entry> entries;
  double max_relative_error = 0.0;
  bool passed = false;
};

// Compares analytic gradients of every loss against central differences.
// Per-entry error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport grad_check(const GradCheckSpec& spec, double tolerance);

/// Tabular IQL with exact per-table minimisation of the expectile and TD
/// losses; states and actions are indices.
struct TabularTransition {
  int state = 0;
  int action = 0;
  double reward = 0.0;
  int next_state = 0;
  bool done = false;
};

struct TabularValues {
  std::vector<double> v;
  std::vector<std::vector<double>> q;
  std::vector<std::vector<int>> counts;  // samples per (s, a)
  std::vector<bool> visited;
  int iterations = 0;
};

TabularValues tabular_iql(std::span<const TabularTransition> data, int n_states, int n_actions, double gamma,
                          double tau, int max_iterations = 10'000, double tolerance = 1e-12);

// Exact minimiser of sum_i w_i * |tau - 1{x_i < v}| * (x_i - v)^2.
double weighted_expectile(std::span<const double> values, std::span<const double> weights, double tau);

}  // namespace vbt
