#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vbt {

enum class EnvKind { GridWorld, LiftWorld };

// Stable integer ids. GridWorld uses only the four moves (ids 0..3).
enum class Action : int { Left = 0, Right = 1, Up = 2, Down = 3, ToggleGripper = 4, Terminate = 5 };

enum class Event : int {
  None,
  MissedGrasp,
  Grasp,
  Release,
  Drop,
  Timeout,
  TerminateSuccess,
  TerminateFailure,
};

inline constexpr int kLiftWorldActions = 6;
inline constexpr int kGridWorldActions = 4;

std::string_view to_string(EnvKind kind);
std::string_view to_string(Action action);
std::string_view to_string(Event event);
EnvKind parse_env_kind(std::string_view name);
Action parse_action(std::string_view name);
Event parse_event(std::string_view name);

// One vertical wall with a single gap and a goal cell.
struct GridLayout {
  int wall_x = 3;
  int gap_y = 0;
  int goal_x = 6;
  int goal_y = 4;

  bool operator==(const GridLayout&) const = default;
};

struct EnvConfig {
  EnvKind kind = EnvKind::LiftWorld;
  int grid_width = 7;
  int grid_height = 5;
  int max_steps = 100;
  double step_penalty = -0.01;
  double success_reward = 1.0;
  int lift_threshold_z = 3;
  int clutter_dim = 8;
  double clutter_noise_sigma = 0.1;
  // Session means are drawn from Uniform[0.5 - spread, 0.5 + spread]^dim.
  double clutter_session_spread = 0.2;
  GridLayout layout;

  static EnvConfig lift_world() { return {}; }
  static EnvConfig grid_world();

  // Throws ConfigError on invalid dimensions or ranges.
  void validate() const;

  int num_actions() const { return kind == EnvKind::LiftWorld ? kLiftWorldActions : kGridWorldActions; }
  int observation_size() const { return (kind == EnvKind::LiftWorld ? 5 : 2) + clutter_dim; }
  bool is_wall(int x, int y) const;

  // Hex digest of the canonical JSON form.
  std::string hash() const;

  bool operator==(const EnvConfig&) const = default;
};

nlohmann::json to_json(const EnvConfig& config);
EnvConfig env_config_from_json(const nlohmann::json& j);

// For GridWorld the gripper fields hold the agent position (x, y) and the
// object fields are unused.
struct EnvState {
  int gripper_x = 0;
  int gripper_z = 0;
  bool gripper_closed = false;
  int object_x = 0;
  int object_z = 0;
  bool held = false;
  int step_count = 0;
  std::vector<double> clutter;
  bool done = false;
  bool succeeded = false;
  Event last_event = Event::None;
  std::uint64_t seed = 0;

  bool operator==(const EnvState&) const = default;
};

using Observation = std::vector<double>;

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  bool succeeded = false;
  Event event = Event::None;

  bool operator==(const StepResult&) const = default;
};

struct ResetOutput {
  EnvState state;
  Observation observation;
};

struct StepOutput {
  EnvState state;
  StepResult result;
};

ResetOutput reset(const EnvConfig& config, std::uint64_t seed,
                  const std::optional<std::vector<double>>& clutter_mean = std::nullopt);

// Dispatches on config.kind. Throws ContractViolation when state.done.
StepOutput step(const EnvConfig& config, const EnvState& state, Action action);
StepOutput liftworld_step(const EnvConfig& config, const EnvState& state, Action action);
StepOutput gridworld_step(const EnvConfig& config, const EnvState& state, Action action);

Observation observe(const EnvConfig& config, const EnvState& state);

struct Render {
  std::string text;
  nlohmann::json scene;
};

Render render(const EnvConfig& config, const EnvState& state);

// Draws a per-session clutter mean (see clutter_session_spread).
std::vector<double> draw_clutter_mean(const EnvConfig& config, std::uint64_t seed);

/// Stateful wrapper around reset/step for callers that drive one episode
/// at a time (rollouts, the teleop service).
class Environment {
 public:
  explicit Environment(EnvConfig config);

  const Observation& reset(std::uint64_t seed,
                           const std::optional<std::vector<double>>& clutter_mean = std::nullopt);
  StepResult step(Action action);

  const EnvConfig& config() const { return config_; }
  const EnvState& state() const { return state_; }
  const Observation& observation() const { return observation_; }
  bool started() const { return started_; }

 private:
  EnvConfig config_;
  EnvState state_;
  Observation observation_;
  bool started_ = false;
};

}  // namespace vbt
