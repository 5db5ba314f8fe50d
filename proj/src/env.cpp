#include "vbt/env.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "vbt/common.hpp"

namespace vbt {

namespace {

constexpr std::array<std::string_view, 6> kActionNames = {"Left", "Right", "Up", "Down", "ToggleGripper",
                                                          "Terminate"};
constexpr std::array<std::string_view, 8> kEventNames = {
    "None", "MissedGrasp", "Grasp", "Release", "Drop", "Timeout", "TerminateSuccess", "TerminateFailure"};

std::pair<int, int> move_delta(Action action) {
  switch (action) {
    case Action::Left: return {-1, 0};
    case Action::Right: return {1, 0};
    case Action::Up: return {0, 1};
    case Action::Down: return {0, -1};
    default: return {0, 0};
  }
}

bool is_move(Action action) { return static_cast<int>(action) <= static_cast<int>(Action::Down); }

void check_action(const EnvConfig& config, Action action) {
  const int id = static_cast<int>(action);
  if (id < 0 || id >= config.num_actions()) {
    throw ContractViolation("action id " + std::to_string(id) + " is not valid for " +
                            std::string(to_string(config.kind)));
  }
}

double normalise(int v, int extent) { return extent > 1 ? static_cast<double>(v) / (extent - 1) : 0.0; }

}  // namespace

std::string_view to_string(EnvKind kind) { return kind == EnvKind::LiftWorld ? "LiftWorld" : "GridWorld"; }

std::string_view to_string(Action action) {
  const int id = static_cast<int>(action);
  if (id < 0 || id >= static_cast<int>(kActionNames.size())) return "Invalid";
  return kActionNames[id];
}

std::string_view to_string(Event event) { return kEventNames[static_cast<int>(event)]; }

EnvKind parse_env_kind(std::string_view name) {
  if (name == "LiftWorld") return EnvKind::LiftWorld;
  if (name == "GridWorld") return EnvKind::GridWorld;
  throw ConfigError("unknown env kind '" + std::string(name) + "'");
}

Action parse_action(std::string_view name) {
  for (std::size_t i = 0; i < kActionNames.size(); ++i) {
    if (kActionNames[i] == name) return static_cast<Action>(i);
  }
  throw ConfigError("unknown action '" + std::string(name) + "'");
}

Event parse_event(std::string_view name) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == name) return static_cast<Event>(i);
  }
  throw ConfigError("unknown event '" + std::string(name) + "'");
}

EnvConfig EnvConfig::grid_world() {
  EnvConfig c;
  c.kind = EnvKind::GridWorld;
  c.clutter_dim = 0;
  return c;
}

bool EnvConfig::is_wall(int x, int y) const {
  return kind == EnvKind::GridWorld && x == layout.wall_x && y != layout.gap_y;
}

void EnvConfig::validate() const {
  if (grid_width < 2 || grid_height < 2) throw ConfigError("grid dimensions must be at least 2x2");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (clutter_dim < 0) throw ConfigError("clutter_dim must be non-negative");
  if (!(clutter_noise_sigma >= 0.0)) throw ConfigError("clutter_noise_sigma must be >= 0");
  if (!(clutter_session_spread >= 0.0 && clutter_session_spread <= 0.5)) {
    throw ConfigError("clutter_session_spread must lie in [0, 0.5]");
  }
  if (kind == EnvKind::LiftWorld) {
    if (lift_threshold_z < 1 || lift_threshold_z >= grid_height) {
      throw ConfigError("lift_threshold_z must lie in [1, grid_height)");
    }
  } else {
    const auto& l = layout;
    if (l.wall_x <= 0 || l.wall_x >= grid_width - 1) throw ConfigError("wall_x must be an interior column");
    if (l.gap_y < 0 || l.gap_y >= grid_height) throw ConfigError("gap_y out of range");
    if (l.goal_x < 0 || l.goal_x >= grid_width || l.goal_y < 0 || l.goal_y >= grid_height) {
      throw ConfigError("goal out of range");
    }
    if (is_wall(l.goal_x, l.goal_y)) throw ConfigError("goal lies inside the wall");
  }
}

std::string EnvConfig::hash() const { return to_hex(fnv1a(to_json(*this).dump())); }

nlohmann::json to_json(const EnvConfig& c) {
  return {
      {"kind", std::string(to_string(c.kind))},
      {"grid_width", c.grid_width},
      {"grid_height", c.grid_height},
      {"max_steps", c.max_steps},
      {"step_penalty", c.step_penalty},
      {"success_reward", c.success_reward},
      {"lift_threshold_z", c.lift_threshold_z},
      {"clutter_dim", c.clutter_dim},
      {"clutter_noise_sigma", c.clutter_noise_sigma},
      {"clutter_session_spread", c.clutter_session_spread},
      {"layout",
       {{"wall_x", c.layout.wall_x},
        {"gap_y", c.layout.gap_y},
        {"goal_x", c.layout.goal_x},
        {"goal_y", c.layout.goal_y}}},
  };
}

EnvConfig env_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("env config must be an object");
  EnvConfig c;
  if (j.contains("kind")) c.kind = parse_env_kind(j.at("kind").get<std::string>());
  if (c.kind == EnvKind::GridWorld) c = EnvConfig::grid_world();
  try {
    c.grid_width = j.value("grid_width", c.grid_width);
    c.grid_height = j.value("grid_height", c.grid_height);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.step_penalty = j.value("step_penalty", c.step_penalty);
    c.success_reward = j.value("success_reward", c.success_reward);
    c.lift_threshold_z = j.value("lift_threshold_z", c.lift_threshold_z);
    c.clutter_dim = j.value("clutter_dim", c.clutter_dim);
    c.clutter_noise_sigma = j.value("clutter_noise_sigma", c.clutter_noise_sigma);
    c.clutter_session_spread = j.value("clutter_session_spread", c.clutter_session_spread);
    if (j.contains("layout")) {
      const auto& l = j.at("layout");
      c.layout.wall_x = l.value("wall_x", c.layout.wall_x);
      c.layout.gap_y = l.value("gap_y", c.layout.gap_y);
      c.layout.goal_x = l.value("goal_x", c.layout.goal_x);
      c.layout.goal_y = l.value("goal_y", c.layout.goal_y);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("env config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> draw_clutter_mean(const EnvConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> mean(static_cast<std::size_t>(config.clutter_dim));
  for (auto& m : mean) m = 0.5 + config.clutter_session_spread * (2.0 * rng.uniform() - 1.0);
  return mean;
}

ResetOutput reset(const EnvConfig& config, std::uint64_t seed,
                  const std::optional<std::vector<double>>& clutter_mean) {
  config.validate();
  if (clutter_mean) {
    if (static_cast<int>(clutter_mean->size()) != config.clutter_dim) {
      throw ConfigError("clutter_mean length " + std::to_string(clutter_mean->size()) +
                        " does not match clutter_dim " + std::to_string(config.clutter_dim));
    }
    for (double m : *clutter_mean) {
      if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("clutter_mean components must lie in [0,1]");
    }
  }

  Rng rng(seed);
  EnvState s;
  s.seed = seed;
  if (config.kind == EnvKind::LiftWorld) {
    s.gripper_x = rng.uniform_int(config.grid_width);
    s.gripper_z = 1 + rng.uniform_int(config.grid_height - 1);
    s.object_x = rng.uniform_int(config.grid_width);
    s.object_z = 0;
  } else {
    std::vector<std::pair<int, int>> free_cells;
    for (int x = 0; x < config.grid_width; ++x) {
      for (int y = 0; y < config.grid_height; ++y) {
        if (config.is_wall(x, y) || (x == config.layout.goal_x && y == config.layout.goal_y)) continue;
        free_cells.emplace_back(x, y);
      }
    }
    const auto [x, y] = free_cells[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(free_cells.size())))];
    s.gripper_x = x;
    s.gripper_z = y;
  }

  s.clutter.resize(static_cast<std::size_t>(config.clutter_dim));
  for (std::size_t i = 0; i < s.clutter.size(); ++i) {
    const double v = clutter_mean ? (*clutter_mean)[i] + config.clutter_noise_sigma * rng.normal() : rng.uniform();
    s.clutter[i] = std::clamp(v, 0.0, 1.0);
  }
  return {s, observe(config, s)};
}

Observation observe(const EnvConfig& config, const EnvState& s) {
  Observation obs;
  obs.reserve(static_cast<std::size_t>(config.observation_size()));
  obs.push_back(normalise(s.gripper_x, config.grid_width));
  obs.push_back(normalise(s.gripper_z, config.grid_height));
  if (config.kind == EnvKind::LiftWorld) {
    obs.push_back(s.gripper_closed ? 1.0 : 0.0);
    obs.push_back(normalise(s.object_x, config.grid_width));
    obs.push_back(normalise(s.object_z, config.grid_height));
  }
  obs.insert(obs.end(), s.clutter.begin(), s.clutter.end());
  return obs;
}

StepOutput step(const EnvConfig& config, const EnvState& state, Action action) {
  return config.kind == EnvKind::LiftWorld ? liftworld_step(config, state, action)
                                           : gridworld_step(config, state, action);
}

StepOutput liftworld_step(const EnvConfig& config, const EnvState& state, Action action) {
  if (state.done) throw ContractViolation("step called on a finished episode");
  check_action(config, action);

  EnvState s = state;
  s.step_count += 1;
  Event event = Event::None;
  double reward = config.step_penalty;

  if (is_move(action)) {
    const auto [dx, dz] = move_delta(action);
    s.gripper_x = std::clamp(s.gripper_x + dx, 0, config.grid_width - 1);
    s.gripper_z = std::clamp(s.gripper_z + dz, 0, config.grid_height - 1);
    if (s.held) {
      s.object_x = s.gripper_x;
      s.object_z = s.gripper_z;
    }
  } else if (action == Action::ToggleGripper) {
    if (!s.gripper_closed) {
      s.gripper_closed = true;
      if (s.gripper_x == s.object_x && s.gripper_z == 0 && s.object_z == 0) {
        s.held = true;
        event = Event::Grasp;
      } else {
        event = Event::MissedGrasp;
      }
    } else {
      s.gripper_closed = false;
      if (s.held) {
        s.held = false;
        s.object_x = s.gripper_x;
        s.object_z = 0;
        event = Event::Drop;
      } else {
        event = Event::Release;
      }
    }
  } else {  // Terminate
    s.done = true;
    if (s.held && s.gripper_z >= config.lift_threshold_z) {
      reward = config.success_reward;
      s.succeeded = true;
      event = Event::TerminateSuccess;
    } else {
      event = Event::TerminateFailure;
    }
  }

  if (!s.done && s.step_count >= config.max_steps) {
    s.done = true;
    event = Event::Timeout;
  }
  s.last_event = event;
  return {s, StepResult{observe(config, s), reward, s.done, s.succeeded, event}};
}

StepOutput gridworld_step(const EnvConfig& config, const EnvState& state, Action action) {
  if (state.done) throw ContractViolation("step called on a finished episode");
  check_action(config, action);

  EnvState s = state;
  s.step_count += 1;
  Event event = Event::None;
  double reward = config.step_penalty;

  const auto [dx, dy] = move_delta(action);
  const int nx = s.gripper_x + dx;
  const int ny = s.gripper_z + dy;
  const bool inside = nx >= 0 && nx < config.grid_width && ny >= 0 && ny < config.grid_height;
  if (inside && !config.is_wall(nx, ny)) {
    s.gripper_x = nx;
    s.gripper_z = ny;
  }
  if (s.gripper_x == config.layout.goal_x && s.gripper_z == config.layout.goal_y) {
    s.done = true;
    s.succeeded = true;
    reward = config.success_reward;
    event = Event::TerminateSuccess;
  } else if (s.step_count >= config.max_steps) {
    s.done = true;
    event = Event::Timeout;
  }
  s.last_event = event;
  return {s, StepResult{observe(config, s), reward, s.done, s.succeeded, event}};
}

Render render(const EnvConfig& config, const EnvState& s) {
  const bool lift = config.kind == EnvKind::LiftWorld;
  std::vector<std::string> rows;
  for (int y = config.grid_height - 1; y >= 0; --y) {
    std::string row;
    for (int x = 0; x < config.grid_width; ++x) {
      if (x > 0) row += ' ';
      const bool gripper_here = s.gripper_x == x && s.gripper_z == y;
      if (lift) {
        row += gripper_here ? (s.gripper_closed ? 'V' : 'U') : '.';
        row += (s.object_x == x && s.object_z == y) ? 'o' : '.';
      } else {
        row += gripper_here ? 'A' : '.';
        if (config.is_wall(x, y)) {
          row += '#';
        } else if (x == config.layout.goal_x && y == config.layout.goal_y) {
          row += '*';
        } else {
          row += '.';
        }
      }
    }
    rows.push_back(std::move(row));
  }

  std::ostringstream status;
  status << "step " << s.step_count << "/" << config.max_steps;
  if (lift) {
    status << " | gripper " << (s.gripper_closed ? "closed" : "open") << " | held " << (s.held ? "yes" : "no");
  }
  status << " | event " << to_string(s.last_event) << " | done " << (s.done ? "yes" : "no");
  if (s.done) status << " | " << (s.succeeded ? "success" : "failure");

  std::string text;
  for (const auto& r : rows) text += r + "\n";
  text += status.str() + "\n";

  nlohmann::json scene = {
      {"kind", std::string(to_string(config.kind))},
      {"width", config.grid_width},
      {"height", config.grid_height},
      {"step_count", s.step_count},
      {"max_steps", config.max_steps},
      {"done", s.done},
      {"succeeded", s.succeeded},
      {"event", std::string(to_string(s.last_event))},
      {"clutter", s.clutter},
      {"grid", rows},
      {"status", status.str()},
  };
  if (lift) {
    scene["gripper"] = {{"x", s.gripper_x}, {"z", s.gripper_z}, {"closed", s.gripper_closed}};
    scene["object"] = {{"x", s.object_x}, {"z", s.object_z}};
    scene["held"] = s.held;
    scene["lift_threshold_z"] = config.lift_threshold_z;
  } else {
    scene["agent"] = {{"x", s.gripper_x}, {"y", s.gripper_z}};
    scene["goal"] = {{"x", config.layout.goal_x}, {"y", config.layout.goal_y}};
    scene["wall"] = {{"x", config.layout.wall_x}, {"gap_y", config.layout.gap_y}};
  }
  return {std::move(text), std::move(scene)};
}

Environment::Environment(EnvConfig config) : config_(std::move(config)) { config_.validate(); }

const Observation& Environment::reset(std::uint64_t seed, const std::optional<std::vector<double>>& clutter_mean) {
  auto out = vbt::reset(config_, seed, clutter_mean);
  state_ = std::move(out.state);
  observation_ = std::move(out.observation);
  started_ = true;
  return observation_;
}

StepResult Environment::step(Action action) {
  if (!started_) throw ContractViolation("step called before reset");
  auto out = vbt::step(config_, state_, action);
  state_ = std::move(out.state);
  observation_ = out.result.observation;
  return std::move(out.result);
}

}  // namespace vbt
