#include "vbt/teleop.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

namespace vbt {

namespace {

constexpr std::array<std::string_view, 4> kScriptNames = {"Success", "VBT", "Coverage", "LfP"};

constexpr std::array<std::string_view, 21> kPhaseNames = {
    "ApproachOffset", "MissClose",      "LiftFail",      "RecoverOpen",   "ReApproach",
    "Grasp",          "Lift",           "Terminate",     "CoverMissApproach", "CoverMissClose",
    "CoverMissLift",  "CoverRetryOpen", "CoverApproach", "CoverGrasp",    "CoverLift",
    "CoverDrop",      "CoverRegraspDescend", "CoverRegrasp", "CoverRelease", "CoverRaise",
    "Play"};

Action horizontal_first(const EnvState& s, int tx, int tz) {
  if (s.gripper_x != tx) return s.gripper_x < tx ? Action::Right : Action::Left;
  return s.gripper_z < tz ? Action::Up : Action::Down;
}

Action vertical_first(const EnvState& s, int tx, int tz) {
  if (s.gripper_z != tz) return s.gripper_z < tz ? Action::Up : Action::Down;
  return s.gripper_x < tx ? Action::Right : Action::Left;
}

bool at(const EnvState& s, int x, int z) { return s.gripper_x == x && s.gripper_z == z; }

// Side of the object for a deliberate miss: the side the gripper comes from,
// falling back to the other side at the grid edge.
int choose_side(const EnvConfig& env, const EnvState& s, int offset, Rng& rng) {
  int side = s.gripper_x > s.object_x ? 1 : (s.gripper_x < s.object_x ? -1 : (rng.bernoulli(0.5) ? 1 : -1));
  const auto valid = [&](int sd) {
    const int x = s.object_x + sd * offset;
    return x >= 0 && x < env.grid_width;
  };
  if (!valid(side)) side = -side;
  if (!valid(side)) throw ConfigError("miss_offset_cells leaves no valid miss position");
  return side;
}

class Planner {
 public:
  Planner(const ScriptConfig& config, const EnvConfig& env, ScriptState script, const EnvState& s, Rng& rng)
      : config_(config), env_(env), script_(script), s_(s), rng_(rng) {}

  std::pair<Action, ScriptState> next() {
    const Phase before = script_.phase;
    Action a = Action::Terminate;
    // Each phase either emits an action or hands over to another phase; the
    // guard catches a cycle in the phase graph.
    bool emitted = false;
    for (int guard = 0; guard < 32 && !emitted; ++guard) {
      emitted = dispatch(a);
    }
    if (!emitted) throw ContractViolation("teleop script failed to choose an action");
    script_.phase_step = script_.phase == before ? script_.phase_step + 1 : 1;
    return {a, script_};
  }

 private:
  void go(Phase p) { script_.phase = p; }

  int miss_x() const { return s_.object_x + script_.miss_side * config_.miss_offset_cells; }

  bool dispatch(Action& a) {
    switch (script_.kind) {
      case ScriptKind::Success:
      case ScriptKind::VBT: return success_or_vbt(a);
      case ScriptKind::Coverage: return coverage(a);
      case ScriptKind::LfP: return play(a);
    }
    return false;
  }

  // Shared tail: lift the held object and terminate.
  bool lift_and_terminate(Action& a, Phase on_lost) {
    if (script_.phase == Phase::Lift) {
      if (!s_.held) return go(on_lost), false;
      if (s_.gripper_z < env_.lift_threshold_z) return a = Action::Up, true;
      return go(Phase::Terminate), false;
    }
    // Terminate
    if (s_.held && s_.gripper_z >= env_.lift_threshold_z) return a = Action::Terminate, true;
    return go(Phase::Lift), false;
  }

  bool success_or_vbt(Action& a) {
    const int ox = s_.object_x;
    switch (script_.phase) {
      case Phase::ApproachOffset:
        if (s_.held || s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, miss_x(), 0)) return go(Phase::MissClose), false;
        return a = horizontal_first(s_, miss_x(), 0), true;
      case Phase::MissClose:
        if (s_.gripper_closed && !s_.held) return go(Phase::LiftFail), false;
        if (!s_.gripper_closed && at(s_, miss_x(), 0)) return a = Action::ToggleGripper, true;
        return go(Phase::ApproachOffset), false;
      case Phase::LiftFail:
        if (!s_.gripper_closed) return go(Phase::ReApproach), false;
        if (s_.gripper_z < script_.lift_target) return a = Action::Up, true;
        return go(Phase::RecoverOpen), false;
      case Phase::RecoverOpen:
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        return go(Phase::ReApproach), false;
      case Phase::ReApproach:
        // Success demonstrations approach above the object and descend;
        // VBT recoveries descend first and slide back to the object.
        if (s_.held) return go(Phase::Lift), false;
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, ox, 0)) return go(Phase::Grasp), false;
        return a = script_.kind == ScriptKind::VBT ? vertical_first(s_, ox, 0) : horizontal_first(s_, ox, 0), true;
      case Phase::Grasp:
        if (s_.held) return go(Phase::Lift), false;
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, ox, 0)) return a = Action::ToggleGripper, true;
        return go(Phase::ReApproach), false;
      case Phase::Lift:
      case Phase::Terminate: return lift_and_terminate(a, Phase::ReApproach);
      default: throw ContractViolation("phase " + std::string(to_string(script_.phase)) + " is not a " +
                                       std::string(to_string(script_.kind)) + " phase");
    }
  }

  bool coverage(Action& a) {
    const int ox = s_.object_x;
    switch (script_.phase) {
      case Phase::CoverMissApproach:
        if (s_.held || s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, miss_x(), 0)) return go(Phase::CoverMissClose), false;
        return a = horizontal_first(s_, miss_x(), 0), true;
      case Phase::CoverMissClose:
        if (s_.gripper_closed && !s_.held) {
          // Retry straight away on the floor, or after a short lift.
          script_.lift_target = rng_.uniform_int(2);
          return go(Phase::CoverMissLift), false;
        }
        if (!s_.gripper_closed && at(s_, miss_x(), 0)) return a = Action::ToggleGripper, true;
        return go(Phase::CoverMissApproach), false;
      case Phase::CoverMissLift:
        if (!s_.gripper_closed) return go(Phase::CoverApproach), false;
        if (s_.gripper_z < script_.lift_target) return a = Action::Up, true;
        return go(Phase::CoverRetryOpen), false;
      case Phase::CoverRetryOpen:
        if (s_.gripper_closed && !s_.held) return a = Action::ToggleGripper, true;
        return go(Phase::CoverApproach), false;
      case Phase::CoverApproach:
        if (s_.held) return go(Phase::CoverLift), false;
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, ox, 0)) return go(Phase::CoverGrasp), false;
        return a = vertical_first(s_, ox, 0), true;
      case Phase::CoverGrasp:
        if (s_.held) {
          script_.lift_target = 1 + rng_.uniform_int(2);
          return go(Phase::CoverLift), false;
        }
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, ox, 0)) return a = Action::ToggleGripper, true;
        return go(Phase::CoverApproach), false;
      case Phase::CoverLift:
        if (!s_.held) return go(Phase::CoverApproach), false;
        if (s_.gripper_z < script_.lift_target) return a = Action::Up, true;
        return go(Phase::CoverDrop), false;
      case Phase::CoverDrop:
        if (s_.held) return a = Action::ToggleGripper, true;
        return go(Phase::CoverRegraspDescend), false;
      case Phase::CoverRegraspDescend:
        if (s_.held) return go(Phase::CoverRelease), false;
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, ox, 0)) return go(Phase::CoverRegrasp), false;
        return a = vertical_first(s_, ox, 0), true;
      case Phase::CoverRegrasp:
        if (s_.held) return go(Phase::CoverRelease), false;
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (at(s_, ox, 0)) return a = Action::ToggleGripper, true;
        return go(Phase::CoverRegraspDescend), false;
      case Phase::CoverRelease:
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        return go(Phase::CoverRaise), false;
      case Phase::CoverRaise:
        if (s_.gripper_closed) return a = Action::ToggleGripper, true;
        if (s_.gripper_z < 1) return a = Action::Up, true;
        script_.cycle += 1;
        script_.miss_side = choose_side(env_, s_, config_.miss_offset_cells, rng_);
        if (rng_.bernoulli(0.5)) {
          const int flipped = s_.object_x - script_.miss_side * config_.miss_offset_cells;
          if (flipped >= 0 && flipped < env_.grid_width) script_.miss_side = -script_.miss_side;
        }
        return go(Phase::CoverMissApproach), false;
      default: throw ContractViolation("phase " + std::string(to_string(script_.phase)) + " is not a Coverage phase");
    }
  }

  // Seeded play: wander, prod at the object, drag and lift it when held.
  bool play(Action& a) {
    const int dx = std::abs(s_.gripper_x - s_.object_x);
    if (s_.held) {
      if (rng_.bernoulli(0.15)) return a = Action::ToggleGripper, true;
      return a = static_cast<Action>(rng_.uniform_int(4)), true;
    }
    if (s_.gripper_closed) {
      if (rng_.bernoulli(0.5)) return a = Action::ToggleGripper, true;
      return a = static_cast<Action>(rng_.uniform_int(4)), true;
    }
    if (dx <= 1 && s_.gripper_z <= 1 && rng_.bernoulli(0.35)) return a = Action::ToggleGripper, true;
    if (rng_.bernoulli(0.5)) {
      return a = rng_.bernoulli(0.5) ? horizontal_first(s_, s_.object_x, 0) : vertical_first(s_, s_.object_x, 0),
             true;
    }
    if (rng_.bernoulli(0.05)) return a = Action::ToggleGripper, true;
    return a = static_cast<Action>(rng_.uniform_int(4)), true;
  }

  const ScriptConfig& config_;
  const EnvConfig& env_;
  ScriptState script_;
  const EnvState& s_;
  Rng& rng_;
};

int toggle_events(const Episode& ep) {
  int n = 0;
  for (auto e : ep.events()) {
    if (e == Event::MissedGrasp || e == Event::Grasp || e == Event::Release || e == Event::Drop) ++n;
  }
  return n;
}

std::vector<double> session_mean(const EnvConfig& env, const ScriptConfig& config) {
  if (config.session_clutter_mean) return *config.session_clutter_mean;
  return draw_clutter_mean(env, derive_seed(config.seed, 0xC1u));
}

Dataset collect_until(const EnvConfig& env, const ScriptConfig& config, std::int64_t step_budget, int n_episodes) {
  env.validate();
  config.validate(env);
  const auto mean = session_mean(env, config);

  Dataset d;
  d.env = env;
  d.metadata.sources = {std::string(to_string(config.kind))};
  d.metadata.seeds = {config.seed};
  d.metadata.budget = step_budget;
  d.metadata.clutter_means = {mean};

  std::int64_t steps = 0;
  std::uint64_t attempt = 0;
  std::uint64_t rejected = 0;
  const auto done = [&] {
    return n_episodes > 0 ? static_cast<int>(d.episodes.size()) >= n_episodes : steps >= step_budget;
  };
  while (!done()) {
    const auto seed = derive_seed(config.seed, 1000 + attempt++);
    Episode ep = run_script_episode(env, config, seed, mean);
    if (!satisfies_protocol(config.kind, ep)) {
      if (++rejected > 200 + 2 * d.episodes.size()) {
        throw DatasetError("collect: too many episodes break the " + std::string(to_string(config.kind)) +
                           " protocol; lower action_noise_eps");
      }
      continue;
    }
    steps += static_cast<std::int64_t>(ep.size());
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace

std::string_view to_string(ScriptKind kind) { return kScriptNames[static_cast<std::size_t>(kind)]; }

ScriptKind parse_script_kind(std::string_view name) {
  for (std::size_t i = 0; i < kScriptNames.size(); ++i) {
    if (kScriptNames[i] == name) return static_cast<ScriptKind>(i);
  }
  throw ConfigError("unknown script kind '" + std::string(name) + "'");
}

std::string_view to_string(Phase phase) { return kPhaseNames[static_cast<std::size_t>(phase)]; }

void ScriptConfig::validate(const EnvConfig& env) const {
  if (env.kind != EnvKind::LiftWorld) throw ConfigError("teleop scripts drive LiftWorld only");
  if (!(action_noise_eps >= 0.0 && action_noise_eps < 1.0)) throw ConfigError("action_noise_eps must lie in [0,1)");
  if (miss_offset_cells < 1 || miss_offset_cells >= env.grid_width) {
    throw ConfigError("miss_offset_cells must lie in [1, grid_width)");
  }
  if (step_budget < env.max_steps) throw ConfigError("step_budget must be at least max_steps");
  if (session_clutter_mean) {
    if (static_cast<int>(session_clutter_mean->size()) != env.clutter_dim) {
      throw ConfigError("session_clutter_mean length does not match clutter_dim");
    }
    for (double m : *session_clutter_mean) {
      if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("session_clutter_mean components must lie in [0,1]");
    }
  }
}

ScriptState start_script(const ScriptConfig& config, const EnvConfig& env, const EnvState& state, Rng& rng) {
  ScriptState s;
  s.kind = config.kind;
  switch (config.kind) {
    case ScriptKind::Success: s.phase = Phase::ReApproach; break;
    case ScriptKind::VBT:
      s.phase = Phase::ApproachOffset;
      s.miss_side = choose_side(env, state, config.miss_offset_cells, rng);
      s.lift_target = 1 + rng.uniform_int(2);
      break;
    case ScriptKind::Coverage:
      s.phase = Phase::CoverMissApproach;
      s.miss_side = choose_side(env, state, config.miss_offset_cells, rng);
      break;
    case ScriptKind::LfP: s.phase = Phase::Play; break;
  }
  return s;
}

std::pair<Action, ScriptState> script_action(const ScriptConfig& config, const EnvConfig& env,
                                             const ScriptState& script, const EnvState& state, Rng& rng) {
  if (state.done) throw ContractViolation("script_action called on a finished episode");
  auto [action, next] = Planner(config, env, script, state, rng).next();
  if (config.action_noise_eps > 0.0 && rng.bernoulli(config.action_noise_eps)) {
    action = static_cast<Action>(rng.uniform_int(static_cast<int>(Action::Terminate)));
  }
  return {action, next};
}

bool satisfies_protocol(ScriptKind kind, const Episode& ep) {
  if (ep.transitions.empty()) return false;
  switch (kind) {
    case ScriptKind::Success: return ep.succeeded();
    case ScriptKind::VBT: return validate_vbt(ep).ok;
    case ScriptKind::Coverage:
      return !ep.succeeded() && ep.transitions.back().event == Event::Timeout && toggle_events(ep) >= 2;
    case ScriptKind::LfP: return !ep.succeeded() && ep.transitions.back().event == Event::Timeout;
  }
  return false;
}

Episode run_script_episode(const EnvConfig& env, const ScriptConfig& config, std::uint64_t seed,
                           const std::vector<double>& clutter_mean) {
  auto [state, obs] = reset(env, seed, clutter_mean);
  Rng rng(derive_seed(seed, 0x5C21u));
  ScriptState script = start_script(config, env, state, rng);

  Episode ep;
  ep.metadata = {std::string(to_string(config.kind)), seed, clutter_mean, env.hash()};
  while (!state.done) {
    auto [action, next_script] = script_action(config, env, script, state, rng);
    auto out = step(env, state, action);
    ep.transitions.push_back({obs, static_cast<int>(action), out.result.reward, out.result.observation,
                              out.result.done, out.result.succeeded, out.result.event});
    obs = std::move(out.result.observation);
    state = std::move(out.state);
    script = next_script;
  }
  return ep;
}

Dataset collect(const EnvConfig& env, const ScriptConfig& config) {
  if (config.step_budget <= 0) throw DatasetError("collect: step budget must be positive");
  return collect_until(env, config, config.step_budget, 0);
}

Dataset collect_episodes(const EnvConfig& env, const ScriptConfig& config, int n_episodes) {
  if (n_episodes <= 0) throw DatasetError("collect_episodes: episode count must be positive");
  return collect_until(env, config, config.step_budget, n_episodes);
}

Dataset mix(const Dataset& first, const Dataset& second, std::int64_t budget) {
  if (first.empty() || second.empty()) throw DatasetError("mix: both sources must contain episodes");
  if (first.env != second.env) throw DatasetError("mix: sources were collected with different env configs");
  if (budget <= 0) throw DatasetError("mix: budget must be positive");

  const std::int64_t half_first = budget / 2;
  const std::int64_t half_second = budget - half_first;
  const auto prefix = [](const Dataset& d, std::int64_t target) {
    std::size_t count = 0;
    std::int64_t steps = 0;
    for (const auto& ep : d.episodes) {
      const auto next = steps + static_cast<std::int64_t>(ep.size());
      if (count > 0 && std::llabs(next - target) >= std::llabs(steps - target)) break;
      steps = next;
      ++count;
    }
    return count;
  };
  const auto n1 = prefix(first, half_first);
  const auto n2 = prefix(second, half_second);

  Dataset out;
  out.env = first.env;
  for (std::size_t i = 0; i < std::max(n1, n2); ++i) {
    if (i < n1) out.episodes.push_back(first.episodes[i]);
    if (i < n2) out.episodes.push_back(second.episodes[i]);
  }
  auto& m = out.metadata;
  m.budget = budget;
  for (const auto* src : {&first, &second}) {
    m.sources.insert(m.sources.end(), src->metadata.sources.begin(), src->metadata.sources.end());
    m.seeds.insert(m.seeds.end(), src->metadata.seeds.begin(), src->metadata.seeds.end());
    m.clutter_means.insert(m.clutter_means.end(), src->metadata.clutter_means.begin(),
                           src->metadata.clutter_means.end());
  }
  return out;
}

}  // namespace vbt
