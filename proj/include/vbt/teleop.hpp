#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "vbt/common.hpp"
#include "vbt/dataset.hpp"
#include "vbt/env.hpp"

namespace vbt {

enum class ScriptKind { Success, VBT, Coverage, LfP };

std::string_view to_string(ScriptKind kind);
ScriptKind parse_script_kind(std::string_view name);

struct ScriptConfig {
  ScriptKind kind = ScriptKind::Success;
  double action_noise_eps = 0.1;
  int miss_offset_cells = 1;
  // Absent means a fresh mean is drawn once per collection session.
  std::optional<std::vector<double>> session_clutter_mean;
  std::int64_t step_budget = 10'000;
  std::uint64_t seed = 0;

  void validate(const EnvConfig& env) const;
};

enum class Phase {
  // Success / VBT
  ApproachOffset,
  MissClose,
  LiftFail,
  RecoverOpen,
  ReApproach,
  Grasp,
  Lift,
  Terminate,
  // Coverage cycle
  CoverMissApproach,
  CoverMissClose,
  CoverMissLift,
  CoverRetryOpen,
  CoverApproach,
  CoverGrasp,
  CoverLift,
  CoverDrop,
  CoverRegraspDescend,
  CoverRegrasp,
  CoverRelease,
  CoverRaise,
  // LfP
  Play,
};

std::string_view to_string(Phase phase);

struct ScriptState {
  ScriptKind kind = ScriptKind::Success;
  Phase phase = Phase::ApproachOffset;
  int phase_step = 0;
  int miss_side = 1;    // +1 or -1: which side of the object the deliberate miss happens on
  int lift_target = 1;  // height reached before the recovery open / drop
  int cycle = 0;

  bool operator==(const ScriptState&) const = default;
};

// Initial plan for an episode starting in `state`.
ScriptState start_script(const ScriptConfig& config, const EnvConfig& env, const EnvState& state, Rng& rng);

// The action the teleoperator script takes in `state`, after action noise.
std::pair<Action, ScriptState> script_action(const ScriptConfig& config, const EnvConfig& env,
                                             const ScriptState& script, const EnvState& state, Rng& rng);

// Whether an episode delivers its protocol (e.g. fail-recover-succeed for VBT).
bool satisfies_protocol(ScriptKind kind, const Episode& episode);

// Runs one scripted episode from `seed`.
Episode run_script_episode(const EnvConfig& env, const ScriptConfig& config, std::uint64_t seed,
                           const std::vector<double>& clutter_mean);

// Collects whole episodes until the cumulative step count first reaches the
// budget. Episodes that break their protocol are discarded and re-collected.
Dataset collect(const EnvConfig& env, const ScriptConfig& config);

// Same, but stops after a fixed number of accepted episodes.
Dataset collect_episodes(const EnvConfig& env, const ScriptConfig& config, int n_episodes);

// Interleaves whole episodes from both sources so each contributes as close
// to budget/2 steps as episode boundaries allow.
Dataset mix(const Dataset& first, const Dataset& second, std::int64_t budget);

}  // namespace vbt
