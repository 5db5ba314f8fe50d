#pragma once

#include <filesystem>
#include <string>

#include "vbt/experiment.hpp"

// The default experiment shrunk to a few seconds of work.
inline nlohmann::json tiny_experiment_json(const std::filesystem::path& output_dir) {
  auto j = vbt::default_experiment_json();
  for (int d = 0; d < 4; ++d) vbt::apply_override(j, "datasets." + std::to_string(d) + ".budget=400");
  vbt::apply_override(j, "train.gradient_steps=40");
  vbt::apply_override(j, "train.batch_size=32");
  vbt::apply_override(j, "train.log_every=10");
  for (int t : {2, 4, 6, 9}) vbt::apply_override(j, "trainings." + std::to_string(t) + ".replicate_seeds=[7]");
  vbt::apply_override(j, "evals.0.episodes=10");
  vbt::apply_override(j, "evals.1.episodes=2");
  vbt::apply_override(j, "evals.2.episodes=6");
  vbt::apply_override(j, "evals.3.bins=8");
  vbt::apply_override(j, "evals.4.episodes=60");
  j["output_dir"] = output_dir.string();
  return j;
}
