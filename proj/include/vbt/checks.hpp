#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vbt/dataset.hpp"
#include "vbt/env.hpp"
#include "vbt/learn.hpp"

namespace vbt {

struct CriterionResult {
  std::string id;
  std::string title;
  std::optional<bool> passed;  // absent: not evaluated by this config
  std::string detail;
};

// Self-checks of the numerical core, cheap enough to run on every reproduce.
CriterionResult check_gradients();           // A1
CriterionResult check_expectile_identities();  // A2
CriterionResult check_awr_bc_reduction();    // A3
CriterionResult check_tabular_oracle();      // A4
CriterionResult check_bc_replay();           // A5
std::vector<CriterionResult> run_property_checks();

// GridWorld data that reaches every (state, action) pair once, plus one
// shortest-path demonstration from every start cell. States are y * W + x.
std::vector<TabularTransition> gridworld_coverage_data(const EnvConfig& env);

// Value iteration with the max restricted to actions present in `data`.
std::vector<double> restricted_value_iteration(std::span<const TabularTransition> data, int n_states, int n_actions,
                                               double gamma, double tolerance = 1e-13);

struct IntegrityReport {
  bool passed = false;
  std::string detail;
};

// Label identity on every episode, noise-free VBT validation over a fresh
// collection, and step-budget parity across the given datasets.
IntegrityReport check_dataset_integrity(const EnvConfig& env, const std::map<std::string, Dataset>& datasets,
                                        std::uint64_t vbt_seed);

}  // namespace vbt
