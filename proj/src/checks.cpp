#include "vbt/checks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "vbt/teleop.hpp"

namespace vbt {

namespace {

std::string fmt(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

EnvState grid_state(int x, int y) {
  EnvState s;
  s.gripper_x = x;
  s.gripper_z = y;
  return s;
}

int cell(const EnvConfig& env, int x, int y) { return y * env.grid_width + x; }

bool is_goal(const EnvConfig& env, int x, int y) { return x == env.layout.goal_x && y == env.layout.goal_y; }

}  // namespace

CriterionResult check_gradients() {
  CriterionResult c{"A1", "gradient check, all loss terms, 5 seeds", false, ""};
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GradCheckSpec spec;
    spec.seed = seed;
    worst = std::max(worst, grad_check(spec, 1e-4).max_relative_error);
  }
  c.passed = worst < 1e-4;
  c.detail = "max relative error " + fmt(worst);
  return c;
}

CriterionResult check_expectile_identities() {
  CriterionResult c{"A2", "expectile identities", false, ""};
  Rng rng(2);
  double sym = 0.0, asym = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double u = 20.0 * rng.uniform() - 10.0;
    sym = std::max(sym, std::abs(expectile_loss(u, 0.5) - 0.5 * u * u));
    const double p = std::abs(u) + 1e-3;
    const double expected = (0.1 / 0.9) * expectile_loss(p, 0.9);
    asym = std::max(asym, std::abs(expectile_loss(-p, 0.9) - expected) / expected);
  }
  c.passed = sym <= 1e-12 && asym <= 1e-12;
  c.detail = "symmetric error " + fmt(sym) + ", asymmetry relative error " + fmt(asym);
  return c;
}

CriterionResult check_awr_bc_reduction() {
  CriterionResult c{"A3", "AWR policy gradient reduces to BC as beta -> 0", false, ""};
  const auto env = EnvConfig::lift_world();
  ScriptConfig sc;
  sc.kind = ScriptKind::VBT;
  sc.seed = 3;
  const auto data = collect_episodes(env, sc, 10);
  TrainConfig tc;
  tc.inv_temperature_beta = 1e-12;
  tc.seed = 3;
  auto models = init_models(Algorithm::IQL, env.observation_size(), env.num_actions(), tc);
  Rng rng(33);
  const auto batch = sample_table(table_from_dataset(data, tc.frame_stack_k), 256, rng);
  const auto w = iql_policy_weights(models, batch, tc);
  const auto awr = nll_loss(models.policy, batch.observations, batch.actions, w);
  const auto bc = nll_loss(models.policy, batch.observations, batch.actions);
  const double rel = (awr.grad - bc.grad).norm() / bc.grad.norm();
  c.passed = rel < 1e-8;
  c.detail = "relative gradient difference " + fmt(rel);
  return c;
}

std::vector<TabularTransition> gridworld_coverage_data(const EnvConfig& env) {
  std::vector<TabularTransition> data;
  const auto free = [&](int x, int y) { return !env.is_wall(x, y); };
  for (int y = 0; y < env.grid_height; ++y) {
    for (int x = 0; x < env.grid_width; ++x) {
      if (!free(x, y) || is_goal(env, x, y)) continue;
      for (int a = 0; a < env.num_actions(); ++a) {
        const auto out = gridworld_step(env, grid_state(x, y), static_cast<Action>(a));
        data.push_back({cell(env, x, y), a, out.result.reward, cell(env, out.state.gripper_x, out.state.gripper_z),
                        out.result.event == Event::TerminateSuccess});
      }
    }
  }

  // Breadth-first distances to the goal; moves are reversible.
  const int n = env.grid_width * env.grid_height;
  std::vector<int> dist(static_cast<std::size_t>(n), -1);
  std::deque<std::pair<int, int>> queue{{env.layout.goal_x, env.layout.goal_y}};
  dist[static_cast<std::size_t>(cell(env, env.layout.goal_x, env.layout.goal_y))] = 0;
  while (!queue.empty()) {
    const auto [x, y] = queue.front();
    queue.pop_front();
    for (int a = 0; a < env.num_actions(); ++a) {
      const auto out = gridworld_step(env, grid_state(x, y), static_cast<Action>(a));
      const int nx = out.state.gripper_x, ny = out.state.gripper_z;
      auto& d = dist[static_cast<std::size_t>(cell(env, nx, ny))];
      if (d < 0) {
        d = dist[static_cast<std::size_t>(cell(env, x, y))] + 1;
        queue.emplace_back(nx, ny);
      }
    }
  }
  for (int y = 0; y < env.grid_height; ++y) {
    for (int x = 0; x < env.grid_width; ++x) {
      if (!free(x, y) || is_goal(env, x, y) || dist[static_cast<std::size_t>(cell(env, x, y))] < 0) continue;
      EnvState s = grid_state(x, y);
      while (!s.done) {
        const int here = dist[static_cast<std::size_t>(cell(env, s.gripper_x, s.gripper_z))];
        for (int a = 0; a < env.num_actions(); ++a) {
          const auto out = gridworld_step(env, s, static_cast<Action>(a));
          if (dist[static_cast<std::size_t>(cell(env, out.state.gripper_x, out.state.gripper_z))] == here - 1) {
            data.push_back({cell(env, s.gripper_x, s.gripper_z), a, out.result.reward,
                            cell(env, out.state.gripper_x, out.state.gripper_z),
                            out.result.event == Event::TerminateSuccess});
            s = out.state;
            break;
          }
        }
      }
    }
  }
  return data;
}

std::vector<double> restricted_value_iteration(std::span<const TabularTransition> data, int n_states, int n_actions,
                                               double gamma, double tolerance) {
  const auto ns = static_cast<std::size_t>(n_states), na = static_cast<std::size_t>(n_actions);
  std::vector<double> v(ns, 0.0);
  std::vector<std::vector<double>> sum(ns, std::vector<double>(na));
  std::vector<std::vector<int>> count(ns, std::vector<int>(na, 0));
  for (const auto& d : data) count[static_cast<std::size_t>(d.state)][static_cast<std::size_t>(d.action)] += 1;
  for (int iter = 0; iter < 100'000; ++iter) {
    for (auto& row : sum) std::fill(row.begin(), row.end(), 0.0);
    for (const auto& d : data) {
      sum[static_cast<std::size_t>(d.state)][static_cast<std::size_t>(d.action)] +=
          d.reward + (d.done ? 0.0 : gamma * v[static_cast<std::size_t>(d.next_state)]);
    }
    double delta = 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < na; ++a) {
        if (count[s][a] > 0) best = std::max(best, sum[s][a] / count[s][a]);
      }
      if (!std::isfinite(best)) continue;
      delta = std::max(delta, std::abs(best - v[s]));
      v[s] = best;
    }
    if (delta < tolerance) break;
  }
  return v;
}

CriterionResult check_tabular_oracle() {
  CriterionResult c{"A4", "tabular IQL vs restricted value iteration (GridWorld)", false, ""};
  const auto env = EnvConfig::grid_world();
  const int ns = env.grid_width * env.grid_height;
  const auto data = gridworld_coverage_data(env);
  const auto iql = tabular_iql(data, ns, env.num_actions(), 0.99, 0.95);
  const auto vi = restricted_value_iteration(data, ns, env.num_actions(), 0.99);
  double worst = 0.0;
  for (int s = 0; s < ns; ++s) {
    if (iql.visited[static_cast<std::size_t>(s)]) {
      worst = std::max(worst, std::abs(iql.v[static_cast<std::size_t>(s)] - vi[static_cast<std::size_t>(s)]));
    }
  }
  c.passed = worst < 0.01;
  c.detail = "max |V difference| " + fmt(worst) + " over " + std::to_string(data.size()) + " transitions";
  return c;
}

CriterionResult check_bc_replay() {
  CriterionResult c{"A5", "BC replays a single noise-free Success demo", false, ""};
  const auto env = EnvConfig::lift_world();
  ScriptConfig sc;
  sc.kind = ScriptKind::Success;
  sc.action_noise_eps = 0.0;
  sc.seed = 5;
  const auto demo = collect_episodes(env, sc, 1);
  TrainConfig tc;
  tc.gradient_steps = 2000;
  tc.seed = 5;
  const auto models = train(Algorithm::BC, demo, tc);
  const auto samples = stack(demo.episodes.front(), tc.frame_stack_k);
  const auto table = make_batch(samples);
  const auto probs = policy_probabilities(models, table.observations);
  int match = 0;
  for (int i = 0; i < table.size(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < probs.rows(); ++a) {
      if (probs(a, i) > probs(best, i)) best = a;
    }
    match += best == table.actions[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  const double frac = static_cast<double>(match) / table.size();
  c.passed = frac >= 0.99;
  c.detail = std::to_string(match) + "/" + std::to_string(table.size()) + " demo actions reproduced";
  return c;
}

std::vector<CriterionResult> run_property_checks() {
  return {check_gradients(), check_expectile_identities(), check_awr_bc_reduction(), check_tabular_oracle(),
          check_bc_replay()};
}

IntegrityReport check_dataset_integrity(const EnvConfig& env, const std::map<std::string, Dataset>& datasets,
                                        std::uint64_t vbt_seed) {
  IntegrityReport r;
  std::ostringstream detail;
  std::size_t episodes = 0, bad_labels = 0;
  std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = 0;
  for (const auto& [name, d] : datasets) {
    for (const auto& ep : d.episodes) {
      ++episodes;
      if (!check_labels(ep, d.env).empty()) ++bad_labels;
    }
    lo = std::min(lo, d.total_steps());
    hi = std::max(hi, d.total_steps());
  }
  ScriptConfig sc;
  sc.kind = ScriptKind::VBT;
  sc.action_noise_eps = 0.0;
  sc.seed = vbt_seed;
  sc.step_budget = 10'000;
  const auto clean = collect(env, sc);
  std::size_t vbt_ok = 0;
  for (const auto& ep : clean.episodes) vbt_ok += validate_vbt(ep).ok ? 1 : 0;
  const bool parity = datasets.empty() || hi - lo <= env.max_steps;
  r.passed = bad_labels == 0 && vbt_ok == clean.episodes.size() && parity;
  detail << "label violations " << bad_labels << "/" << episodes << "; noise-free VBT valid " << vbt_ok << "/"
         << clean.episodes.size() << "; step totals " << lo << ".." << hi << " (parity bound " << env.max_steps
         << ")";
  r.detail = detail.str();
  return r;
}

}  // namespace vbt
