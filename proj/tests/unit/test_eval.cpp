#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vbt/eval.hpp"

using namespace vbt;

namespace {

// W1 between empirical measures by averaging |F_a - F_b| over a fine grid of
// evaluation points; independent of the merge implementation.
double w1_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const auto cdf = [](const std::vector<double>& x, double t) {
    return static_cast<double>(std::count_if(x.begin(), x.end(), [t](double v) { return v <= t; })) / x.size();
  };
  double lo = std::min(*std::min_element(a.begin(), a.end()), *std::min_element(b.begin(), b.end()));
  double hi = std::max(*std::max_element(a.begin(), a.end()), *std::max_element(b.begin(), b.end()));
  const int n = 200'000;
  const double h = (hi - lo) / n;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::abs(cdf(a, lo + (i + 0.5) * h) - cdf(b, lo + (i + 0.5) * h)) * h;
  return s;
}

Dataset vbt_data(std::uint64_t seed, std::int64_t budget) {
  ScriptConfig c;
  c.kind = ScriptKind::VBT;
  c.seed = seed;
  c.step_budget = budget;
  return collect(EnvConfig::lift_world(), c);
}

TrainConfig quick() {
  TrainConfig c;
  c.gradient_steps = 30;
  c.batch_size = 32;
  return c;
}

}  // namespace

TEST_CASE("wasserstein1 on hand-computed cases") {
  CHECK(wasserstein1({0.0}, {1.0}) == doctest::Approx(1.0));
  CHECK(wasserstein1({0.0, 1.0}, {0.0, 1.0}) == 0.0);
  CHECK(wasserstein1({0.0, 2.0}, {1.0}) == doctest::Approx(1.0));
  // Shift by c moves every quantile by c.
  CHECK(wasserstein1({0.1, 0.4, 0.9}, {0.6, 0.9, 1.4}) == doctest::Approx(0.5));
  CHECK(wasserstein1({1.0, 2.0}, {2.0, 1.0}) == 0.0);
}

TEST_CASE("wasserstein1 agrees with a grid integral for unequal sizes") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> a(5 + trial), b(3 + 2 * trial);
    for (auto& v : a) v = rng.uniform();
    for (auto& v : b) v = rng.uniform() + 0.2;
    CHECK(wasserstein1(a, b) == doctest::Approx(w1_oracle(a, b)).epsilon(1e-4));
  }
}

TEST_CASE("binomial stderr") {
  CHECK(binomial_stderr(0.5, 100) == doctest::Approx(0.05));
  CHECK(binomial_stderr(0.0, 10) == 0.0);
}

TEST_CASE("stderr shrinks by sqrt(k) when samples are duplicated k times") {
  const std::vector<double> x{0.1, 0.5, 0.2, 0.9, 0.4};
  std::vector<double> x4;
  for (int k = 0; k < 4; ++k) x4.insert(x4.end(), x.begin(), x.end());
  const auto [m1, s1] = mean_and_stderr(x);
  const auto [m4, s4] = mean_and_stderr(x4);
  CHECK(m4 == doctest::Approx(m1));
  CHECK(s4 == doctest::Approx(s1 / 2.0).epsilon(1e-12));
  KeyStep k;
  k.stderr_q = 3.0;
  k.stderr_v = 4.0;
  CHECK(k.pooled_stderr() == doctest::Approx(5.0));
}

TEST_CASE("noise-free scripted policies succeed") {
  ScriptConfig c;
  c.kind = ScriptKind::Success;
  c.action_noise_eps = 0.0;
  ScriptedPolicy p(c);
  const auto r = rollout(p, EnvConfig::lift_world(), 30, 1);
  CHECK(r.successes == 30);
  CHECK(r.stderr_ == 0.0);
  ConstantPolicy left(Action::Left);
  CHECK(rollout(left, EnvConfig::lift_world(), 5, 1).success_rate == 0.0);
}

TEST_CASE("rollout is deterministic and clutter modes differ") {
  ConstantPolicy t(Action::Terminate);
  const auto env = EnvConfig::lift_world();
  const auto a = rollout(t, env, 10, 3);
  CHECK(a.mean_length == 1.0);
  const auto m1 = deployment_clutter_mean(env, {}, 5);
  CHECK(m1.has_value());
  CHECK(*m1 == *deployment_clutter_mean(env, {}, 5));
  CHECK_FALSE(deployment_clutter_mean(env, {ClutterPolicy::Mode::Uniform, std::nullopt}, 5).has_value());
}

TEST_CASE("episode-session clutter draws a fresh mean per episode") {
  const auto env = EnvConfig::lift_world();
  const ClutterPolicy per_episode{ClutterPolicy::Mode::EpisodeSession, std::nullopt};
  CHECK_FALSE(deployment_clutter_mean(env, per_episode, 5).has_value());
  const auto a = episode_clutter_mean(env, per_episode, std::nullopt, 11);
  const auto b = episode_clutter_mean(env, per_episode, std::nullopt, 12);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  CHECK(*a != *b);
  CHECK(*a == *episode_clutter_mean(env, per_episode, std::nullopt, 11));
  for (double m : *a) {
    CHECK(m >= 0.5 - env.clutter_session_spread);
    CHECK(m <= 0.5 + env.clutter_session_spread);
  }
  const std::vector<double> fixed(env.clutter_dim, 0.3);
  CHECK(*episode_clutter_mean(env, {}, fixed, 11) == fixed);
}

TEST_CASE("clutter mode names round trip") {
  for (auto m : {ClutterPolicy::Mode::SessionMean, ClutterPolicy::Mode::EpisodeSession, ClutterPolicy::Mode::Uniform}) {
    CHECK(parse_clutter_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_clutter_mode("sometimes"), ConfigError);
}

TEST_CASE("traces and key steps") {
  const auto d = vbt_data(2, 400);
  const auto iql = train(Algorithm::IQL, d, quick());
  const auto series = trace(iql, d.episodes.front());
  CHECK(series.size() == d.episodes.front().size());
  CHECK(trace_csv(series).rfind("t,q,v,event\n", 0) == 0);
  const auto bc = train(Algorithm::BC, d, quick());
  CHECK_THROWS_AS(trace(bc, d.episodes.front()), ContractViolation);

  const auto stats = keystep_stats(iql, d.episodes);
  CHECK(stats.missed_grasp.n == static_cast<int>(d.episodes.size()));

  // Independent recomputation of the missed-grasp mean Q.
  double sum = 0.0;
  for (const auto& ep : d.episodes) {
    const auto r = validate_vbt(ep);
    sum += trace(iql, ep)[static_cast<std::size_t>(r.failure_index)].q;
  }
  CHECK(stats.missed_grasp.mean_q == doctest::Approx(sum / d.episodes.size()));
}

TEST_CASE("sharpest drop") {
  TraceSeries s{{0, 1.0, 0, Event::None}, {1, 0.9, 0, Event::None}, {2, 0.2, 0, Event::MissedGrasp}, {3, 0.3, 0, Event::None}};
  CHECK(sharpest_q_drop(s) == 2);
}

TEST_CASE("histograms share bins and report the divergence") {
  const auto train_set = vbt_data(3, 300), test_set = vbt_data(4, 300);
  const auto m = train(Algorithm::IQL, train_set, quick());
  const auto h = q_histograms(m, train_set, test_set, 10);
  CHECK(h.bin_edges.size() == 11);
  CHECK(std::accumulate(h.train_counts.begin(), h.train_counts.end(), 0) == static_cast<int>(h.train_q.size()));
  CHECK(std::accumulate(h.test_counts.begin(), h.test_counts.end(), 0) == static_cast<int>(h.test_q.size()));
  CHECK(h.divergence == doctest::Approx(wasserstein1(h.train_q, h.test_q)));
}

TEST_CASE("AB test rows follow arm permutation") {
  ConstantPolicy a(Action::Terminate), b(Action::Left);
  ScriptConfig sc;
  sc.action_noise_eps = 0.0;
  ScriptedPolicy s(sc);
  const auto env = EnvConfig::lift_world();
  std::vector<ABArm> arms{{"X", "BC", &a}, {"Y", "BC", &b}, {"Z", "IQL", &s}};
  std::vector<ABArm> permuted{arms[2], arms[0], arms[1]};
  const auto r1 = ab_test(arms, env, 300, 11);
  const auto r2 = ab_test(permuted, env, 300, 11);
  for (const auto& arm : arms) {
    const auto& x = r1.row(arm.dataset, arm.algorithm);
    const auto& y = r2.row(arm.dataset, arm.algorithm);
    CHECK(x.n == y.n);
    CHECK(x.successes == y.successes);
  }
  CHECK(r2.rows.front().dataset == "Z");
  CHECK(r1.row("Z", "IQL").success_rate == 1.0);
  CHECK(r1.row("X", "BC").success_rate == 0.0);
  int total = 0;
  for (const auto& row : r1.rows) total += row.n;
  CHECK(total == 300);
  CHECK(ab_table_csv(r1).find("X,BC") != std::string::npos);
}
