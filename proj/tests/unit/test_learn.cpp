#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vbt/checks.hpp"
#include "vbt/learn.hpp"
#include "vbt/teleop.hpp"

using namespace vbt;

namespace {

Dataset tiny_vbt(std::uint64_t seed = 1) {
  ScriptConfig c;
  c.kind = ScriptKind::VBT;
  c.seed = seed;
  c.step_budget = 300;
  return collect(EnvConfig::lift_world(), c);
}

TrainConfig quick(long steps = 20) {
  TrainConfig c;
  c.gradient_steps = steps;
  c.batch_size = 32;
  c.log_every = 10;
  return c;
}

// Brute-force minimiser of the weighted expectile objective on a fine grid
// followed by golden-section refinement.
double expectile_oracle(const std::vector<double>& x, const std::vector<double>& w, double tau) {
  const auto f = [&](double v) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = x[i] - v;
      s += w[i] * std::abs(tau - (u < 0.0 ? 1.0 : 0.0)) * u * u;
    }
    return s;
  };
  double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < 200; ++i) {
    const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (f(a) < f(b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("expectile loss values") {
  CHECK(expectile_loss(2.0, 0.9) == doctest::Approx(0.9 * 4.0).epsilon(1e-15));
  CHECK(expectile_loss(-2.0, 0.9) == doctest::Approx(0.1 * 4.0).epsilon(1e-15));
  CHECK(expectile_loss(0.0, 0.7) == 0.0);
}

TEST_CASE("awr weight clips") {
  CHECK(awr_weight(1.0, 1.0, 3.0, 100.0) == 1.0);
  CHECK(awr_weight(2.0, 1.0, 0.5, 100.0) == doctest::Approx(std::exp(0.5)));
  CHECK(awr_weight(100.0, 0.0, 1.0, 7.0) == 7.0);
}

TEST_CASE("weighted expectile matches a numerical minimiser") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(7), w(7);
    for (auto& v : x) v = rng.uniform() * 4.0 - 2.0;
    for (auto& v : w) v = 0.1 + rng.uniform();
    const double tau = 0.05 + 0.9 * rng.uniform();
    CHECK(weighted_expectile(x, w, tau) == doctest::Approx(expectile_oracle(x, w, tau)).epsilon(1e-7));
  }
  const std::vector<double> x{1.0, 3.0}, w{1.0, 1.0};
  CHECK(weighted_expectile(x, w, 0.5) == doctest::Approx(2.0));
}

TEST_CASE("gradient check passes on every loss term") {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    GradCheckSpec spec;
    spec.seed = seed;
    const auto r = grad_check(spec, 1e-4);
    CHECK(r.passed);
    CHECK(r.entries.size() == 4);
  }
}

TEST_CASE("a constant loss has zero gradient") {
  GradCheckSpec spec;
  spec.losses = {LossTerm::Constant};
  const auto r = grad_check(spec, 1e-4);
  CHECK(r.passed);
  CHECK(r.entries.front().max_abs_analytic == 0.0);
}

TEST_CASE("mlp backward agrees with finite differences on a sum of outputs") {
  Rng rng(1);
  Mlp net({3, 5, 2}, rng);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  Mlp::Tape tape;
  net.forward(x, tape);
  const Eigen::VectorXd g = net.backward(tape, Eigen::MatrixXd::Ones(2, 4));
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < net.parameters().size(); i += 3) {
    Mlp p = net, m = net;
    p.parameters()[i] += h;
    m.parameters()[i] -= h;
    const double num = (p.forward(x).sum() - m.forward(x).sum()) / (2 * h);
    CHECK(g[i] == doctest::Approx(num).epsilon(1e-5));
  }
}

TEST_CASE("softmax and log softmax are stable") {
  Eigen::MatrixXd z(2, 1);
  z << 1000.0, 1001.0;
  const auto p = softmax(z);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(std::isfinite(log_softmax(z)(0, 0)));
}

TEST_CASE("polyak and adam") {
  Rng rng(2);
  Mlp a({2, 2}, rng), b({2, 2}, rng);
  const Eigen::VectorXd before = a.parameters();
  polyak_update(a, b, 0.25);
  CHECK((a.parameters() - (0.75 * before + 0.25 * b.parameters())).norm() < 1e-14);

  Eigen::VectorXd p = Eigen::VectorXd::Zero(1), g = Eigen::VectorXd::Ones(1);
  AdamState st(1);
  adam_step(p, g, st, AdamConfig{0.1});
  // First bias-corrected Adam step moves by the learning rate.
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("training is deterministic and logs the configured steps") {
  const auto d = tiny_vbt();
  for (auto alg : {Algorithm::BC, Algorithm::AWAC, Algorithm::IQL}) {
    const auto a = train(alg, d, quick());
    const auto b = train(alg, d, quick());
    CHECK(a.policy == b.policy);
    CHECK(a.has_critic() == (alg != Algorithm::BC));
    CHECK(a.v.has_value() == (alg == Algorithm::IQL));
    REQUIRE(!a.loss_history.empty());
    CHECK(a.loss_history.front().step == 1);
    CHECK(a.loss_history.back().step == 20);
  }
}

TEST_CASE("checkpoints round trip") {
  const auto d = tiny_vbt();
  const auto m = train(Algorithm::IQL, d, quick());
  const auto path = std::filesystem::temp_directory_path() / "vbt-unit-model.json";
  save_models(m, path, "abc");
  const auto back = load_models(path);
  CHECK(back.policy == m.policy);
  CHECK(*back.q == *m.q);
  CHECK(*back.v == *m.v);
  CHECK(back.config == m.config);
  CHECK(loss_history_csv(back) == loss_history_csv(m));
  auto j = to_json(m);
  j["algorithm"] = "BC";
  CHECK_THROWS(models_from_json(j));
}

TEST_CASE("training rejects bad inputs") {
  auto c = quick();
  c.expectile_tau = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(train(Algorithm::IQL, Dataset{}, quick()), TrainingError);
  auto diverge = quick(50);
  diverge.learning_rate = 1e6;
  diverge.inv_temperature_beta = 50.0;
  diverge.weight_clip = 1e300;
  CHECK_THROWS_AS(train(Algorithm::IQL, tiny_vbt(), diverge), TrainingError);
}

TEST_CASE("iql targets use the value network") {
  const auto d = tiny_vbt();
  const auto m = init_models(Algorithm::IQL, d.env.observation_size(), d.env.num_actions(), quick());
  const auto table = table_from_dataset(d, 4);
  const auto targets = iql_q_targets(m, table, 0.9);
  const auto v_next = m.v->forward(table.next_observations);
  for (int i = 0; i < table.size(); ++i) {
    const double expected = table.rewards[i] + 0.9 * (1.0 - table.dones[i]) * v_next(0, i);
    CHECK(targets[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("tabular IQL matches restricted value iteration as tau approaches one") {
  const auto env = EnvConfig::grid_world();
  const auto data = gridworld_coverage_data(env);
  const int ns = env.grid_width * env.grid_height;
  const auto iql = tabular_iql(data, ns, env.num_actions(), 0.99, 0.95);
  const auto vi = restricted_value_iteration(data, ns, env.num_actions(), 0.99);
  for (int s = 0; s < ns; ++s) {
    if (iql.visited[static_cast<std::size_t>(s)]) CHECK(std::abs(iql.v[s] - vi[s]) < 0.01);
  }
}

TEST_CASE("tabular IQL at tau 0.5 is the behaviour value") {
  // Two-state chain: from s0 actions a0 (reward 1, done) and a1 (reward 0, done)
  // appear equally often, so V(s0) is their mean.
  std::vector<TabularTransition> data{{0, 0, 1.0, 1, true}, {0, 1, 0.0, 1, true}};
  const auto r = tabular_iql(data, 2, 2, 0.9, 0.5);
  CHECK(r.v[0] == doctest::Approx(0.5));
  CHECK(r.q[0][0] == doctest::Approx(1.0));
}
