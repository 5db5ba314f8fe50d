#include <doctest.h>

#include "vbt/common.hpp"
#include "vbt/env.hpp"

using namespace vbt;

namespace {

EnvState at(int gx, int gz, int ox, bool closed = false) {
  EnvState s;
  s.gripper_x = gx;
  s.gripper_z = gz;
  s.object_x = ox;
  s.gripper_closed = closed;
  s.clutter.assign(8, 0.5);
  return s;
}

}  // namespace

TEST_CASE("reset is a pure function of the seed") {
  const auto env = EnvConfig::lift_world();
  const auto a = reset(env, 17);
  const auto b = reset(env, 17);
  CHECK(a.state == b.state);
  CHECK(a.observation == b.observation);
  CHECK(static_cast<int>(a.observation.size()) == env.observation_size());
  CHECK(a.state.object_z == 0);
  CHECK(a.state.gripper_z >= 1);
  CHECK(reset(env, 18).state != a.state);
}

TEST_CASE("session clutter is centred on the mean") {
  auto env = EnvConfig::lift_world();
  env.clutter_noise_sigma = 0.0;
  const std::vector<double> mean(8, 0.3);
  CHECK(reset(env, 1, mean).state.clutter == mean);
  CHECK_THROWS_AS(reset(env, 1, std::vector<double>(3, 0.3)), ConfigError);
  CHECK_THROWS_AS(reset(env, 1, std::vector<double>(8, 1.5)), ConfigError);
}

TEST_CASE("draw_clutter_mean respects the session spread") {
  auto env = EnvConfig::lift_world();
  env.clutter_session_spread = 0.1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (double m : draw_clutter_mean(env, seed)) {
      CHECK(m >= 0.4);
      CHECK(m <= 0.6);
    }
  }
  env.clutter_session_spread = 0.7;
  CHECK_THROWS_AS(env.validate(), ConfigError);
}

TEST_CASE("grasp, lift and terminate succeeds") {
  const auto env = EnvConfig::lift_world();
  auto s = at(2, 0, 2);
  auto out = step(env, s, Action::ToggleGripper);
  CHECK(out.result.event == Event::Grasp);
  CHECK(out.state.held);
  s = out.state;
  for (int i = 0; i < env.lift_threshold_z; ++i) s = step(env, s, Action::Up).state;
  CHECK(s.object_z == env.lift_threshold_z);
  out = step(env, s, Action::Terminate);
  CHECK(out.result.done);
  CHECK(out.result.succeeded);
  CHECK(out.result.reward == env.success_reward);
  CHECK(out.result.event == Event::TerminateSuccess);
}

TEST_CASE("closing beside the object is a missed grasp") {
  const auto env = EnvConfig::lift_world();
  const auto miss = step(env, at(3, 0, 2), Action::ToggleGripper);
  CHECK(miss.result.event == Event::MissedGrasp);
  CHECK_FALSE(miss.state.held);
  CHECK(miss.result.reward == env.step_penalty);
  // Lifting an empty gripper leaves the object on the table.
  const auto lifted = step(env, miss.state, Action::Up);
  CHECK(lifted.state.object_z == 0);
  const auto open = step(env, lifted.state, Action::ToggleGripper);
  CHECK(open.result.event == Event::Release);
}

TEST_CASE("opening while holding drops the object") {
  const auto env = EnvConfig::lift_world();
  auto s = step(env, at(4, 0, 4), Action::ToggleGripper).state;
  s = step(env, s, Action::Up).state;
  s = step(env, s, Action::Left).state;
  const auto out = step(env, s, Action::ToggleGripper);
  CHECK(out.result.event == Event::Drop);
  CHECK(out.state.object_x == 3);
  CHECK(out.state.object_z == 0);
}

TEST_CASE("terminating without a lift fails with the step penalty") {
  const auto env = EnvConfig::lift_world();
  const auto out = step(env, at(1, 2, 4), Action::Terminate);
  CHECK(out.result.done);
  CHECK_FALSE(out.result.succeeded);
  CHECK(out.result.event == Event::TerminateFailure);
  CHECK(out.result.reward == env.step_penalty);
  CHECK_THROWS_AS(step(env, out.state, Action::Left), ContractViolation);
}

TEST_CASE("episodes time out at max_steps") {
  auto env = EnvConfig::lift_world();
  env.max_steps = 5;
  auto s = reset(env, 3).state;
  StepOutput out;
  for (int i = 0; i < 5; ++i) {
    out = step(env, s, Action::Left);
    s = out.state;
  }
  CHECK(out.result.done);
  CHECK(out.result.event == Event::Timeout);
}

TEST_CASE("gridworld walls block and the goal terminates") {
  const auto env = EnvConfig::grid_world();
  CHECK(env.num_actions() == 4);
  EnvState s;
  s.gripper_x = env.layout.wall_x - 1;
  s.gripper_z = env.layout.gap_y + 1;
  const auto blocked = gridworld_step(env, s, Action::Right);
  CHECK(blocked.state.gripper_x == s.gripper_x);
  s.gripper_z = env.layout.gap_y;
  CHECK(gridworld_step(env, s, Action::Right).state.gripper_x == env.layout.wall_x);
  s.gripper_x = env.layout.goal_x - 1;
  s.gripper_z = env.layout.goal_y;
  const auto goal = gridworld_step(env, s, Action::Right);
  CHECK(goal.result.succeeded);
  CHECK(goal.result.reward == env.success_reward);
  CHECK_THROWS_AS(gridworld_step(env, s, Action::ToggleGripper), ContractViolation);
}

TEST_CASE("config json round trip and hash") {
  auto env = EnvConfig::lift_world();
  env.clutter_session_spread = 0.35;
  const auto back = env_config_from_json(to_json(env));
  CHECK(back == env);
  CHECK(back.hash() == env.hash());
  CHECK(EnvConfig::lift_world().hash() != env.hash());
  env.grid_width = 0;
  CHECK_THROWS_AS(env.validate(), ConfigError);
}

TEST_CASE("names round trip") {
  for (int a = 0; a < kLiftWorldActions; ++a) {
    CHECK(parse_action(to_string(static_cast<Action>(a))) == static_cast<Action>(a));
  }
  CHECK(parse_event(to_string(Event::MissedGrasp)) == Event::MissedGrasp);
  CHECK_THROWS_AS(parse_action("Jump"), ConfigError);
}

TEST_CASE("render marks gripper and object") {
  const auto env = EnvConfig::lift_world();
  const auto r = render(env, at(2, 0, 2));
  CHECK(r.text.find('U') != std::string::npos);
  CHECK(r.scene["gripper"]["x"] == 2);
  CHECK(r.scene["object"]["x"] == 2);
}

TEST_CASE("Environment wrapper mirrors the pure functions") {
  const auto env = EnvConfig::lift_world();
  Environment e(env);
  CHECK_FALSE(e.started());
  e.reset(9);
  const auto pure = step(env, reset(env, 9).state, Action::Up);
  CHECK(e.step(Action::Up) == pure.result);
  CHECK(e.state() == pure.state);
}
