#include <doctest.h>

#include "vbt/teleop.hpp"

using namespace vbt;

namespace {

Dataset run(ScriptKind kind, std::uint64_t seed, double noise = 0.1, std::int64_t budget = 2000) {
  ScriptConfig c;
  c.kind = kind;
  c.seed = seed;
  c.action_noise_eps = noise;
  c.step_budget = budget;
  return collect(EnvConfig::lift_world(), c);
}

}  // namespace

TEST_CASE("collection stops at the first episode that reaches the budget") {
  for (auto kind : {ScriptKind::Success, ScriptKind::VBT, ScriptKind::Coverage, ScriptKind::LfP}) {
    const auto d = run(kind, 1);
    CHECK(d.total_steps() >= 2000);
    CHECK(d.total_steps() - static_cast<std::int64_t>(d.episodes.back().size()) < 2000);
  }
}

TEST_CASE("every script delivers its protocol") {
  for (auto kind : {ScriptKind::Success, ScriptKind::VBT, ScriptKind::Coverage, ScriptKind::LfP}) {
    const auto d = run(kind, 2);
    for (const auto& ep : d.episodes) {
      CHECK(satisfies_protocol(kind, ep));
      CHECK(check_labels(ep, d.env).empty());
    }
  }
}

TEST_CASE("noise-free VBT episodes all validate") {
  const auto d = run(ScriptKind::VBT, 3, 0.0, 5000);
  for (const auto& ep : d.episodes) CHECK(validate_vbt(ep).ok);
}

TEST_CASE("Success episodes never toggle on a miss when noise-free") {
  const auto d = run(ScriptKind::Success, 4, 0.0);
  for (const auto& ep : d.episodes) {
    for (auto e : ep.events()) CHECK(e != Event::MissedGrasp);
  }
}

TEST_CASE("Coverage and LfP never succeed") {
  for (auto kind : {ScriptKind::Coverage, ScriptKind::LfP}) {
    for (const auto& ep : run(kind, 5).episodes) CHECK_FALSE(ep.succeeded());
  }
}

TEST_CASE("collection is deterministic in the seed") {
  CHECK(run(ScriptKind::VBT, 7) == run(ScriptKind::VBT, 7));
  CHECK_FALSE(run(ScriptKind::VBT, 7) == run(ScriptKind::VBT, 8));
}

TEST_CASE("one session mean per collection, recorded in the metadata") {
  const auto d = run(ScriptKind::Success, 9);
  REQUIRE(d.metadata.clutter_means.size() == 1);
  for (const auto& ep : d.episodes) CHECK(ep.metadata.clutter_mean == d.metadata.clutter_means.front());
}

TEST_CASE("mix takes roughly half the budget from each source") {
  const auto a = run(ScriptKind::Coverage, 10, 0.1, 1000);
  const auto b = run(ScriptKind::Success, 11, 0.1, 1000);
  const auto m = mix(a, b, 1000);
  std::int64_t from_a = 0, from_b = 0;
  for (const auto& ep : m.episodes) (ep.metadata.script == "Coverage" ? from_a : from_b) += static_cast<std::int64_t>(ep.size());
  CHECK(std::llabs(from_a - 500) <= a.env.max_steps);
  CHECK(std::llabs(from_b - 500) <= a.env.max_steps);
  CHECK(m.metadata.sources.size() == 2);
  CHECK_THROWS_AS(mix(a, Dataset{}, 1000), DatasetError);
}

TEST_CASE("script config validation") {
  ScriptConfig c;
  c.action_noise_eps = 1.5;
  CHECK_THROWS_AS(c.validate(EnvConfig::lift_world()), ConfigError);
  CHECK_THROWS_AS(parse_script_kind("Random"), ConfigError);
}
