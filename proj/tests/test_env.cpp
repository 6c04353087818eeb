#include <doctest.h>

#include <random>

#include "mimicd/env.hpp"
#include "mimicd/errors.hpp"

using namespace mimicd;

namespace {

JointState joint(std::initializer_list<Vec2> positions, std::int64_t t = 0) {
  JointState s;
  s.time_index = t;
  for (Vec2 p : positions) s.agents.push_back({p, {}});
  return s;
}

}  // namespace

TEST_CASE("single integrator steps") {
  CHECK(step_single_integrator({{0, 0}, {}}, {0, 0}, 0.1).position == Vec2{0, 0});
  CHECK(step_single_integrator({{0, 0}, {}}, {1, 0}, 0.1).position == Vec2{0.1, 0});
  AgentState s{{1, 1}, {}};
  for (int i = 0; i < 10; ++i) s = step_single_integrator(s, {0.5, -0.5}, 0.1);
  CHECK(s.position.x == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(s.position.y == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("observation layouts") {
  const EnvSpec swap = EnvSpec::swap();
  CHECK(obs_dim(swap, ObsMode::Full) == 9);
  CHECK(obs_dim(swap, ObsMode::EgoOnly) == 7);
  const EnvSpec road = EnvSpec::road_crossing();
  CHECK(obs_dim(road, ObsMode::Full) == 11);
  CHECK(obs_dim(road, ObsMode::EgoOnly) == 7);

  std::mt19937_64 rng(1);
  const JointState s = initial_state(road, rng);
  const auto full = observe(s, 1, road, ObsMode::Full);
  CHECK(full.flattened.size() == 11);
  CHECK(project_ego_only(full.flattened, road) == observe(s, 1, road, ObsMode::EgoOnly).flattened);
}

TEST_CASE("mirrored swap state swaps ego and other fields") {
  const EnvSpec spec = EnvSpec::swap();
  JointState s;
  s.agents = {{{-7.0, 1.5}, {10, 0}}, {{7.0, -1.5}, {-10, 0}}};
  const auto o0 = observe(s, 0, spec, ObsMode::Full);
  const auto o1 = observe(s, 1, spec, ObsMode::Full);
  CHECK(o0.ego_position == o1.others_positions[0]);
  CHECK(o1.ego_position == o0.others_positions[0]);
  CHECK(o0.context == o1.context);
}

TEST_CASE("pairwise minimum distances") {
  std::vector<JointState> still{joint({{0, 0}, {3, 0}}), joint({{0, 0}, {3, 0}})};
  CHECK(min_pairwise_distances(still).at(0, 1) == 3.0);

  std::vector<JointState> cross{joint({{-1, 0}, {1, 0}}), joint({{0, 0}, {0, 0}}),
                                joint({{1, 0}, {-1, 0}})};
  CHECK(min_pairwise_distances(cross).overall_min() == 0.0);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<JointState> states;
  for (int t = 0; t < 30; ++t)
    states.push_back(joint({{n(rng), n(rng)}, {n(rng), n(rng)}, {n(rng), n(rng)}}, t));
  const auto d = min_pairwise_distances(states);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j) {
      double best = 1e300;
      for (const auto& s : states)
        best = std::min(best, distance(s.agents[i].position, s.agents[j].position));
      CHECK(d.at(i, j) == best);
    }
}

TEST_CASE("collision thresholds are strict") {
  const std::vector<Obstacle> obs{{{0, 0}, 4.0}};
  std::vector<JointState> at_threshold{joint({{-1.35, 10}, {1.35, 10}})};
  CHECK_FALSE(collision_report(at_threshold, 2.7, 3.9, obs).agent_collision);

  std::vector<JointState> grazing{joint({{0, 3.85}, {20, 20}})};
  CHECK(collision_report(grazing, 2.7, 3.9, obs).obstacle_collision);

  std::vector<JointState> far{joint({{-10, 10}, {10, 10}})};
  CHECK_FALSE(collision_report(far, 2.7, 3.9, obs).any());
}

TEST_CASE("initial states jitter inside the configured disk") {
  const EnvSpec spec = EnvSpec::swap();
  std::mt19937_64 rng(2);
  for (int k = 0; k < 200; ++k) {
    const JointState s = initial_state(spec, rng);
    for (int i = 0; i < spec.n_agents; ++i) {
      CHECK(distance(s.agents[i].position, spec.nominal_starts[i]) <= spec.start_jitter_radius);
      CHECK(s.agents[i].goal == spec.nominal_goals[i]);
    }
  }
}

TEST_CASE("env spec json round trip and digest") {
  for (const EnvSpec& spec : {EnvSpec::swap(), EnvSpec::road_crossing()}) {
    const EnvSpec back = EnvSpec::from_json(spec.to_json());
    CHECK(back.digest() == spec.digest());
  }
  CHECK(EnvSpec::swap().digest() != EnvSpec::road_crossing().digest());
  EnvSpec broken = EnvSpec::swap();
  broken.obstacles.clear();
  CHECK_THROWS_AS(broken.validate(), ValidationError);
}
