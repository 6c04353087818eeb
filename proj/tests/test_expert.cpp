#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mimicd/errors.hpp"
#include "mimicd/expert.hpp"
#include "mimicd/metrics.hpp"
#include "mimicd/serialize.hpp"

using namespace mimicd;

namespace {

double replay_deviation(const Demonstration& d, const EnvSpec& spec) {
  double worst = 0.0;
  JointState s = d.states.front();
  for (std::size_t t = 0; t < d.horizon; ++t) {
    for (int i = 0; i < spec.n_agents; ++i)
      s.agents[i] = step_single_integrator(s.agents[i], d.per_agent[i].actions[t], spec.dt);
    for (int i = 0; i < spec.n_agents; ++i)
      worst = std::max(worst, distance(s.agents[i].position, d.states[t + 1].agents[i].position));
  }
  return worst;
}

}  // namespace

TEST_CASE("swap pass_right keeps the obstacle on both agents' left") {
  const EnvSpec spec = EnvSpec::swap();
  const Demonstration d = generate_demo(spec, {EnvKind::Swap, 0}, 7);
  CHECK(mode_name(d.mode) == "pass_right");
  for (const auto& s : d.states)
    for (int i = 0; i < 2; ++i) {
      const Vec2 p = s.agents[i].position;
      if (std::abs(p.x) > 3.0) continue;
      const double travel = i == 0 ? 1.0 : -1.0;
      // cross((travel, 0), center - p) > 0 puts the center on the left
      CHECK(travel * (-p.y) > 0.0);
    }
  CHECK(min_pairwise_distances(d.states).overall_min() >= 3.0);
}

TEST_CASE("expert demos satisfy the generator contract") {
  for (EnvKind kind : {EnvKind::Swap, EnvKind::RoadCrossing}) {
    const EnvSpec spec = EnvSpec::defaults(kind);
    const ExpertParams params;
    for (int m = 0; m < mode_count(kind); ++m)
      for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Demonstration d = generate_demo(spec, {kind, m}, 100 + seed, params);
        CHECK(d.states.size() == d.horizon + 1);
        CHECK(replay_deviation(d, spec) <= 1e-9);
        for (int i = 0; i < spec.n_agents; ++i) {
          CHECK(d.per_agent[i].actions.size() == d.horizon);
          CHECK(distance(d.states.back().agents[i].position, spec.nominal_goals[i]) <= 0.5);
          for (Vec2 a : d.per_agent[i].actions) CHECK(a.norm() <= params.v_max + 1e-12);
        }
        const double agent_thr = kind == EnvKind::Swap ? 3.0 : 0.75;
        CHECK_FALSE(collision_report(d.states, agent_thr, 4.0, spec.obstacles).any());
      }
  }
}

TEST_CASE("road crossing: both modes clear 0.75 on 50 seeds each") {
  const EnvSpec spec = EnvSpec::road_crossing();
  int ok = 0;
  for (int m = 0; m < 2; ++m)
    for (std::uint64_t seed = 0; seed < 50; ++seed)
      ok += min_pairwise_distances(generate_demo(spec, {EnvKind::RoadCrossing, m}, seed).states)
                .overall_min() >= 0.75;
  CHECK(ok == 100);
}

TEST_CASE("classify_mode recovers the generated mode on 50 seeds per mode") {
  for (EnvKind kind : {EnvKind::Swap, EnvKind::RoadCrossing}) {
    const EnvSpec spec = EnvSpec::defaults(kind);
    for (int m = 0; m < mode_count(kind); ++m) {
      int hits = 0;
      for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto d = generate_demo(spec, {kind, m}, 5000 + seed);
        const auto c = classify_mode(std::span<const JointState>(d.states), spec);
        hits += c && c->label == m;
      }
      INFO(to_string(kind) << " mode " << m);
      CHECK(hits == 50);
    }
  }
}

TEST_CASE("an impossible clearance is a generation error naming the constraint") {
  ExpertParams p;
  p.swap_agent_clearance = 50.0;
  p.retry_budget = 2;
  try {
    generate_demo(EnvSpec::swap(), {EnvKind::Swap, 0}, 1, p);
    FAIL("expected GenerationError");
  } catch (const GenerationError& e) {
    CHECK(e.constraint().find("clearance") != std::string::npos);
  }
}

TEST_CASE("sample_mode frequencies") {
  const EnvSpec spec = EnvSpec::swap();
  std::mt19937_64 rng(3);
  const std::vector<double> one_hot{1, 0, 0, 0, 0, 0};
  for (int k = 0; k < 100; ++k) CHECK(sample_mode(spec, one_hot, rng).label == 0);

  std::vector<int> counts(6, 0);
  const std::vector<double> uniform(6, 1.0);
  for (int k = 0; k < 6000; ++k) ++counts[sample_mode(spec, uniform, rng).label];
  for (int c : counts) CHECK(std::abs(c / 6000.0 - 1.0 / 6.0) <= 0.03);

  std::mt19937_64 a(4), b(4);
  const std::vector<double> w{1, 2, 3, 0, 1, 1}, w5{5, 10, 15, 0, 5, 5};
  for (int k = 0; k < 200; ++k) CHECK(sample_mode(spec, w, a).label == sample_mode(spec, w5, b).label);

  const std::vector<double> zeros(6, 0.0), negative{1, -1, 0, 0, 0, 0};
  CHECK_THROWS_AS(sample_mode(spec, zeros, rng), ValidationError);
  CHECK_THROWS_AS(sample_mode(spec, negative, rng), ValidationError);
}

TEST_CASE("window counts") {
  CHECK(windows_per_agent(40, 16, 8) == 4);
  CHECK(windows_per_agent(57, 16, 1) == 57 - 16 + 1);
  CHECK(windows_per_agent(16, 16, 4) == 1);
  CHECK(windows_per_agent(15, 16, 4) == 0);

  const EnvSpec spec = EnvSpec::swap();
  Demonstration d = generate_demo(spec, {EnvKind::Swap, 1}, 2);
  const std::vector<Demonstration> demos{d};
  const Dataset ds = window_dataset(spec, demos, 16, 8);
  REQUIRE(ds.n_agents() == 2);
  CHECK(ds.windows[0].size() == windows_per_agent(d.horizon, 16, 8));
  // window k of agent 1 starts at step 8k
  const auto& w = ds.windows[1][2];
  CHECK(w.observation == observe(d.states[16], 1, spec, ObsMode::Full).flattened);
  CHECK(w.actions.at(0) == d.per_agent[1].actions[16]);
  CHECK(w.actions.at(15) == d.per_agent[1].actions[31]);

  CHECK_THROWS_AS(window_dataset(spec, demos, d.horizon + 1, 1), ValidationError);
}

TEST_CASE("dataset round trip, truncation and version errors") {
  const EnvSpec spec = EnvSpec::road_crossing();
  CorpusRequest req{{2, 1}, 9};
  const auto demos = generate_corpus(spec, req);
  CHECK(demos.size() == 3);
  const Dataset ds = window_dataset(spec, demos, 16, 4);
  const std::string text = dataset_to_text(ds);
  const Dataset back = dataset_from_text(text);
  CHECK(dataset_to_text(back) == text);
  CHECK(back.windows == ds.windows);
  CHECK(back.env.digest() == ds.env.digest());
  CHECK(back.demos_per_mode == ds.demos_per_mode);

  const std::string cut = text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(dataset_from_text(cut), ParseError);
  const std::string wrong = std::string(text).replace(text.find("\"format_version\":1"),
                                                      18, "\"format_version\":7");
  CHECK_THROWS_AS(dataset_from_text(wrong), VersionError);

  const auto dir = std::filesystem::temp_directory_path() / "mimicd_test_expert";
  std::filesystem::create_directories(dir);
  save_dataset(ds, (dir / "d.jsonl").string());
  CHECK(dataset_to_text(load_dataset((dir / "d.jsonl").string())) == text);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus generation does not depend on the worker count") {
  const EnvSpec spec = EnvSpec::swap();
  CorpusRequest req{{1, 1, 1, 1, 1, 1}, 21};
  const auto a = generate_corpus(spec, req, {}, 1);
  const auto b = generate_corpus(spec, req, {}, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].states == b[k].states);
}
