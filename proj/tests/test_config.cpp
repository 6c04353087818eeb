#include <doctest.h>

#include <string>

#include "mimicd/config.hpp"
#include "mimicd/errors.hpp"
#include "mimicd/metrics.hpp"

using namespace mimicd;

namespace {

std::string error_of(const std::string& ini, const std::vector<std::string>& overrides = {}) {
  try {
    parse_experiment(ini, overrides);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty config yields the Swap defaults") {
  const auto c = parse_experiment("");
  CHECK(c.env.kind == EnvKind::Swap);
  CHECK(c.dataset.demos_per_mode.size() == 6);
  CHECK(c.eval.agent_thresholds == default_agent_thresholds(EnvKind::Swap));
  CHECK(c.eval.obstacle_threshold.has_value());
  CHECK(c.rollout.T == c.dataset.T);
  CHECK(c.train.execute_horizon == c.rollout.h);
}

TEST_CASE("Road Crossing defaults carry four agent thresholds and no obstacle threshold") {
  const auto c = parse_experiment("[env]\nkind = road_crossing\n");
  CHECK(c.env.kind == EnvKind::RoadCrossing);
  CHECK(c.dataset.demos_per_mode.size() == 2);
  CHECK(c.eval.agent_thresholds.size() == 4);
  CHECK_FALSE(c.eval.obstacle_threshold.has_value());
}

TEST_CASE("file values are read and overrides win over the file") {
  const std::string ini =
      "[train]\nsteps = 77\nlr = 0.002\nmethod = bc\n[rollout]\nh = 8\n[dataset]\n"
      "demos_per_mode = 3\nT = 16\n";
  const auto c = parse_experiment(ini, {"train.steps=91", "rollout.seed=12"});
  CHECK(c.train.steps == 91);
  CHECK(c.train.optimizer.lr == doctest::Approx(0.002));
  CHECK(c.train.method == Method::BC);
  CHECK(c.rollout.h == 8);
  CHECK(c.train.execute_horizon == 8);
  CHECK(c.rollout.seed == 12);
  CHECK(c.dataset.demos_per_mode == std::vector<int>(6, 3));
}

TEST_CASE("unknown keys and sections are rejected by name") {
  CHECK(error_of("[train]\nlearning_rate = 0.1\n").find("train.learning_rate") != std::string::npos);
  CHECK(error_of("[bogus]\nx = 1\n").find("bogus.x") != std::string::npos);
  CHECK(error_of("", {"rollout.horizon=3"}).find("rollout.horizon") != std::string::npos);
  CHECK(error_of("", {"no_equals_sign"}).find("no_equals_sign") != std::string::npos);
}

TEST_CASE("malformed values and broken invariants raise ValidationError") {
  CHECK(error_of("[train]\nsteps = many\n").find("train.steps") != std::string::npos);
  CHECK_FALSE(error_of("[env]\nkind = maze\n").empty());
  CHECK_FALSE(error_of("[dataset]\ndemos_per_mode = 1,2\n").empty());
  CHECK_FALSE(error_of("[eval]\nagent_thresholds = 0.5,-1\n").empty());
  CHECK_FALSE(error_of("[env]\nkind = road_crossing\n[eval]\nobstacle_threshold = 2\n").empty());
  CHECK_FALSE(error_of("[rollout]\nh = 0\n").empty());
  CHECK_FALSE(error_of("[rollout]\nh = 17\n").empty());
  CHECK_THROWS_AS(load_experiment("/nonexistent/config.ini"), ValidationError);
}

TEST_CASE("obstacle threshold accepts none") {
  const auto c = parse_experiment("[eval]\nobstacle_threshold = none\n");
  CHECK_FALSE(c.eval.obstacle_threshold.has_value());
}

TEST_CASE("resolved INI round-trips exactly") {
  const auto a = parse_experiment(
      "[env]\nkind = road_crossing\n[train]\nsteps = 123\nlr = 0.00031\nloss_weighting = yes\n"
      "[eval]\nagent_thresholds = 0.7,0.6\n[output]\ndir = runs/x\n");
  const std::string text = experiment_to_ini(a);
  const auto b = parse_experiment(text);
  CHECK(experiment_to_ini(b) == text);
  CHECK(b.env.digest() == a.env.digest());
  CHECK(b.train.loss_weighting);
  CHECK(b.train.optimizer.lr == a.train.optimizer.lr);
  CHECK(b.eval.agent_thresholds == a.eval.agent_thresholds);
  CHECK(b.output_dir == "runs/x");
}

TEST_CASE("shipped example configurations resolve to the defaults") {
  for (EnvKind kind : {EnvKind::Swap, EnvKind::RoadCrossing}) {
    const auto c = load_experiment(std::string(MIMICD_CONFIG_DIR) + "/" + to_string(kind) + ".ini",
                                   {"output.dir=out"});
    ExperimentConfig d = default_experiment(kind);
    d.output_dir = "out";
    CHECK(experiment_to_ini(c) == experiment_to_ini(d));
  }
}
