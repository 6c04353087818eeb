#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace mimicd {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

struct AgentState {
  Vec2 position;
  Vec2 goal;
  bool operator==(const AgentState&) const = default;
};

struct JointState {
  std::vector<AgentState> agents;
  std::int64_t time_index = 0;
  bool operator==(const JointState&) const = default;
};

struct Obstacle {
  Vec2 center;
  double radius = 1.0;
};

enum class EnvKind { Swap, RoadCrossing };
enum class ObsMode { Full, EgoOnly };

std::string to_string(EnvKind kind);
EnvKind env_kind_from_string(const std::string& s);
std::string to_string(ObsMode mode);
ObsMode obs_mode_from_string(const std::string& s);

struct EnvSpec {
  EnvKind kind = EnvKind::Swap;
  int n_agents = 2;
  std::vector<Obstacle> obstacles;
  std::vector<Vec2> nominal_starts;
  std::vector<Vec2> nominal_goals;
  double start_jitter_radius = 0.0;
  double dt = 0.1;
  int max_steps = 100;
  // Road Crossing only: corridor centered on y = 0.
  double corridor_half_width = 0.0;

  static EnvSpec swap();
  static EnvSpec road_crossing();
  static EnvSpec defaults(EnvKind kind);

  // Throws ValidationError on any broken invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static EnvSpec from_json(const nlohmann::json& j);

  // Stable fingerprint of every field; binds checkpoints and episodes.
  std::string digest() const;

  // Obstacle or corridor constants appended to every observation (length 3).
  std::vector<double> context() const;
};

struct Observation {
  Vec2 ego_position;
  std::vector<Vec2> others_positions;
  Vec2 ego_goal;
  std::vector<double> context;
  // [ego_position, ego_goal, others_positions..., context]
  std::vector<double> flattened;
};

// Horizon x 2 velocity commands, row-major.
struct ActionTrajectory {
  std::size_t horizon = 0;
  std::vector<double> values;

  ActionTrajectory() = default;
  explicit ActionTrajectory(std::size_t t) : horizon(t), values(2 * t, 0.0) {}
  ActionTrajectory(std::size_t t, std::vector<double> v);

  Vec2 at(std::size_t t) const { return {values[2 * t], values[2 * t + 1]}; }
  void set(std::size_t t, Vec2 a) {
    values[2 * t] = a.x;
    values[2 * t + 1] = a.y;
  }
  bool finite() const;
  bool operator==(const ActionTrajectory&) const = default;
};

constexpr std::size_t kActionDim = 2;

AgentState step_single_integrator(const AgentState& state, Vec2 action, double dt);

Observation observe(const JointState& joint, std::size_t agent_index,
                    const EnvSpec& spec, ObsMode mode);
std::size_t obs_dim(const EnvSpec& spec, ObsMode mode);

// Drops the other agents' positions from a Full-mode flat observation.
std::vector<double> project_ego_only(std::span<const double> full, const EnvSpec& spec);

// Minimum Euclidean distance per unordered agent pair over a state sequence.
struct PairDistances {
  std::size_t n_agents = 0;
  std::vector<double> values;  // pairs (i, j), i < j, lexicographic order

  double at(std::size_t i, std::size_t j) const;
  double overall_min() const;
};

PairDistances min_pairwise_distances(std::span<const JointState> states);

// Per-agent minimum distance to any obstacle center.
std::vector<double> min_obstacle_distances(std::span<const JointState> states,
                                           std::span<const Obstacle> obstacles);

struct CollisionReport {
  bool agent_collision = false;
  bool obstacle_collision = false;
  bool any() const { return agent_collision || obstacle_collision; }
};

// Strict inequalities: a distance equal to the threshold is not a collision.
CollisionReport collision_report(std::span<const JointState> states,
                                 double agent_threshold, double obstacle_threshold,
                                 std::span<const Obstacle> obstacles);

// Nominal starts jittered uniformly inside a disk; goals fixed.
JointState initial_state(const EnvSpec& spec, std::mt19937_64& rng);

bool all_at_goal(const JointState& joint, double tolerance);

}  // namespace mimicd
