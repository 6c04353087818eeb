#include "mimicd/env.hpp"

#include <algorithm>
#include <limits>

#include "mimicd/errors.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

std::string to_string(EnvKind kind) {
  return kind == EnvKind::Swap ? "swap" : "road_crossing";
}

EnvKind env_kind_from_string(const std::string& s) {
  if (s == "swap") return EnvKind::Swap;
  if (s == "road_crossing") return EnvKind::RoadCrossing;
  throw ValidationError("unknown environment kind '" + s + "'");
}

std::string to_string(ObsMode mode) { return mode == ObsMode::Full ? "full" : "ego_only"; }

ObsMode obs_mode_from_string(const std::string& s) {
  if (s == "full") return ObsMode::Full;
  if (s == "ego_only") return ObsMode::EgoOnly;
  throw ValidationError("unknown observation mode '" + s + "'");
}

EnvSpec EnvSpec::swap() {
  EnvSpec s;
  s.kind = EnvKind::Swap;
  s.n_agents = 2;
  s.obstacles = {Obstacle{{0.0, 0.0}, 4.0}};
  s.nominal_starts = {{-10.0, 0.0}, {10.0, 0.0}};
  s.nominal_goals = {{10.0, 0.0}, {-10.0, 0.0}};
  s.start_jitter_radius = 1.0;
  s.dt = 0.1;
  s.max_steps = 345;
  return s;
}

EnvSpec EnvSpec::road_crossing() {
  EnvSpec s;
  s.kind = EnvKind::RoadCrossing;
  s.n_agents = 3;
  s.nominal_starts = {{10.0, -0.9}, {-10.0, 0.9}, {0.0, -6.0}};
  s.nominal_goals = {{-10.0, -0.9}, {10.0, 0.9}, {0.0, 6.0}};
  s.start_jitter_radius = 0.5;
  s.dt = 0.1;
  s.max_steps = 255;
  s.corridor_half_width = 2.0;
  return s;
}

EnvSpec EnvSpec::defaults(EnvKind kind) {
  return kind == EnvKind::Swap ? swap() : road_crossing();
}

void EnvSpec::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("EnvSpec: " + m); };
  if (kind == EnvKind::Swap) {
    if (n_agents != 2) fail("swap requires n_agents = 2");
    if (obstacles.size() != 1) fail("swap requires exactly one obstacle");
  } else {
    if (n_agents != 3) fail("road_crossing requires n_agents = 3");
    if (!(corridor_half_width > 0.0)) fail("corridor_half_width must be > 0");
  }
  if (nominal_starts.size() != static_cast<std::size_t>(n_agents) ||
      nominal_goals.size() != static_cast<std::size_t>(n_agents))
    fail("nominal_starts/nominal_goals must have n_agents entries");
  for (const auto& o : obstacles)
    if (!(o.radius > 0.0) || !o.center.finite()) fail("obstacle radius must be > 0");
  for (const auto& v : nominal_starts)
    if (!v.finite()) fail("non-finite start");
  for (const auto& v : nominal_goals)
    if (!v.finite()) fail("non-finite goal");
  if (!(start_jitter_radius >= 0.0)) fail("start_jitter_radius must be >= 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) fail("dt must be > 0");
  if (max_steps < 1) fail("max_steps must be >= 1");
}

namespace {
nlohmann::json vec_json(Vec2 v) { return hex_array(std::vector<double>{v.x, v.y}); }
Vec2 vec_from(const nlohmann::json& j) {
  auto v = parse_hex_array(j);
  if (v.size() != 2) throw ParseError("expected a 2-vector");
  return {v[0], v[1]};
}
}  // namespace

nlohmann::json EnvSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["n_agents"] = n_agents;
  auto obs = nlohmann::json::array();
  for (const auto& o : obstacles)
    obs.push_back({{"center", vec_json(o.center)}, {"radius", hexfloat(o.radius)}});
  j["obstacles"] = obs;
  auto starts = nlohmann::json::array();
  for (auto v : nominal_starts) starts.push_back(vec_json(v));
  auto goals = nlohmann::json::array();
  for (auto v : nominal_goals) goals.push_back(vec_json(v));
  j["nominal_starts"] = starts;
  j["nominal_goals"] = goals;
  j["start_jitter_radius"] = hexfloat(start_jitter_radius);
  j["dt"] = hexfloat(dt);
  j["max_steps"] = max_steps;
  j["corridor_half_width"] = hexfloat(corridor_half_width);
  return j;
}

EnvSpec EnvSpec::from_json(const nlohmann::json& j) {
  try {
    EnvSpec s;
    s.kind = env_kind_from_string(j.at("kind").get<std::string>());
    s.n_agents = j.at("n_agents").get<int>();
    for (const auto& o : j.at("obstacles"))
      s.obstacles.push_back(
          {vec_from(o.at("center")), parse_hexfloat(o.at("radius").get<std::string>())});
    for (const auto& v : j.at("nominal_starts")) s.nominal_starts.push_back(vec_from(v));
    for (const auto& v : j.at("nominal_goals")) s.nominal_goals.push_back(vec_from(v));
    s.start_jitter_radius = parse_hexfloat(j.at("start_jitter_radius").get<std::string>());
    s.dt = parse_hexfloat(j.at("dt").get<std::string>());
    s.max_steps = j.at("max_steps").get<int>();
    s.corridor_half_width = parse_hexfloat(j.at("corridor_half_width").get<std::string>());
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("env spec: ") + e.what());
  }
}

std::string EnvSpec::digest() const { return hex64(fnv1a64(to_json().dump())); }

std::vector<double> EnvSpec::context() const {
  if (kind == EnvKind::Swap) {
    const Obstacle& o = obstacles.at(0);
    return {o.center.x, o.center.y, o.radius};
  }
  return {corridor_half_width, 0.0, 0.0};
}

ActionTrajectory::ActionTrajectory(std::size_t t, std::vector<double> v)
    : horizon(t), values(std::move(v)) {
  if (values.size() != kActionDim * t)
    throw ValidationError("action trajectory needs " + std::to_string(kActionDim * t) +
                          " values, got " + std::to_string(values.size()));
}

bool ActionTrajectory::finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

AgentState step_single_integrator(const AgentState& state, Vec2 action, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("step: dt must be finite and > 0");
  if (!state.position.finite() || !state.goal.finite() || !action.finite())
    throw ValidationError("step: non-finite state or action");
  return {state.position + action * dt, state.goal};
}

std::size_t obs_dim(const EnvSpec& spec, ObsMode mode) {
  const std::size_t others = mode == ObsMode::Full ? 2 * (spec.n_agents - 1) : 0;
  return 4 + others + 3;
}

Observation observe(const JointState& joint, std::size_t agent_index, const EnvSpec& spec,
                    ObsMode mode) {
  if (agent_index >= joint.agents.size())
    throw ValidationError("observe: agent index " + std::to_string(agent_index) +
                          " out of range for " + std::to_string(joint.agents.size()) +
                          " agents");
  Observation o;
  const AgentState& ego = joint.agents[agent_index];
  o.ego_position = ego.position;
  o.ego_goal = ego.goal;
  if (mode == ObsMode::Full)
    for (std::size_t j = 0; j < joint.agents.size(); ++j)
      if (j != agent_index) o.others_positions.push_back(joint.agents[j].position);
  o.context = spec.context();
  o.flattened = {o.ego_position.x, o.ego_position.y, o.ego_goal.x, o.ego_goal.y};
  for (Vec2 p : o.others_positions) {
    o.flattened.push_back(p.x);
    o.flattened.push_back(p.y);
  }
  o.flattened.insert(o.flattened.end(), o.context.begin(), o.context.end());
  return o;
}

std::vector<double> project_ego_only(std::span<const double> full, const EnvSpec& spec) {
  if (full.size() != obs_dim(spec, ObsMode::Full))
    throw ValidationError("project_ego_only: expected a full observation of length " +
                          std::to_string(obs_dim(spec, ObsMode::Full)));
  std::vector<double> out(full.begin(), full.begin() + 4);
  out.insert(out.end(), full.end() - 3, full.end());
  return out;
}

double PairDistances::at(std::size_t i, std::size_t j) const {
  if (i == j || i >= n_agents || j >= n_agents) throw ValidationError("invalid agent pair");
  if (i > j) std::swap(i, j);
  // offset of row i in the strict upper triangle
  const std::size_t idx = i * n_agents - i * (i + 1) / 2 + (j - i - 1);
  return values[idx];
}

double PairDistances::overall_min() const {
  return values.empty() ? std::numeric_limits<double>::infinity()
                        : *std::min_element(values.begin(), values.end());
}

PairDistances min_pairwise_distances(std::span<const JointState> states) {
  if (states.empty()) throw ValidationError("min_pairwise_distances: empty state sequence");
  PairDistances out;
  out.n_agents = states.front().agents.size();
  const std::size_t n = out.n_agents;
  out.values.assign(n * (n - 1) / 2, std::numeric_limits<double>::infinity());
  for (const JointState& s : states) {
    if (s.agents.size() != n) throw ValidationError("min_pairwise_distances: agent count changes");
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j, ++k)
        out.values[k] =
            std::min(out.values[k], distance(s.agents[i].position, s.agents[j].position));
  }
  return out;
}

std::vector<double> min_obstacle_distances(std::span<const JointState> states,
                                           std::span<const Obstacle> obstacles) {
  if (states.empty()) return {};
  std::vector<double> out(states.front().agents.size(),
                          std::numeric_limits<double>::infinity());
  for (const JointState& s : states)
    for (std::size_t i = 0; i < out.size(); ++i)
      for (const Obstacle& o : obstacles)
        out[i] = std::min(out[i], distance(s.agents[i].position, o.center));
  return out;
}

CollisionReport collision_report(std::span<const JointState> states, double agent_threshold,
                                 double obstacle_threshold,
                                 std::span<const Obstacle> obstacles) {
  if (!(agent_threshold > 0.0) || !(obstacle_threshold > 0.0))
    throw ValidationError("collision_report: thresholds must be > 0");
  CollisionReport r;
  const PairDistances d = min_pairwise_distances(states);
  r.agent_collision = d.overall_min() < agent_threshold;
  for (double v : min_obstacle_distances(states, obstacles))
    if (v < obstacle_threshold) r.obstacle_collision = true;
  return r;
}

JointState initial_state(const EnvSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  JointState s;
  for (int i = 0; i < spec.n_agents; ++i) {
    // area-uniform sample in the jitter disk
    const double r = spec.start_jitter_radius * std::sqrt(unit(rng));
    const double th = 2.0 * M_PI * unit(rng);
    const Vec2 start = spec.nominal_starts[i] + Vec2{r * std::cos(th), r * std::sin(th)};
    s.agents.push_back({start, spec.nominal_goals[i]});
  }
  return s;
}

bool all_at_goal(const JointState& joint, double tolerance) {
  return std::all_of(joint.agents.begin(), joint.agents.end(), [&](const AgentState& a) {
    return distance(a.position, a.goal) <= tolerance;
  });
}

}  // namespace mimicd
