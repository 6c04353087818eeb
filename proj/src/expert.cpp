#include "mimicd/expert.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mimicd/errors.hpp"
#include "mimicd/metrics.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

int mode_count(EnvKind kind) { return kind == EnvKind::Swap ? 6 : 2; }

bool mode_valid(ModeId mode) {
  return mode.label >= 0 && mode.label < mode_count(mode.env_kind);
}

bool is_trivial_swap_mode(int label) { return label == 0 || label == 1; }

std::string mode_name(ModeId mode) {
  static const char* swap_names[] = {"pass_right",        "pass_left",
                                     "above_agent0_yields", "above_agent1_yields",
                                     "below_agent0_yields", "below_agent1_yields"};
  static const char* road_names[] = {"lower_lane_yields", "upper_lane_yields"};
  if (!mode_valid(mode)) return "invalid";
  return mode.env_kind == EnvKind::Swap ? swap_names[mode.label] : road_names[mode.label];
}

std::size_t Dataset::total_windows() const {
  std::size_t n = 0;
  for (const auto& w : windows) n += w.size();
  return n;
}

namespace {

constexpr double kWaypointAdvance = 0.4;
constexpr double kGoalStop = 0.2;

// Swap geometry of the scripted expert.
constexpr double kArcRadius = 5.5;
constexpr double kArcStepRad = 10.0 * M_PI / 180.0;
constexpr double kSwapCruise = 1.4;
constexpr Vec2 kYieldWait{7.5, 6.5};  // agent 1's wait point above; mirrored for others
constexpr double kYieldGateX = 6.0;

// Road Crossing timing.
constexpr double kCorridorCruise = 1.4;
constexpr double kCrossingCruise = 1.2;
constexpr double kCrossingDawdle = 0.3;
constexpr double kRoadGap = 0.85;
constexpr double kMergeDistance = 2.5;

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

// Tangent point on the circle (origin, radius) seen from p, on the side
// sign(y) == side.
double tangent_angle(Vec2 p, double radius, int side) {
  const double alpha = std::atan2(p.y, p.x);
  const double d = p.norm();
  const double phi = std::acos(std::clamp(radius / d, -1.0, 1.0));
  const double a1 = wrap_angle(alpha + phi);
  const double a2 = wrap_angle(alpha - phi);
  return (std::sin(a1) * side > std::sin(a2) * side) ? a1 : a2;
}

// Waypoints hugging the obstacle on one side, ending at `to`.
std::vector<Vec2> arc_path(Vec2 from, Vec2 to, Vec2 center, int side) {
  const double a0 = tangent_angle(from - center, kArcRadius, side);
  const double a1 = tangent_angle(to - center, kArcRadius, side);
  std::vector<Vec2> pts;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(a1 - a0) / kArcStepRad)));
  for (int k = 0; k <= n; ++k) {
    const double a = a0 + (a1 - a0) * k / n;
    pts.push_back(center + Vec2{kArcRadius * std::cos(a), kArcRadius * std::sin(a)});
  }
  pts.push_back(to);
  return pts;
}

Vec2 p_control(Vec2 pos, Vec2 target, double cruise, double gain) {
  const Vec2 d = target - pos;
  const double dist = d.norm();
  if (dist < 1e-12) return {};
  return d * (std::min(cruise, gain * dist) / dist);
}

struct WaypointFollower {
  std::vector<Vec2> waypoints;
  std::size_t index = 0;

  Vec2 target(Vec2 pos) {
    while (index + 1 < waypoints.size() && distance(pos, waypoints[index]) < kWaypointAdvance)
      ++index;
    return waypoints[index];
  }
};

// Normal(0, sigma) truncated to two standard deviations.
double truncated_noise(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, sigma);
  for (;;) {
    const double v = n(rng);
    if (std::abs(v) <= 2.0 * sigma) return v;
  }
}

class ScriptedExpert {
 public:
  virtual ~ScriptedExpert() = default;
  // Noise-free velocity commands for every agent at the given state.
  virtual std::vector<Vec2> command(const JointState& s) = 0;
};

class SwapExpert : public ScriptedExpert {
 public:
  SwapExpert(const EnvSpec& spec, const JointState& start, int label, double gain)
      : gain_(gain) {
    const Vec2 c = spec.obstacles[0].center;
    const Vec2 s0 = start.agents[0].position, s1 = start.agents[1].position;
    const Vec2 g0 = start.agents[0].goal, g1 = start.agents[1].goal;
    if (label <= 1) {
      // opposite absolute sides
      const int side0 = label == 0 ? -1 : +1;
      route_[0].waypoints = arc_path(s0, g0, c, side0);
      route_[1].waypoints = arc_path(s1, g1, c, -side0);
      return;
    }
    const int side = label <= 3 ? +1 : -1;
    yielder_ = (label == 2 || label == 4) ? 0 : 1;
    const int passer = 1 - yielder_;
    const Vec2 start_y = yielder_ == 0 ? s0 : s1;
    const Vec2 goal_y = yielder_ == 0 ? g0 : g1;
    // the wait point sits on the yielder's start side, outside the passer's route
    wait_ = c + Vec2{kYieldWait.x * (yielder_ == 0 ? -1.0 : 1.0), kYieldWait.y * side};
    gate_sign_ = yielder_ == 0 ? -1.0 : 1.0;
    route_[passer].waypoints = arc_path(passer == 0 ? s0 : s1, passer == 0 ? g0 : g1, c, side);
    route_[yielder_].waypoints = {wait_};
    (void)start_y;
    resume_ = arc_path(wait_, goal_y, c, side);
    center_x_ = c.x;
  }

  std::vector<Vec2> command(const JointState& s) override {
    std::vector<Vec2> out(2);
    for (int i = 0; i < 2; ++i) {
      const Vec2 pos = s.agents[i].position;
      if (i == yielder_ && !released_) {
        const Vec2 passer = s.agents[1 - i].position;
        const bool passed = gate_sign_ * (passer.x - center_x_) > kYieldGateX;
        if (passed && distance(pos, wait_) < kWaypointAdvance) {
          released_ = true;
          route_[i] = WaypointFollower{resume_, 0};
        }
      }
      out[i] = p_control(pos, route_[i].target(pos), kSwapCruise, gain_);
    }
    return out;
  }

 private:
  double gain_;
  WaypointFollower route_[2];
  int yielder_ = -1;
  bool released_ = false;
  Vec2 wait_;
  double gate_sign_ = 1.0;
  double center_x_ = 0.0;
  std::vector<Vec2> resume_;
};

class RoadExpert : public ScriptedExpert {
 public:
  RoadExpert(const JointState& start, int label, double gain) : label_(label), gain_(gain) {
    for (int i = 0; i < 2; ++i) {
      const Vec2 s = start.agents[i].position, g = start.agents[i].goal;
      const double dir = g.x > s.x ? 1.0 : -1.0;
      dir_[i] = dir;
      route_[i].waypoints = {{s.x + dir * kMergeDistance, g.y}, g};
    }
    const Vec2 s = start.agents[2].position, g = start.agents[2].goal;
    route_[2].waypoints = {{g.x, s.y + 1.5}, g};
    lane_[0] = start.agents[0].goal.y;
    lane_[1] = start.agents[1].goal.y;
  }

  std::vector<Vec2> command(const JointState& s) override {
    std::vector<Vec2> out(3);
    const Vec2 cross = s.agents[2].position;
    // The corridor agent that yields holds short of the crossing line until
    // the crossing agent has cleared its lane.
    const int yielder = label_;
    for (int i = 0; i < 2; ++i) {
      const Vec2 pos = s.agents[i].position;
      Vec2 target = route_[i].target(pos);
      if (i == yielder && cross.y < lane_[i] + kRoadGap) {
        const double limit = cross.x - dir_[i] * kRoadGap;
        if (dir_[i] < 0.0)
          target.x = std::max(target.x, limit);
        else
          target.x = std::min(target.x, limit);
      }
      out[i] = p_control(pos, target, kCorridorCruise, gain_);
    }
    // The crossing agent waits below the lane of the agent that goes first.
    // It sets off briskly when it goes in front of agent 0 and dawdles when
    // it goes behind, so its intent is visible long before the lanes meet.
    const int leader = 1 - label_;
    const bool leader_passed = dir_[leader] * (s.agents[leader].position.x - cross.x) > kRoadGap;
    Vec2 target = route_[2].target(cross);
    if (!leader_passed) target.y = std::min(target.y, lane_[leader] - kRoadGap);
    const double cruise = label_ == 1 && !leader_passed ? kCrossingDawdle : kCrossingCruise;
    out[2] = p_control(cross, target, cruise, gain_);
    return out;
  }

 private:
  int label_;
  double gain_;
  WaypointFollower route_[3];
  double lane_[2] = {0.0, 0.0};
  double dir_[2] = {1.0, 1.0};  // travel direction along x, fixed at the start
};

Vec2 cap_norm(Vec2 v, double cap) {
  const double n = v.norm();
  return n > cap ? v * (cap / n) : v;
}

struct Attempt {
  Demonstration demo;
  std::string violated;  // empty when all constraints hold
  std::string detail;
};

Attempt run_expert(const EnvSpec& spec, ModeId mode, std::uint64_t seed,
                   const ExpertParams& params) {
  std::mt19937_64 rng(seed);
  JointState state = initial_state(spec, rng);
  std::unique_ptr<ScriptedExpert> expert;
  if (spec.kind == EnvKind::Swap)
    expert = std::make_unique<SwapExpert>(spec, state, mode.label, params.gain);
  else
    expert = std::make_unique<RoadExpert>(state, mode.label, params.gain);

  Attempt a;
  Demonstration& d = a.demo;
  d.mode = mode;
  d.seed = seed;
  d.per_agent.resize(spec.n_agents);
  d.states.push_back(state);
  const int limit = spec.max_steps;
  while (!all_at_goal(state, kGoalStop) && static_cast<int>(d.horizon) < limit) {
    const std::vector<Vec2> cmd = expert->command(state);
    JointState next;
    next.time_index = state.time_index + 1;
    for (int i = 0; i < spec.n_agents; ++i) {
      d.per_agent[i].observations.push_back(
          observe(state, static_cast<std::size_t>(i), spec, ObsMode::Full).flattened);
      Vec2 act = cmd[i] + Vec2{truncated_noise(rng, params.noise_sigma),
                               truncated_noise(rng, params.noise_sigma)};
      act = cap_norm(act, params.v_max);
      d.per_agent[i].actions.push_back(act);
      next.agents.push_back(step_single_integrator(state.agents[i], act, spec.dt));
    }
    state = std::move(next);
    d.states.push_back(state);
    ++d.horizon;
  }

  auto violate = [&](const char* name, std::string detail) {
    if (a.violated.empty()) {
      a.violated = name;
      a.detail = std::move(detail);
    }
  };
  if (!all_at_goal(state, 0.5))
    violate("goal_reached", "agents not within 0.5 of goals after " +
                                std::to_string(d.horizon) + " steps");
  const double agent_clear = spec.kind == EnvKind::Swap ? params.swap_agent_clearance
                                                        : params.road_agent_clearance;
  const double min_pair = min_pairwise_distances(d.states).overall_min();
  if (min_pair < agent_clear)
    violate("agent_clearance", "min pairwise distance " + std::to_string(min_pair));
  for (double v : min_obstacle_distances(d.states, spec.obstacles))
    if (v < params.swap_obstacle_clearance)
      violate("obstacle_clearance", "min obstacle center distance " + std::to_string(v));
  const auto cls = classify_mode(d.states, spec);
  if (!cls || !(*cls == mode))
    violate("mode_realized", "requested " + mode_name(mode) + ", classified " +
                                 (cls ? mode_name(*cls) : std::string("unclassified")));
  return a;
}

}  // namespace

Demonstration generate_demo(const EnvSpec& spec, ModeId mode, std::uint64_t seed,
                            const ExpertParams& params) {
  spec.validate();
  if (mode.env_kind != spec.kind || !mode_valid(mode))
    throw ValidationError("generate_demo: mode " + std::to_string(mode.label) +
                          " invalid for " + to_string(spec.kind));
  std::string violated, detail;
  for (int attempt = 0; attempt < params.retry_budget; ++attempt) {
    const std::uint64_t s = attempt == 0 ? seed : derive_seed(seed, attempt);
    Attempt a = run_expert(spec, mode, s, params);
    if (a.violated.empty()) return std::move(a.demo);
    violated = a.violated;
    detail = a.detail;
  }
  throw GenerationError(violated, detail + " (" + std::to_string(params.retry_budget) +
                                      " attempts, mode " + mode_name(mode) + ")");
}

ModeId sample_mode(const EnvSpec& spec, std::span<const double> weights, std::mt19937_64& rng) {
  const int n = mode_count(spec.kind);
  if (static_cast<int>(weights.size()) != n)
    throw ValidationError("sample_mode: expected " + std::to_string(n) + " weights");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("sample_mode: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ValidationError("sample_mode: weights are all zero");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * total;
  double acc = 0.0;
  int last_positive = 0;
  for (int k = 0; k < n; ++k) {
    if (weights[k] <= 0.0) continue;
    last_positive = k;
    acc += weights[k];
    if (u < acc) return {spec.kind, k};
  }
  return {spec.kind, last_positive};
}

std::size_t windows_per_agent(std::size_t demo_horizon, std::size_t T, std::size_t stride) {
  if (T > demo_horizon || stride == 0) return 0;
  return (demo_horizon - T) / stride + 1;
}

Dataset window_dataset(const EnvSpec& spec, std::span<const Demonstration> demos, std::size_t T,
                       std::size_t stride) {
  if (T == 0) throw ValidationError("window_dataset: T must be >= 1");
  if (stride == 0) throw ValidationError("window_dataset: stride must be >= 1");
  Dataset ds;
  ds.env = spec;
  ds.horizon = T;
  ds.stride = stride;
  ds.windows.resize(spec.n_agents);
  for (const Demonstration& d : demos) {
    if (d.horizon < T)
      throw ValidationError("window_dataset: T = " + std::to_string(T) +
                            " exceeds demonstration horizon " + std::to_string(d.horizon));
    if (d.per_agent.size() != static_cast<std::size_t>(spec.n_agents))
      throw ValidationError("window_dataset: demonstration agent count mismatch");
    ds.demos_per_mode[d.mode.label] += 1;
    for (std::size_t i = 0; i < d.per_agent.size(); ++i) {
      const AgentRecord& rec = d.per_agent[i];
      for (std::size_t t = 0; t + T <= d.horizon; t += stride) {
        TrainingWindow w;
        w.agent_index = i;
        w.observation = rec.observations[t];
        w.actions = ActionTrajectory(T);
        for (std::size_t k = 0; k < T; ++k) w.actions.set(k, rec.actions[t + k]);
        ds.windows[i].push_back(std::move(w));
      }
    }
  }
  return ds;
}

std::vector<Demonstration> generate_corpus(const EnvSpec& spec, const CorpusRequest& request,
                                           const ExpertParams& params, int workers) {
  if (static_cast<int>(request.demos_per_mode.size()) != mode_count(spec.kind))
    throw ValidationError("generate_corpus: need a demo count for each of " +
                          std::to_string(mode_count(spec.kind)) + " modes");
  struct Job {
    int mode;
    int k;
  };
  std::vector<Job> jobs;
  for (int m = 0; m < static_cast<int>(request.demos_per_mode.size()); ++m) {
    if (request.demos_per_mode[m] < 0) throw ValidationError("negative demo count");
    for (int k = 0; k < request.demos_per_mode[m]; ++k) jobs.push_back({m, k});
  }
  std::vector<Demonstration> out(jobs.size());
  std::vector<std::string> constraint(jobs.size()), detail(jobs.size());
  const int threads = workers > 0 ? workers : 1;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    try {
      const std::uint64_t seed =
          derive_seed(derive_seed(request.seed, static_cast<std::uint64_t>(jobs[j].mode)),
                      static_cast<std::uint64_t>(jobs[j].k));
      out[j] = generate_demo(spec, {spec.kind, jobs[j].mode}, seed, params);
    } catch (const GenerationError& e) {
      constraint[j] = e.constraint();
      detail[j] = e.detail();
    }
  }
  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (!constraint[j].empty()) throw GenerationError(constraint[j], detail[j]);
  return out;
}

}  // namespace mimicd
