#include "mimicd/execution.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include "mimicd/errors.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

using ad::Tensor;

void RolloutConfig::validate() const {
  if (T == 0 || h == 0 || h > T)
    throw ValidationError("rollout config: need 1 <= h <= T (h = " + std::to_string(h) +
                          ", T = " + std::to_string(T) + ")");
  if (max_steps < 0) throw ValidationError("rollout config: max_steps must be >= 0");
  if (!(goal_tolerance > 0.0)) throw ValidationError("rollout config: goal_tolerance must be > 0");
  karras_schedule(schedule);
}

nlohmann::json to_json(const RolloutConfig& c) {
  return {{"T", c.T},
          {"h", c.h},
          {"max_steps", c.max_steps},
          {"goal_tolerance", hexfloat(c.goal_tolerance)},
          {"seed", c.seed},
          {"K", c.schedule.K},
          {"sigma_min", hexfloat(c.schedule.sigma_min)},
          {"sigma_max", hexfloat(c.schedule.sigma_max)},
          {"rho", hexfloat(c.schedule.rho)}};
}

std::vector<ActionTrajectory> PolicyPlanner::plan(const Tensor& obs,
                                                  std::span<std::mt19937_64* const> rngs) {
  const Tensor out = policy_.kind == PolicyKind::Diffusion
                         ? sample_batch(policy_, obs, schedule_, rngs, false)
                         : regress_batch(policy_, obs);
  const std::size_t A = policy_.config.action_len();
  std::vector<ActionTrajectory> plans;
  for (std::size_t r = 0; r < obs.rows(); ++r)
    plans.emplace_back(policy_.config.T,
                       std::vector<double>(out.data() + r * A, out.data() + (r + 1) * A));
  return plans;
}

ActionTrajectory plan(const Policy& policy, std::span<const double> obs,
                      const NoiseSchedule& schedule, std::mt19937_64& rng) {
  if (obs.size() != policy.config.obs_dim)
    throw ValidationError("plan: observation length " + std::to_string(obs.size()) +
                          " does not match the policy (" + std::to_string(policy.config.obs_dim) +
                          ")");
  PolicyPlanner p(policy, schedule);
  const Tensor o({1, obs.size()}, std::vector<double>(obs.begin(), obs.end()));
  std::mt19937_64* r[1] = {&rng};
  return p.plan(o, r).front();
}

JointState episode_start(const EnvSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return initial_state(spec, rng);
}

std::uint64_t agent_stream_seed(std::uint64_t episode_seed, std::size_t agent) {
  return derive_seed(episode_seed, agent + 1);
}

namespace {

struct Run {
  Episode ep;
  JointState state;
  std::vector<std::mt19937_64> rngs;
  bool done = false;
};

// Applies the terminal checks that precede a step; returns true when the
// episode ends here.
bool terminal(Run& r, int max_steps, double tol) {
  if (all_at_goal(r.state, tol)) {
    r.ep.termination = Termination::AllGoalsReached;
    return r.done = true;
  }
  if (static_cast<int>(r.ep.executed_steps()) >= max_steps) {
    r.ep.termination = Termination::StepBudget;
    return r.done = true;
  }
  return false;
}

}  // namespace

std::vector<Episode> rollout_lockstep(std::span<AgentPlanner* const> planners, const EnvSpec& spec,
                                      const RolloutConfig& config,
                                      std::span<const std::uint64_t> seeds,
                                      const ReplanHook& hook) {
  config.validate();
  spec.validate();
  const std::size_t N = planners.size();
  if (static_cast<int>(N) != spec.n_agents)
    throw BindingError("rollout: " + std::to_string(N) + " planners for " +
                       std::to_string(spec.n_agents) + " agents");
  for (auto* p : planners)
    if (p->horizon() != config.T)
      throw ValidationError("rollout: planner horizon " + std::to_string(p->horizon()) +
                            " differs from T = " + std::to_string(config.T));
  const int max_steps = config.max_steps > 0 ? config.max_steps : spec.max_steps;
  const std::string digest = spec.digest();

  std::vector<Run> runs(seeds.size());
  for (std::size_t e = 0; e < seeds.size(); ++e) {
    Run& r = runs[e];
    r.state = episode_start(spec, seeds[e]);
    r.ep.env_digest = digest;
    r.ep.seed = seeds[e];
    r.ep.states.push_back(r.state);
    r.ep.actions.assign(N, {});
    for (std::size_t i = 0; i < N; ++i) r.rngs.emplace_back(agent_stream_seed(seeds[e], i));
  }

  std::vector<std::size_t> active;
  while (true) {
    active.clear();
    for (std::size_t e = 0; e < runs.size(); ++e)
      if (!runs[e].done && !terminal(runs[e], max_steps, config.goal_tolerance)) active.push_back(e);
    if (active.empty()) break;

    std::vector<std::vector<ActionTrajectory>> plans(N);  // [agent][active slot]
    for (std::size_t i = 0; i < N; ++i) {
      const ObsMode mode = planners[i]->obs_mode();
      const std::size_t d = obs_dim(spec, mode);
      Tensor obs = Tensor::matrix(active.size(), d);
      std::vector<std::mt19937_64*> rngs;
      std::vector<std::mt19937_64> before;
      for (std::size_t k = 0; k < active.size(); ++k) {
        Run& r = runs[active[k]];
        const auto o = observe(r.state, i, spec, mode).flattened;
        std::copy(o.begin(), o.end(), obs.data() + k * d);
        rngs.push_back(&r.rngs[i]);
        if (hook) before.push_back(r.rngs[i]);
      }
      plans[i] = planners[i]->plan(obs, rngs);
      if (plans[i].size() != active.size())
        throw ValidationError("rollout: planner returned the wrong number of plans");
      for (const auto& p : plans[i])
        if (p.horizon != config.T || p.values.size() != 2 * config.T)
          throw ValidationError("rollout: planner returned a plan of the wrong shape");
      if (hook)
        for (std::size_t k = 0; k < active.size(); ++k)
          hook(active[k], i, std::span<const double>(obs.data() + k * d, d), before[k],
               plans[i][k]);
    }

    for (std::size_t k = 0; k < active.size(); ++k) {
      Run& r = runs[active[k]];
      ReplanEvent ev;
      ev.time_index = r.state.time_index;
      for (std::size_t i = 0; i < N; ++i) ev.plans.push_back(plans[i][k]);
      r.ep.replans.push_back(std::move(ev));
      for (std::size_t s = 0; s < config.h; ++s) {
        if (s > 0 && terminal(r, max_steps, config.goal_tolerance)) break;
        JointState next;
        next.time_index = r.state.time_index + 1;
        bool finite = true;
        for (std::size_t i = 0; i < N; ++i) finite = finite && plans[i][k].at(s).finite();
        if (!finite) {
          r.ep.termination = Termination::Diverged;
          r.done = true;
          break;
        }
        for (std::size_t i = 0; i < N; ++i) {
          const Vec2 a = plans[i][k].at(s);
          r.ep.actions[i].push_back(a);
          next.agents.push_back(step_single_integrator(r.state.agents[i], a, spec.dt));
        }
        r.state = std::move(next);
        r.ep.states.push_back(r.state);
        bool ok = true;
        for (const auto& a : r.state.agents) ok = ok && a.position.finite();
        if (!ok) {
          r.ep.termination = Termination::Diverged;
          r.done = true;
          break;
        }
      }
    }
  }

  std::vector<Episode> out;
  out.reserve(runs.size());
  for (auto& r : runs) out.push_back(std::move(r.ep));
  return out;
}

namespace {

std::vector<std::unique_ptr<AgentPlanner>> make_planners(const JointPolicySet& set,
                                                         const EnvSpec& spec,
                                                         const RolloutConfig& config) {
  require_binding(set, spec);
  if (config.T != set.T)
    throw ValidationError("rollout: T = " + std::to_string(config.T) +
                          " differs from the policies' horizon " + std::to_string(set.T));
  const NoiseSchedule schedule = karras_schedule(config.schedule);
  std::vector<std::unique_ptr<AgentPlanner>> out;
  for (const auto& p : set.policies) out.push_back(std::make_unique<PolicyPlanner>(p, schedule));
  return out;
}

std::vector<AgentPlanner*> raw(const std::vector<std::unique_ptr<AgentPlanner>>& v) {
  std::vector<AgentPlanner*> out;
  for (const auto& p : v) out.push_back(p.get());
  return out;
}

}  // namespace

Episode rollout(const JointPolicySet& set, const EnvSpec& spec, const RolloutConfig& config) {
  auto planners = make_planners(set, spec, config);
  const std::uint64_t seed[1] = {config.seed};
  return rollout_lockstep(raw(planners), spec, config, seed).front();
}

std::vector<Episode> batch_rollout(const JointPolicySet& set, const EnvSpec& spec,
                                   const RolloutConfig& config, std::size_t n_episodes,
                                   std::uint64_t base_seed, int workers) {
  if (n_episodes == 0) throw ValidationError("batch_rollout: n_episodes must be >= 1");
  std::vector<std::uint64_t> seeds(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) seeds[e] = base_seed + e;
  const std::size_t groups =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), 1, n_episodes);
  if (groups == 1) {
    auto planners = make_planners(set, spec, config);
    return rollout_lockstep(raw(planners), spec, config, seeds);
  }
  std::vector<std::vector<Episode>> parts(groups);
  const std::size_t per = (n_episodes + groups - 1) / groups;
  std::vector<std::exception_ptr> errors(groups);
#pragma omp parallel for schedule(static, 1) num_threads(static_cast<int>(groups))
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t lo = std::min(n_episodes, g * per), hi = std::min(n_episodes, lo + per);
    if (lo == hi) continue;
    try {
      auto planners = make_planners(set, spec, config);
      parts[g] = rollout_lockstep(raw(planners), spec, config,
                                  std::span<const std::uint64_t>(seeds.data() + lo, hi - lo));
    } catch (...) {
      errors[g] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<Episode> out;
  for (auto& p : parts)
    for (auto& e : p) out.push_back(std::move(e));
  return out;
}

double replay_error(const Episode& episode, const EnvSpec& spec) {
  double worst = 0.0;
  for (std::size_t t = 0; t < episode.executed_steps(); ++t)
    for (std::size_t i = 0; i < episode.actions.size(); ++i) {
      const AgentState next =
          step_single_integrator(episode.states[t].agents[i], episode.actions[i][t], spec.dt);
      worst = std::max(worst, distance(next.position, episode.states[t + 1].agents[i].position));
    }
  return worst;
}

ProbeResult decentralization_probe(const JointPolicySet& set, const EnvSpec& spec,
                                   const RolloutConfig& config, std::size_t n_events,
                                   std::uint64_t seed) {
  struct Event {
    std::size_t agent;
    std::vector<double> obs;
    std::mt19937_64 rng;
    ActionTrajectory plan;
  };
  auto planners = make_planners(set, spec, config);
  auto ptrs = raw(planners);
  std::vector<Event> events;
  const ReplanHook hook = [&](std::size_t, std::size_t agent, std::span<const double> obs,
                              const std::mt19937_64& rng, const ActionTrajectory& p) {
    events.push_back({agent, {obs.begin(), obs.end()}, rng, p});
  };
  // A few lockstep episodes yield far more events than requested.
  for (std::uint64_t batch = 0; events.size() < n_events && batch < 64; ++batch) {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t e = 0; e < 4; ++e) seeds.push_back(derive_seed(seed, batch * 4 + e));
    rollout_lockstep(ptrs, spec, config, seeds, hook);
  }
  if (events.size() < n_events)
    throw ValidationError("decentralization_probe: only " + std::to_string(events.size()) +
                          " replan events available");
  std::mt19937_64 pick(seed);
  std::shuffle(events.begin(), events.end(), pick);
  events.resize(n_events);

  ProbeResult res;
  std::normal_distribution<double> z(0.0, 5.0);
  for (const Event& ev : events) {
    // The joint plan buffer at this event with every other agent's plan
    // replaced by noise.
    std::vector<ActionTrajectory> joint(set.n_agents(), ActionTrajectory(set.T));
    for (std::size_t j = 0; j < joint.size(); ++j)
      if (j != ev.agent)
        for (double& v : joint[j].values) v = z(pick);
    std::mt19937_64 rng = ev.rng;
    std::mt19937_64* r[1] = {&rng};
    const Tensor o({1, ev.obs.size()}, ev.obs);
    joint[ev.agent] = ptrs[ev.agent]->plan(o, r).front();
    ++res.events_checked;
    if (!(joint[ev.agent] == ev.plan)) ++res.mismatches;
  }
  return res;
}

// ------------------------------------------------------------ episode log

std::string episodes_to_text(std::span<const Episode> episodes, const RolloutConfig& config) {
  std::ostringstream os;
  for (const Episode& e : episodes) {
    const std::size_t N = e.actions.size();
    std::vector<double> goals;
    if (!e.states.empty())
      for (const auto& a : e.states.front().agents) {
        goals.push_back(a.goal.x);
        goals.push_back(a.goal.y);
      }
    nlohmann::json h = {{"type", "header"},
                        {"format", "mimicd-episodes"},
                        {"format_version", 1},
                        {"env_digest", e.env_digest},
                        {"seed", e.seed},
                        {"n_agents", N},
                        {"goals", hex_array(goals)},
                        {"config", to_json(config)}};
    os << h.dump() << '\n';
    for (std::size_t t = 0; t < e.states.size(); ++t) {
      std::vector<double> pos, act;
      for (const auto& a : e.states[t].agents) {
        pos.push_back(a.position.x);
        pos.push_back(a.position.y);
      }
      nlohmann::json s = {{"type", "step"}, {"t", e.states[t].time_index}, {"positions", hex_array(pos)}};
      if (t < e.executed_steps()) {
        for (std::size_t i = 0; i < N; ++i) {
          act.push_back(e.actions[i][t].x);
          act.push_back(e.actions[i][t].y);
        }
        s["actions"] = hex_array(act);
      }
      os << s.dump() << '\n';
    }
    for (const auto& ev : e.replans) {
      nlohmann::json plans = nlohmann::json::array();
      for (const auto& p : ev.plans) plans.push_back(hex_array(p.values));
      os << nlohmann::json{{"type", "replan"}, {"t", ev.time_index}, {"plans", plans}}.dump() << '\n';
    }
    os << nlohmann::json{{"type", "end"},
                         {"termination", to_string(e.termination)},
                         {"executed_steps", e.executed_steps()},
                         {"replans", e.replans.size()}}
              .dump()
       << '\n';
  }
  return os.str();
}

std::vector<Episode> episodes_from_text(const std::string& text) {
  std::vector<Episode> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  Episode* cur = nullptr;
  std::vector<Vec2> goals;
  std::size_t N = 0;
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError("episode log line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (cur) throw fail("header before the previous episode ended");
        if (j.at("format") != "mimicd-episodes") throw fail("wrong format tag");
        if (j.at("format_version").get<int>() != 1)
          throw VersionError("episode log line " + std::to_string(lineno) +
                             ": unsupported format version");
        out.emplace_back();
        cur = &out.back();
        cur->env_digest = j.at("env_digest").get<std::string>();
        cur->seed = j.at("seed").get<std::uint64_t>();
        N = j.at("n_agents").get<std::size_t>();
        cur->actions.assign(N, {});
        const auto g = parse_hex_array(j.at("goals"));
        if (g.size() != 2 * N) throw fail("goal list length does not match n_agents");
        goals.clear();
        for (std::size_t i = 0; i < N; ++i) goals.push_back({g[2 * i], g[2 * i + 1]});
      } else if (!cur) {
        throw fail("record outside an episode");
      } else if (type == "step") {
        const auto pos = parse_hex_array(j.at("positions"));
        if (pos.size() != 2 * N) throw fail("positions length does not match n_agents");
        JointState s;
        s.time_index = j.at("t").get<std::int64_t>();
        for (std::size_t i = 0; i < N; ++i) s.agents.push_back({{pos[2 * i], pos[2 * i + 1]}, goals[i]});
        cur->states.push_back(std::move(s));
        if (j.contains("actions")) {
          const auto act = parse_hex_array(j.at("actions"));
          if (act.size() != 2 * N) throw fail("actions length does not match n_agents");
          for (std::size_t i = 0; i < N; ++i) cur->actions[i].push_back({act[2 * i], act[2 * i + 1]});
        }
      } else if (type == "replan") {
        ReplanEvent ev;
        ev.time_index = j.at("t").get<std::int64_t>();
        for (const auto& p : j.at("plans")) {
          auto v = parse_hex_array(p);
          if (v.size() % 2 != 0) throw fail("plan length is odd");
          ev.plans.emplace_back(v.size() / 2, std::move(v));
        }
        if (ev.plans.size() != N) throw fail("replan event does not hold one plan per agent");
        cur->replans.push_back(std::move(ev));
      } else if (type == "end") {
        cur->termination = termination_from_string(j.at("termination").get<std::string>());
        if (j.at("executed_steps").get<std::size_t>() != cur->executed_steps())
          throw fail("executed_steps disagrees with the step records (truncated log?)");
        for (const auto& a : cur->actions)
          if (a.size() != cur->executed_steps()) throw fail("missing actions");
        if (j.at("replans").get<std::size_t>() != cur->replans.size())
          throw fail("replan count disagrees with the replan records");
        cur = nullptr;
      } else {
        throw fail("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("bad record: ") + e.what());
    }
  }
  if (cur) throw ParseError("episode log ends inside an episode (truncated)");
  return out;
}

void save_episodes(std::span<const Episode> episodes, const RolloutConfig& config,
                   const std::string& path) {
  write_text_file(path, episodes_to_text(episodes, config));
}

std::vector<Episode> load_episodes(const std::string& path) {
  return episodes_from_text(read_text_file(path));
}

}  // namespace mimicd
