#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimicd/diffusion.hpp"
#include "mimicd/env.hpp"
#include "mimicd/episode.hpp"
#include "mimicd/training.hpp"

namespace mimicd {

struct RolloutConfig {
  std::size_t T = 16;  // plan horizon; must match the policies
  std::size_t h = 4;   // steps executed per plan
  int max_steps = 0;   // 0 uses the environment's budget
  double goal_tolerance = 0.5;
  std::uint64_t seed = 0;
  ScheduleParams schedule;

  void validate() const;
};

nlohmann::json to_json(const RolloutConfig& c);

// One agent's planner. It sees only that agent's observations and RNG
// streams, one row per concurrently running episode.
class AgentPlanner {
 public:
  virtual ~AgentPlanner() = default;
  virtual ObsMode obs_mode() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual std::vector<ActionTrajectory> plan(const ad::Tensor& obs,
                                             std::span<std::mt19937_64* const> rngs) = 0;
};

// Diffusion policies sample; regressors run one deterministic forward pass.
class PolicyPlanner : public AgentPlanner {
 public:
  PolicyPlanner(const Policy& policy, NoiseSchedule schedule)
      : policy_(policy), schedule_(std::move(schedule)) {}
  ObsMode obs_mode() const override { return policy_.obs_mode; }
  std::size_t horizon() const override { return policy_.config.T; }
  std::vector<ActionTrajectory> plan(const ad::Tensor& obs,
                                     std::span<std::mt19937_64* const> rngs) override;

 private:
  const Policy& policy_;
  NoiseSchedule schedule_;
};

ActionTrajectory plan(const Policy& policy, std::span<const double> obs,
                      const NoiseSchedule& schedule, std::mt19937_64& rng);

// Called after every agent has planned at a replan boundary, before any
// step executes: (episode index in the batch, agent, observation row, RNG
// state before planning, the plan).
using ReplanHook = std::function<void(std::size_t, std::size_t, std::span<const double>,
                                      const std::mt19937_64&, const ActionTrajectory&)>;

// Runs one episode per seed in lockstep: at every replan boundary each agent
// plans for all still-running episodes in one batch. Results do not depend
// on which other episodes share the batch.
std::vector<Episode> rollout_lockstep(std::span<AgentPlanner* const> planners,
                                      const EnvSpec& spec, const RolloutConfig& config,
                                      std::span<const std::uint64_t> seeds,
                                      const ReplanHook& hook = {});

Episode rollout(const JointPolicySet& set, const EnvSpec& spec, const RolloutConfig& config);

// Episode e uses seed base_seed + e. With workers > 1 the episodes are split
// into contiguous groups run concurrently; the result is identical.
std::vector<Episode> batch_rollout(const JointPolicySet& set, const EnvSpec& spec,
                                   const RolloutConfig& config, std::size_t n_episodes,
                                   std::uint64_t base_seed, int workers = 1);

// Starting state and per-agent RNG streams of an episode.
JointState episode_start(const EnvSpec& spec, std::uint64_t seed);
std::uint64_t agent_stream_seed(std::uint64_t episode_seed, std::size_t agent);

// Maximum deviation between logged states and a replay of logged actions.
double replay_error(const Episode& episode, const EnvSpec& spec);

struct ProbeResult {
  std::size_t events_checked = 0;
  std::size_t mismatches = 0;
};

// Re-plans recorded replan events in isolation, with the other agents'
// plans at that event replaced by random trajectories, and checks every
// re-plan is bitwise equal to the recorded one.
ProbeResult decentralization_probe(const JointPolicySet& set, const EnvSpec& spec,
                                   const RolloutConfig& config, std::size_t n_events,
                                   std::uint64_t seed);

std::string episodes_to_text(std::span<const Episode> episodes, const RolloutConfig& config);
std::vector<Episode> episodes_from_text(const std::string& text);
void save_episodes(std::span<const Episode> episodes, const RolloutConfig& config,
                   const std::string& path);
std::vector<Episode> load_episodes(const std::string& path);

}  // namespace mimicd
