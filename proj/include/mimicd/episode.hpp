#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mimicd/env.hpp"

namespace mimicd {

enum class Termination { AllGoalsReached, StepBudget, Diverged };

std::string to_string(Termination t);
Termination termination_from_string(const std::string& s);

struct ReplanEvent {
  std::int64_t time_index = 0;
  std::vector<ActionTrajectory> plans;  // one per agent
  bool operator==(const ReplanEvent&) const = default;
};

// Closed-loop rollout log: states[t] is the joint state before actions[.][t].
struct Episode {
  std::string env_digest;
  std::vector<JointState> states;
  std::vector<std::vector<Vec2>> actions;  // [agent][step]
  std::vector<ReplanEvent> replans;
  Termination termination = Termination::StepBudget;
  std::uint64_t seed = 0;

  std::size_t executed_steps() const { return states.empty() ? 0 : states.size() - 1; }
  // Position sequence of one agent.
  std::vector<Vec2> path(std::size_t agent) const;
  bool operator==(const Episode&) const = default;
};

}  // namespace mimicd
