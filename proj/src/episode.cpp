#include "mimicd/episode.hpp"

#include "mimicd/errors.hpp"

namespace mimicd {

std::string to_string(Termination t) {
  switch (t) {
    case Termination::AllGoalsReached: return "all_goals_reached";
    case Termination::StepBudget: return "step_budget";
    case Termination::Diverged: return "diverged";
  }
  return "unknown";
}

Termination termination_from_string(const std::string& s) {
  if (s == "all_goals_reached") return Termination::AllGoalsReached;
  if (s == "step_budget") return Termination::StepBudget;
  if (s == "diverged") return Termination::Diverged;
  throw ParseError("unknown termination reason '" + s + "'");
}

std::vector<Vec2> Episode::path(std::size_t agent) const {
  std::vector<Vec2> out;
  out.reserve(states.size());
  for (const JointState& s : states) {
    if (agent >= s.agents.size()) throw ValidationError("Episode::path: agent index out of range");
    out.push_back(s.agents[agent].position);
  }
  return out;
}

}  // namespace mimicd
