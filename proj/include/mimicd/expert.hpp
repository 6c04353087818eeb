#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mimicd/env.hpp"

namespace mimicd {

// Swap labels:
//   0 both pass right (agent 0 below, agent 1 above)
//   1 both pass left  (agent 0 above, agent 1 below)
//   2 both above, agent 0 yields     3 both above, agent 1 yields
//   4 both below, agent 0 yields     5 both below, agent 1 yields
// Road Crossing labels:
//   0 agent 0 (lower lane) holds short; the crossing agent goes once agent 1 has passed
//   1 agent 1 (upper lane) holds short; the crossing agent goes once agent 0 has passed
struct ModeId {
  EnvKind env_kind = EnvKind::Swap;
  int label = 0;
  bool operator==(const ModeId&) const = default;
};

int mode_count(EnvKind kind);
bool mode_valid(ModeId mode);
std::string mode_name(ModeId mode);
bool is_trivial_swap_mode(int label);

struct AgentRecord {
  std::vector<std::vector<double>> observations;  // Full-mode flat, one per step
  std::vector<Vec2> actions;
};

struct Demonstration {
  ModeId mode;
  std::vector<AgentRecord> per_agent;
  std::size_t horizon = 0;
  std::vector<JointState> states;  // horizon + 1 joint states
  std::uint64_t seed = 0;
};

struct ExpertParams {
  double v_max = 1.5;
  double noise_sigma = 0.05;
  double gain = 2.0;
  int retry_budget = 20;
  // clearances the generator certifies
  double swap_agent_clearance = 3.0;
  double swap_obstacle_clearance = 4.0;
  double road_agent_clearance = 0.75;
};

// Scripted closed-loop expert. Retries with derived seeds and throws
// GenerationError naming the violated constraint when the budget runs out.
Demonstration generate_demo(const EnvSpec& spec, ModeId mode, std::uint64_t seed,
                            const ExpertParams& params = {});

ModeId sample_mode(const EnvSpec& spec, std::span<const double> weights,
                   std::mt19937_64& rng);

struct TrainingWindow {
  std::size_t agent_index = 0;
  std::vector<double> observation;
  ActionTrajectory actions;
  bool operator==(const TrainingWindow&) const = default;
};

struct Dataset {
  static constexpr int kFormatVersion = 1;

  EnvSpec env;
  std::size_t horizon = 0;  // T
  std::size_t stride = 1;
  std::uint64_t seed = 0;
  std::map<int, int> demos_per_mode;
  std::vector<std::vector<TrainingWindow>> windows;  // grouped by agent

  std::size_t n_agents() const { return windows.size(); }
  std::size_t total_windows() const;
};

// Number of windows one demo contributes per agent.
std::size_t windows_per_agent(std::size_t demo_horizon, std::size_t T, std::size_t stride);

Dataset window_dataset(const EnvSpec& spec, std::span<const Demonstration> demos,
                       std::size_t T, std::size_t stride);

void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string dataset_to_text(const Dataset& dataset);
Dataset dataset_from_text(const std::string& text);

struct CorpusRequest {
  std::vector<int> demos_per_mode;  // indexed by mode label
  std::uint64_t seed = 0;
};

// Demonstrations in mode-major order; demo k of mode m uses a seed derived
// from (seed, m, k), so the corpus is independent of worker count.
std::vector<Demonstration> generate_corpus(const EnvSpec& spec, const CorpusRequest& request,
                                           const ExpertParams& params = {}, int workers = 0);

}  // namespace mimicd
