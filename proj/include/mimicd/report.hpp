#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mimicd/config.hpp"
#include "mimicd/episode.hpp"
#include "mimicd/expert.hpp"
#include "mimicd/metrics.hpp"

namespace mimicd {

// Expert episodes with modes drawn uniformly; demo k uses a seed derived
// from (seed, k).
std::vector<Episode> held_out_expert_set(const EnvSpec& spec, std::size_t n, std::uint64_t seed,
                                         const ExpertParams& params = {});

Episode demo_to_episode(const Demonstration& demo, const EnvSpec& spec);

struct EvaluationResult {
  std::string method;
  CollisionTable collisions;
  EmdReport emd;
  EmdReport emd_noise_floor;  // expert vs an independent expert set
  ModeHistogram modes;
  double success_rate = 0.0;
  int goals_reached = 0;
  int diverged = 0;
};

EvaluationResult evaluate(const std::string& method, std::span<const Episode> episodes,
                          std::span<const Episode> expert, std::span<const Episode> expert_split,
                          const EnvSpec& spec, const EvalSettings& eval);

// "Method,Agent,Obstacle,Total" for a single threshold with an obstacle
// column, otherwise "Method,<threshold>..." holding total counts.
std::string collision_csv(std::span<const std::pair<std::string, CollisionTable>> rows);
std::string emd_csv(std::span<const std::pair<std::string, EmdReport>> rows);
std::string mode_histogram_csv(const ModeHistogram& hist, EnvKind kind);
nlohmann::json summary_json(const EvaluationResult& r, const EnvSpec& spec);

// Top-down overlay of expert paths (grey) and sampled paths colored by
// classified mode.
std::string paths_svg(const EnvSpec& spec, std::span<const Episode> sampled,
                      std::span<const Episode> expert);

}  // namespace mimicd
