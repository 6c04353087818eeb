#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimicd/env.hpp"
#include "mimicd/episode.hpp"
#include "mimicd/expert.hpp"

namespace mimicd {

using Path = std::vector<Vec2>;

// Discrete Frechet (coupling) distance, O(|P||Q|) dynamic program.
double discrete_frechet(std::span<const Vec2> p, std::span<const Vec2> q);

// Pairwise Frechet cost matrix, row-major |A| x |B|. The parallel version
// splits the pairs across threads and is bitwise equal to the serial one.
std::vector<double> frechet_cost_matrix_reference(std::span<const Path> a,
                                                  std::span<const Path> b);
std::vector<double> frechet_cost_matrix(std::span<const Path> a, std::span<const Path> b);

struct Assignment {
  double cost = 0.0;
  std::vector<std::size_t> row_to_col;
};

// Exact minimum-cost perfect matching of a square n x n matrix (Hungarian,
// O(n^3)).
Assignment solve_assignment(std::span<const double> cost, std::size_t n);

// Uniform-weight EMD between equal-sized trajectory sets under the Frechet
// ground metric.
double emd_uniform(std::span<const Path> a, std::span<const Path> b);

struct EmdReport {
  std::string metric = "discrete Frechet";
  std::vector<double> per_agent;
  std::size_t set_size = 0;
};

EmdReport emd_report(std::span<const Episode> sampled, std::span<const Episode> reference);

struct CollisionTable {
  std::vector<double> thresholds;
  std::vector<int> agent_counts;
  std::vector<int> obstacle_counts;
  std::vector<int> total_counts;
  int n_episodes = 0;
  bool has_obstacle_column = false;
};

// One column per agent threshold. Obstacle collisions are evaluated at the
// single obstacle threshold when one is given.
CollisionTable collision_table(std::span<const Episode> episodes,
                               std::span<const double> agent_thresholds,
                               std::optional<double> obstacle_threshold,
                               std::span<const Obstacle> obstacles);

// nullopt means Unclassified.
std::optional<ModeId> classify_mode(std::span<const JointState> states, const EnvSpec& spec);
std::optional<ModeId> classify_mode(const Episode& episode, const EnvSpec& spec);

struct ModeHistogram {
  std::vector<int> counts;  // indexed by label
  int unclassified = 0;
  int total() const;
  int distinct_modes() const;
};

ModeHistogram mode_histogram(std::span<const Episode> episodes, const EnvSpec& spec);

// Fraction of episodes that reached every goal with no collision at the
// given thresholds.
double success_rate(std::span<const Episode> episodes, double agent_threshold,
                    std::optional<double> obstacle_threshold, std::span<const Obstacle> obstacles);

// Default evaluation thresholds.
std::vector<double> default_agent_thresholds(EnvKind kind);
std::optional<double> default_obstacle_threshold(EnvKind kind);

}  // namespace mimicd
