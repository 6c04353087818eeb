#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mimicd/env.hpp"
#include "mimicd/execution.hpp"
#include "mimicd/expert.hpp"
#include "mimicd/training.hpp"

namespace mimicd {

struct DatasetSettings {
  std::vector<int> demos_per_mode;  // indexed by mode label
  std::size_t T = 16;
  std::size_t stride = 4;
  std::uint64_t seed = 7;
};

struct EvalSettings {
  std::vector<double> agent_thresholds;
  std::optional<double> obstacle_threshold;
  std::size_t emd_set_size = 100;
  std::uint64_t emd_seed = 424242;  // held-out expert set
};

// One declarative experiment: every randomness source is a named seed here.
struct ExperimentConfig {
  EnvSpec env;
  ExpertParams expert;
  DatasetSettings dataset;
  TrainConfig train;
  RolloutConfig rollout;
  std::size_t n_episodes = 100;
  EvalSettings eval;
  std::string output_dir = "out";

  void validate() const;
};

ExperimentConfig default_experiment(EnvKind kind);

// INI text with sections [env] [expert] [dataset] [train] [rollout] [eval]
// [output]. Overrides are "section.key=value" and win over the file. Unknown
// sections or keys raise ValidationError naming the key.
ExperimentConfig parse_experiment(const std::string& ini_text,
                                  const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment(const std::string& path,
                                 const std::vector<std::string>& overrides = {});

// Fully resolved configuration in the same INI form.
std::string experiment_to_ini(const ExperimentConfig& config);

}  // namespace mimicd
