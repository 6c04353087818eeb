#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mimicd/autodiff.hpp"
#include "mimicd/denoiser.hpp"
#include "mimicd/diffusion.hpp"
#include "mimicd/expert.hpp"

namespace mimicd {

enum class Method { MimicD, VanillaCTDE, BC };

std::string to_string(Method m);  // "mimic-d", "vanilla", "bc"
Method method_from_string(const std::string& s);
ObsMode obs_mode_for(Method m);
PolicyKind policy_kind_for(Method m);

struct TrainConfig {
  Method method = Method::MimicD;
  std::size_t steps = 20000;
  std::size_t batch_size = 128;  // per agent
  ad::AdamWConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::size_t log_every = 100;
  std::size_t hidden_width = 256;
  std::size_t n_blocks = 4;
  std::size_t noise_embed_dim = 64;
  TrainNoiseDist noise;
  bool loss_weighting = false;
  std::size_t execute_horizon = 4;  // h recorded with the policy set

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;  // optimizer steps completed
  std::vector<double> per_agent;
  double total = 0.0;
  double smoothed = 0.0;
};

// The N per-agent policies with their environment binding and, while
// training, the state needed to resume bit-exactly.
struct JointPolicySet {
  static constexpr int kFormatVersion = 1;

  Method method = Method::MimicD;
  EnvSpec env;
  std::size_t T = 16;
  std::size_t h = 4;
  std::uint64_t seed = 0;
  std::size_t steps_done = 0;
  double final_loss = 0.0;
  double smoothed_loss = 0.0;
  std::string rng_state;  // trainer RNG, textual engine state
  std::vector<Policy> policies;

  std::size_t n_agents() const { return policies.size(); }
  bool sampling_free() const { return method == Method::BC; }
};

// Empirical standard deviation of every action component in the dataset.
double estimate_sigma_data(const Dataset& dataset);

// Fresh policies sized from the dataset: obs layout from the method, sigma_data
// and observation standardization from the data.
JointPolicySet init_policy_set(const Dataset& dataset, const TrainConfig& config);

// Observation as seen by a policy, from a Full-layout flat observation.
std::vector<double> policy_observation(const Policy& policy, std::span<const double> full,
                                       const EnvSpec& spec);

// Step-wise trainer. Each step draws an independent batch per agent, sums
// the per-agent losses and applies one joint AdamW update.
class Trainer {
 public:
  Trainer(const Dataset& dataset, const TrainConfig& config);
  // Continues from a checkpoint written mid-training.
  Trainer(const Dataset& dataset, const TrainConfig& config, JointPolicySet resume);

  // Runs one optimizer step and returns its losses.
  LossRecord step();
  // Runs until `config.steps` total steps; `on_log` sees every logged record
  // and `on_checkpoint` fires every `checkpoint_every` steps.
  void run(const std::function<void(const LossRecord&)>& on_log = {},
           const std::function<void(const JointPolicySet&)>& on_checkpoint = {});

  const JointPolicySet& policies() const { return set_; }
  JointPolicySet& policies() { return set_; }
  const std::vector<LossRecord>& log() const { return log_; }
  // Snapshot including the trainer RNG, suitable for checkpointing.
  JointPolicySet snapshot() const;

 private:
  void check_dataset() const;

  const Dataset& data_;
  TrainConfig config_;
  JointPolicySet set_;
  std::mt19937_64 rng_;
  std::vector<LossRecord> log_;
  bool have_smoothed_ = false;
};

// Trains a single policy on fixed examples: row-major targets [rows x T*m]
// and raw observations [rows x obs_dim]. Minibatches are drawn uniformly
// with replacement from `rng`. Returns the per-step loss.
std::vector<double> fit_policy(Policy& policy, const ad::Tensor& targets, const ad::Tensor& obs,
                               std::size_t steps, std::size_t batch_size,
                               const ad::AdamWConfig& optimizer, const TrainNoiseDist& noise,
                               std::mt19937_64& rng);

struct TrainResult {
  JointPolicySet policies;
  std::vector<LossRecord> log;
};

TrainResult train_mimicd(const Dataset& dataset, const TrainConfig& config);
TrainResult train_vanilla(const Dataset& dataset, const TrainConfig& config);
TrainResult train_bc(const Dataset& dataset, const TrainConfig& config);
// Dispatches on config.method.
TrainResult train(const Dataset& dataset, const TrainConfig& config);

std::string loss_log_csv(const std::vector<LossRecord>& log, std::size_t n_agents);

void save_checkpoint(const JointPolicySet& set, const std::string& path);
JointPolicySet load_checkpoint(const std::string& path);
// Throws BindingError unless the set was trained on `spec`.
void require_binding(const JointPolicySet& set, const EnvSpec& spec);

}  // namespace mimicd
