#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimicd/autodiff.hpp"
#include "mimicd/env.hpp"

namespace mimicd {

enum class PolicyKind { Diffusion, Regressor };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

struct DenoiserConfig {
  std::size_t T = 16;
  std::size_t m = kActionDim;
  std::size_t obs_dim = 0;
  std::size_t hidden_width = 256;
  std::size_t n_blocks = 4;
  double sigma_data = 0.5;
  std::size_t noise_embed_dim = 64;  // even: half sine, half cosine features

  std::size_t action_len() const { return T * m; }
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);

// EDM preconditioning coefficients.
double c_skip(double sigma, double sigma_data);
double c_out(double sigma, double sigma_data);
double c_in(double sigma, double sigma_data);
double c_noise(double sigma);

// A per-agent network. Diffusion policies denoise action trajectories
// conditioned on (sigma, observation); regressors map the observation
// straight to a trajectory through the same trunk without noise input.
struct Policy {
  PolicyKind kind = PolicyKind::Diffusion;
  DenoiserConfig config;
  ObsMode obs_mode = ObsMode::Full;
  // Per-dimension observation standardization fixed from the training data.
  std::vector<double> obs_mean;
  std::vector<double> obs_scale;
  ad::ParamStore params;
};

Policy init_policy(const DenoiserConfig& config, std::uint64_t seed,
                   PolicyKind kind = PolicyKind::Diffusion, ObsMode obs_mode = ObsMode::Full);

// Closed-form parameter count of the architecture.
std::size_t parameter_count(const DenoiserConfig& config, PolicyKind kind);

// Sets obs_mean/obs_scale from a row-major [rows x obs_dim] matrix.
// Dimensions with (near) zero spread keep scale 1.
void fit_observation_normalizer(Policy& policy, std::span<const double> observations);

std::vector<double> normalize_observations(const Policy& policy, std::span<const double> obs,
                                           std::size_t rows);

// Graph form of the preconditioned denoiser over a batch. `xi_noisy` and
// `obs` are row-major [B x T*m] and [B x obs_dim]; one sigma per row.
ad::Var denoise_graph(ad::Graph& g, Policy& policy, const ad::Tensor& xi_noisy,
                      std::span<const double> sigmas, const ad::Tensor& obs);

// Graph form of the regressor over a batch of raw observations.
ad::Var regress_graph(ad::Graph& g, Policy& policy, const ad::Tensor& obs);

// Inference helpers; read-only on the policy and safe to call concurrently.
ad::Tensor denoise_batch(const Policy& policy, const ad::Tensor& xi_noisy,
                         std::span<const double> sigmas, const ad::Tensor& obs);
ActionTrajectory denoise(const Policy& policy, const ActionTrajectory& xi_noisy, double sigma,
                         std::span<const double> obs);
ad::Tensor regress_batch(const Policy& policy, const ad::Tensor& obs);

}  // namespace mimicd
