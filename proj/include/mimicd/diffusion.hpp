#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mimicd/autodiff.hpp"
#include "mimicd/denoiser.hpp"
#include "mimicd/env.hpp"

namespace mimicd {

struct TrainNoiseDist {
  double p_mean = -1.2;
  double p_std = 1.2;
  void validate() const;
};

struct NoiseSchedule {
  std::vector<double> sigmas;  // sigma_0 = sigma_max > ... > sigma_K = 0
  std::size_t steps() const { return sigmas.empty() ? 0 : sigmas.size() - 1; }
};

struct ScheduleParams {
  std::size_t K = 40;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
};

double sample_train_sigma(const TrainNoiseDist& dist, std::mt19937_64& rng);

ActionTrajectory perturb(const ActionTrajectory& xi, double sigma, std::mt19937_64& rng);

NoiseSchedule karras_schedule(std::size_t K, double sigma_min, double sigma_max, double rho);
inline NoiseSchedule karras_schedule(const ScheduleParams& p) {
  return karras_schedule(p.K, p.sigma_min, p.sigma_max, p.rho);
}

// EDM loss weight lambda(sigma) = (sigma^2 + sd^2) / (sigma * sd)^2.
double edm_loss_weight(double sigma, double sigma_data);

// A training batch: row-major clean trajectories [B x T*m] and raw
// observations [B x obs_dim].
struct LossBatch {
  ad::Tensor xi;
  ad::Tensor obs;
};

// Noise draws for a batch, kept separate so they can be frozen in tests.
struct LossNoise {
  std::vector<double> sigmas;  // one per row
  ad::Tensor eps;              // standard normal, same shape as xi
};

LossNoise draw_loss_noise(const TrainNoiseDist& dist, std::size_t rows, std::size_t cols,
                          std::mt19937_64& rng);

// Mean over batch rows and trajectory entries of (D(xi + sigma*eps) - xi)^2,
// optionally weighted per row by lambda(sigma).
ad::Var diffusion_loss(ad::Graph& g, Policy& policy, const LossBatch& batch,
                       const LossNoise& noise, bool weighted = false);

// Batched denoiser callback: x is [B x D], one sigma per row; returns D(x).
using DenoiseFn = std::function<ad::Tensor(const ad::Tensor& x, std::span<const double> sigmas)>;

// Deterministic Heun integration of the probability-flow ODE from x0 (already
// scaled by sigma_max) down to sigma = 0, with an Euler final step. Rows are
// independent: a row's result does not depend on the other rows of the batch.
// With check_finite a non-finite state raises NumericError naming the step;
// without it non-finite rows are returned as they are.
ad::Tensor heun_sample(const DenoiseFn& denoiser, ad::Tensor x0, const NoiseSchedule& schedule,
                       bool check_finite = true);

// Initial noise for one trajectory drawn from `rng`: sigma_0 * N(0, I).
std::vector<double> initial_noise(std::size_t len, double sigma_max, std::mt19937_64& rng);

// Samples one trajectory per observation row; row r draws its initial noise
// from rngs[r].
ad::Tensor sample_batch(const Policy& policy, const ad::Tensor& obs,
                        const NoiseSchedule& schedule, std::span<std::mt19937_64* const> rngs,
                        bool check_finite = true);

ActionTrajectory sample(const Policy& policy, std::span<const double> obs,
                        const NoiseSchedule& schedule, std::mt19937_64& rng);

}  // namespace mimicd
