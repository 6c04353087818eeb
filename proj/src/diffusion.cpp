#include "mimicd/diffusion.hpp"

#include <cmath>

#include "mimicd/errors.hpp"

namespace mimicd {

using ad::Tensor;

void TrainNoiseDist::validate() const {
  if (!std::isfinite(p_mean) || !(p_std >= 0.0) || !std::isfinite(p_std))
    throw ValidationError("noise distribution: p_mean finite and p_std >= 0 required");
}

double sample_train_sigma(const TrainNoiseDist& dist, std::mt19937_64& rng) {
  const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  return std::exp(dist.p_mean + dist.p_std * z);
}

ActionTrajectory perturb(const ActionTrajectory& xi, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0)) throw ValidationError("perturb: sigma must be >= 0");
  ActionTrajectory out = xi;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : out.values) v += sigma * n(rng);
  return out;
}

NoiseSchedule karras_schedule(std::size_t K, double sigma_min, double sigma_max, double rho) {
  if (K < 1 || !(sigma_min > 0.0) || !(sigma_max > sigma_min) || !(rho > 0.0) ||
      !std::isfinite(sigma_max))
    throw ValidationError("karras_schedule: need K >= 1, 0 < sigma_min < sigma_max, rho > 0");
  NoiseSchedule s;
  if (K == 1) {
    s.sigmas = {sigma_max, 0.0};
    return s;
  }
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  for (std::size_t i = 0; i < K; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(K - 1);
    s.sigmas.push_back(std::pow(a + t * (b - a), rho));
  }
  s.sigmas.push_back(0.0);
  return s;
}

double edm_loss_weight(double sigma, double sd) {
  return (sigma * sigma + sd * sd) / ((sigma * sd) * (sigma * sd));
}

LossNoise draw_loss_noise(const TrainNoiseDist& dist, std::size_t rows, std::size_t cols,
                          std::mt19937_64& rng) {
  LossNoise n;
  n.sigmas.resize(rows);
  n.eps = Tensor::matrix(rows, cols);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    n.sigmas[r] = sample_train_sigma(dist, rng);
    for (std::size_t c = 0; c < cols; ++c) n.eps.at(r, c) = z(rng);
  }
  return n;
}

ad::Var diffusion_loss(ad::Graph& g, Policy& policy, const LossBatch& batch,
                       const LossNoise& noise, bool weighted) {
  const std::size_t B = batch.xi.rows();
  if (B == 0) throw ValidationError("diffusion_loss: empty batch");
  if (batch.xi.cols() != policy.config.action_len() || batch.obs.rows() != B ||
      noise.sigmas.size() != B || noise.eps.shape() != batch.xi.shape())
    throw ValidationError("diffusion_loss: batch shapes disagree");
  Tensor noisy = batch.xi;
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t c = 0; c < noisy.cols(); ++c)
      noisy.at(r, c) += noise.sigmas[r] * noise.eps.at(r, c);
  ad::Var d = denoise_graph(g, policy, noisy, noise.sigmas, batch.obs);
  ad::Var err = g.sub(d, g.constant(batch.xi));
  if (weighted) {
    std::vector<double> w(B);
    for (std::size_t r = 0; r < B; ++r)
      w[r] = std::sqrt(edm_loss_weight(noise.sigmas[r], policy.config.sigma_data));
    err = g.scale_rows(err, w);
  }
  return g.mean_square(err);
}

Tensor heun_sample(const DenoiseFn& denoiser, Tensor x, const NoiseSchedule& schedule,
                   bool check_finite) {
  const auto& s = schedule.sigmas;
  if (s.size() < 2 || s.back() != 0.0)
    throw ValidationError("heun_sample: schedule must end at sigma = 0");
  const std::size_t B = x.rows(), D = x.cols();
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const double cur = s[i], next = s[i + 1];
    const std::vector<double> sig(B, cur);
    const Tensor den = denoiser(x, sig);
    Tensor d = Tensor::matrix(B, D);
    Tensor x_next = Tensor::matrix(B, D);
    for (std::size_t k = 0; k < x.numel(); ++k) {
      d[k] = (x[k] - den[k]) / cur;
      x_next[k] = x[k] + (next - cur) * d[k];
    }
    if (next > 0.0) {
      const std::vector<double> sig2(B, next);
      const Tensor den2 = denoiser(x_next, sig2);
      for (std::size_t k = 0; k < x.numel(); ++k) {
        const double d2 = (x_next[k] - den2[k]) / next;
        x_next[k] = x[k] + (next - cur) * (0.5 * d[k] + 0.5 * d2);
      }
    }
    if (check_finite && !x_next.all_finite())
      throw NumericError("sampler produced a non-finite state at step " + std::to_string(i) +
                         " (sigma " + std::to_string(cur) + ")");
    x = std::move(x_next);
  }
  return x;
}

std::vector<double> initial_noise(std::size_t len, double sigma_max, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> v(len);
  for (double& x : v) x = sigma_max * z(rng);
  return v;
}

Tensor sample_batch(const Policy& policy, const Tensor& obs, const NoiseSchedule& schedule,
                    std::span<std::mt19937_64* const> rngs, bool check_finite) {
  const std::size_t B = obs.rows(), D = policy.config.action_len();
  if (rngs.size() != B) throw ValidationError("sample_batch: one RNG per observation row required");
  if (schedule.sigmas.empty()) throw ValidationError("sample_batch: empty schedule");
  Tensor x0 = Tensor::matrix(B, D);
  for (std::size_t r = 0; r < B; ++r) {
    const auto v = initial_noise(D, schedule.sigmas.front(), *rngs[r]);
    std::copy(v.begin(), v.end(), x0.data() + r * D);
  }
  const DenoiseFn fn = [&](const Tensor& x, std::span<const double> sig) {
    return denoise_batch(policy, x, sig, obs);
  };
  return heun_sample(fn, std::move(x0), schedule, check_finite);
}

ActionTrajectory sample(const Policy& policy, std::span<const double> obs,
                        const NoiseSchedule& schedule, std::mt19937_64& rng) {
  const Tensor o({1, obs.size()}, std::vector<double>(obs.begin(), obs.end()));
  std::mt19937_64* r[1] = {&rng};
  return ActionTrajectory(policy.config.T, sample_batch(policy, o, schedule, r).values());
}

}  // namespace mimicd
