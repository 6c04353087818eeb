#include "mimicd/denoiser.hpp"

#include <cmath>
#include <random>

#include "mimicd/errors.hpp"

namespace mimicd {

using ad::Graph;
using ad::Tensor;
using ad::Var;

std::string to_string(PolicyKind kind) {
  return kind == PolicyKind::Diffusion ? "diffusion" : "regressor";
}

PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "diffusion") return PolicyKind::Diffusion;
  if (s == "regressor") return PolicyKind::Regressor;
  throw ParseError("unknown policy kind '" + s + "'");
}

void DenoiserConfig::validate() const {
  if (T == 0 || m == 0 || obs_dim == 0 || hidden_width == 0 || n_blocks == 0 ||
      noise_embed_dim == 0)
    throw ValidationError("denoiser config: all sizes must be positive");
  if (noise_embed_dim % 2 != 0)
    throw ValidationError("denoiser config: noise_embed_dim must be even");
  if (!(sigma_data > 0.0) || !std::isfinite(sigma_data))
    throw ValidationError("denoiser config: sigma_data must be finite and > 0");
}

nlohmann::json to_json(const DenoiserConfig& c) {
  return {{"T", c.T},
          {"m", c.m},
          {"obs_dim", c.obs_dim},
          {"hidden_width", c.hidden_width},
          {"n_blocks", c.n_blocks},
          {"sigma_data", c.sigma_data},
          {"noise_embed_dim", c.noise_embed_dim}};
}

DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig c;
  c.T = j.at("T").get<std::size_t>();
  c.m = j.at("m").get<std::size_t>();
  c.obs_dim = j.at("obs_dim").get<std::size_t>();
  c.hidden_width = j.at("hidden_width").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.sigma_data = j.at("sigma_data").get<double>();
  c.noise_embed_dim = j.at("noise_embed_dim").get<std::size_t>();
  c.validate();
  return c;
}

double c_skip(double sigma, double sd) { return sd * sd / (sigma * sigma + sd * sd); }
double c_out(double sigma, double sd) { return sigma * sd / std::sqrt(sigma * sigma + sd * sd); }
double c_in(double sigma, double sd) { return 1.0 / std::sqrt(sigma * sigma + sd * sd); }
double c_noise(double sigma) { return std::log(sigma) / 4.0; }

namespace {

// Layer names shared by both kinds; the regressor skips "in" and "noise".
void add_linear(ad::ParamStore& store, const std::string& name, std::size_t in,
                std::size_t out, std::mt19937_64& rng, bool zero) {
  Tensor w = Tensor::matrix(in, out);
  if (!zero) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& x : w.values()) x = u(rng);
  }
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Tensor::matrix(1, out));
}

Var linear(Graph& g, Var x, const ad::Parameter& w, const ad::Parameter& b, bool recording,
           ad::ParamStore* mut) {
  if (recording)
    return g.add_row(g.matmul(x, g.param(mut->at(w.name))), g.param(mut->at(b.name)));
  return g.add_row(g.matmul(x, g.param(w)), g.param(b));
}

// Parameter lookup that works for both the recording (mutable) and the
// inference (const) path.
struct Layers {
  const ad::ParamStore& store;
  ad::ParamStore* mut;
  bool recording;

  Var apply(Graph& g, const std::string& name, Var x) const {
    return linear(g, x, store.at(name + ".w"), store.at(name + ".b"), recording, mut);
  }
};

Tensor noise_features(std::span<const double> sigmas, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor f = Tensor::matrix(sigmas.size(), dim);
  for (std::size_t r = 0; r < sigmas.size(); ++r) {
    const double c = c_noise(sigmas[r]);
    for (std::size_t k = 0; k < half; ++k) {
      // geometric frequencies from 1 to 1000
      const double freq =
          std::pow(1000.0, half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0);
      f.at(r, k) = std::sin(freq * c);
      f.at(r, half + k) = std::cos(freq * c);
    }
  }
  return f;
}

Tensor normalized_obs(const Policy& p, const Tensor& obs) {
  if (obs.cols() != p.config.obs_dim)
    throw ValidationError("observation width " + std::to_string(obs.cols()) +
                          " does not match policy obs_dim " + std::to_string(p.config.obs_dim));
  return Tensor({obs.rows(), obs.cols()}, normalize_observations(p, obs.values(), obs.rows()));
}

Var trunk(Graph& g, const Policy& p, const Layers& L, Var h, Var cond) {
  for (std::size_t k = 0; k < p.config.n_blocks; ++k) {
    const std::string b = "block" + std::to_string(k);
    Var z = g.add(h, cond);
    Var u = L.apply(g, b + ".fc2", g.gelu(L.apply(g, b + ".fc1", g.layer_norm(z))));
    h = g.add(h, u);
  }
  return L.apply(g, "out", g.layer_norm(h));
}

Var denoise_impl(Graph& g, const Policy& p, ad::ParamStore* mut, bool recording,
                 const Tensor& xi, std::span<const double> sigmas, const Tensor& obs) {
  if (p.kind != PolicyKind::Diffusion) throw ValidationError("denoise on a regressor policy");
  const DenoiserConfig& c = p.config;
  const std::size_t B = xi.rows();
  if (xi.cols() != c.action_len() || sigmas.size() != B || obs.rows() != B)
    throw ValidationError("denoise: batch shapes disagree (xi " + ad::shape_str(xi.shape()) +
                          ", " + std::to_string(sigmas.size()) + " sigmas, obs " +
                          ad::shape_str(obs.shape()) + ")");
  std::vector<double> skip(B), out(B), in(B);
  for (std::size_t r = 0; r < B; ++r) {
    const double s = sigmas[r];
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("denoise: sigma must be finite and > 0");
    skip[r] = c_skip(s, c.sigma_data);
    out[r] = c_out(s, c.sigma_data);
    in[r] = c_in(s, c.sigma_data);
  }
  const Layers L{p.params, mut, recording};
  Var x = g.constant(xi);
  Var h = L.apply(g, "in", g.scale_rows(x, in));
  Var cond = g.gelu(g.add(L.apply(g, "noise", g.constant(noise_features(sigmas, c.noise_embed_dim))),
                          L.apply(g, "obs", g.constant(normalized_obs(p, obs)))));
  Var f = trunk(g, p, L, h, cond);
  return g.add(g.scale_rows(x, skip), g.scale_rows(f, out));
}

Var regress_impl(Graph& g, const Policy& p, ad::ParamStore* mut, bool recording,
                 const Tensor& obs) {
  if (p.kind != PolicyKind::Regressor) throw ValidationError("regress on a diffusion policy");
  const Layers L{p.params, mut, recording};
  Var h = L.apply(g, "obs", g.constant(normalized_obs(p, obs)));
  return trunk(g, p, L, h, g.gelu(h));
}

}  // namespace

Policy init_policy(const DenoiserConfig& config, std::uint64_t seed, PolicyKind kind,
                   ObsMode obs_mode) {
  config.validate();
  Policy p;
  p.kind = kind;
  p.config = config;
  p.obs_mode = obs_mode;
  p.obs_mean.assign(config.obs_dim, 0.0);
  p.obs_scale.assign(config.obs_dim, 1.0);
  std::mt19937_64 rng(seed);
  const std::size_t H = config.hidden_width;
  if (kind == PolicyKind::Diffusion) {
    add_linear(p.params, "in", config.action_len(), H, rng, false);
    add_linear(p.params, "noise", config.noise_embed_dim, H, rng, false);
  }
  add_linear(p.params, "obs", config.obs_dim, H, rng, false);
  for (std::size_t k = 0; k < config.n_blocks; ++k) {
    const std::string b = "block" + std::to_string(k);
    add_linear(p.params, b + ".fc1", H, H, rng, false);
    add_linear(p.params, b + ".fc2", H, H, rng, false);
  }
  add_linear(p.params, "out", H, config.action_len(), rng, true);
  return p;
}

std::size_t parameter_count(const DenoiserConfig& c, PolicyKind kind) {
  const std::size_t H = c.hidden_width, A = c.action_len();
  std::size_t n = (c.obs_dim + 1) * H + c.n_blocks * 2 * (H * H + H) + (H + 1) * A;
  if (kind == PolicyKind::Diffusion) n += (A + 1) * H + (c.noise_embed_dim + 1) * H;
  return n;
}

void fit_observation_normalizer(Policy& policy, std::span<const double> obs) {
  const std::size_t d = policy.config.obs_dim;
  if (obs.empty() || obs.size() % d != 0)
    throw ValidationError("fit_observation_normalizer: data is not a multiple of obs_dim");
  const std::size_t rows = obs.size() / d;
  policy.obs_mean.assign(d, 0.0);
  policy.obs_scale.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += obs[r * d + j];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) var += (obs[r * d + j] - mean) * (obs[r * d + j] - mean);
    const double sd = std::sqrt(var / static_cast<double>(rows));
    policy.obs_mean[j] = mean;
    policy.obs_scale[j] = sd > 1e-6 ? 1.0 / sd : 1.0;
  }
}

std::vector<double> normalize_observations(const Policy& p, std::span<const double> obs,
                                           std::size_t rows) {
  const std::size_t d = p.config.obs_dim;
  if (obs.size() != rows * d) throw ValidationError("normalize_observations: size mismatch");
  std::vector<double> out(obs.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j)
      out[r * d + j] = (obs[r * d + j] - p.obs_mean[j]) * p.obs_scale[j];
  return out;
}

Var denoise_graph(Graph& g, Policy& policy, const Tensor& xi, std::span<const double> sigmas,
                  const Tensor& obs) {
  return denoise_impl(g, policy, &policy.params, true, xi, sigmas, obs);
}

Var regress_graph(Graph& g, Policy& policy, const Tensor& obs) {
  return regress_impl(g, policy, &policy.params, true, obs);
}

Tensor denoise_batch(const Policy& policy, const Tensor& xi, std::span<const double> sigmas,
                     const Tensor& obs) {
  Graph g(false);
  return g.value(denoise_impl(g, policy, nullptr, false, xi, sigmas, obs));
}

ActionTrajectory denoise(const Policy& policy, const ActionTrajectory& xi, double sigma,
                         std::span<const double> obs) {
  if (xi.horizon != policy.config.T) throw ValidationError("denoise: trajectory horizon mismatch");
  const Tensor x({1, xi.values.size()}, xi.values);
  const Tensor o({1, obs.size()}, std::vector<double>(obs.begin(), obs.end()));
  const double s[1] = {sigma};
  return ActionTrajectory(xi.horizon, denoise_batch(policy, x, s, o).values());
}

Tensor regress_batch(const Policy& policy, const Tensor& obs) {
  Graph g(false);
  return g.value(regress_impl(g, policy, nullptr, false, obs));
}

}  // namespace mimicd
