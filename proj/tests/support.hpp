#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mimicd/autodiff.hpp"
#include "mimicd/denoiser.hpp"
#include "mimicd/diffusion.hpp"
#include "mimicd/metrics.hpp"

namespace mimicd::testing {

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  ad::Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

// Compares reverse-mode gradients of `loss` with respect to every entry of
// every parameter in `store` against central differences with step `h`.
// The relative error of an entry is |a - f| / max(|a|, |f|, floor).
inline GradCheck check_gradients(ad::ParamStore& store,
                                 const std::function<double(ad::Graph&, bool)>& loss,
                                 double h = 1e-5, double floor = 1e-8) {
  store.zero_grad();
  {
    ad::Graph g(true);
    loss(g, true);
  }
  GradCheck out;
  for (auto& p : store.params()) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      ad::Graph gp(false);
      const double fp = loss(gp, false);
      p.value[i] = keep - h;
      ad::Graph gm(false);
      const double fm = loss(gm, false);
      p.value[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = p.grad[i];
      const double denom = std::max({std::abs(a), std::abs(fd), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - fd) / denom);
      ++out.entries;
    }
  }
  return out;
}

// A small random computation over every graph operation, ending in a
// mean-square reduction. The structure and the values come from `seed`.
class RandomGraph {
 public:
  explicit RandomGraph(std::uint64_t seed) : rng_(seed) {
    std::uniform_int_distribution<std::size_t> dim(1, 4);
    rows_ = dim(rng_);
    cols_ = dim(rng_) + 1;
    input_ = random_tensor({rows_, cols_}, rng_);
    std::uniform_int_distribution<int> op(0, 7);
    std::uniform_int_distribution<int> depth(2, 6);
    const int n = depth(rng_);
    std::size_t c = cols_;
    for (int k = 0; k < n; ++k) {
      Step s;
      s.op = op(rng_);
      const std::string tag = std::to_string(k);
      switch (s.op) {
        case 0: {  // affine map to a new width
          const std::size_t c2 = dim(rng_) + 1;
          store_.add("w" + tag, random_tensor({c, c2}, rng_, 1.0 / std::sqrt(double(c))));
          store_.add("b" + tag, random_tensor({1, c2}, rng_, 0.5));
          s.w = "w" + tag;
          s.b = "b" + tag;
          c = c2;
          break;
        }
        case 4: {  // concatenate a slice of itself
          std::uniform_int_distribution<std::size_t> at(0, c - 1);
          s.begin = at(rng_);
          s.end = s.begin + 1;
          c += 1;
          break;
        }
        case 5:
          s.factors = random_tensor({rows_}, rng_).values();
          break;
        case 6:
          s.other = random_tensor({rows_, c}, rng_);
          break;
        case 7:
          s.scale = std::normal_distribution<double>(0.0, 1.5)(rng_);
          break;
        default:
          break;
      }
      steps_.push_back(std::move(s));
    }
    // Every graph owns at least one parameter so the check is never empty.
    store_.add("tail", random_tensor({c, 1}, rng_));
  }

  ad::ParamStore& store() { return store_; }

  double evaluate(ad::Graph& g, bool backward) {
    ad::Var h = g.constant(input_);
    for (const Step& s : steps_) {
      switch (s.op) {
        case 0:
          h = g.add_row(g.matmul(h, g.param(store_.at(s.w))), g.param(store_.at(s.b)));
          break;
        case 1:
          h = g.gelu(h);
          break;
        case 2:
          h = g.layer_norm(h);
          break;
        case 3:
          h = g.add(h, g.gelu(h));
          break;
        case 4: {
          const ad::Var parts[] = {h, g.slice_cols(h, s.begin, s.end)};
          h = g.concat_cols(parts);
          break;
        }
        case 5:
          h = g.scale_rows(h, s.factors);
          break;
        case 6:
          h = g.sub(h, g.constant(s.other));
          break;
        default:
          h = g.scale(h, s.scale);
          break;
      }
    }
    const ad::Var loss = g.mean_square(g.matmul(h, g.param(store_.at("tail"))));
    if (backward) g.backward(loss);
    return g.value(loss)[0];
  }

 private:
  struct Step {
    int op = 0;
    std::string w, b;
    std::size_t begin = 0, end = 0;
    std::vector<double> factors;
    ad::Tensor other;
    double scale = 1.0;
  };
  std::mt19937_64 rng_;
  std::size_t rows_ = 1, cols_ = 1;
  ad::Tensor input_;
  ad::ParamStore store_;
  std::vector<Step> steps_;
};

// A small conditional denoiser with every weight randomized (the output
// layer is zero at initialization, which would hide the trunk gradients),
// plus a frozen batch and frozen noise.
struct DenoiserFixture {
  Policy policy;
  LossBatch batch;
  LossNoise noise;

  explicit DenoiserFixture(std::uint64_t seed, std::size_t rows = 3) {
    DenoiserConfig c;
    c.T = 3;
    c.m = 2;
    c.obs_dim = 5;
    c.hidden_width = 8;
    c.n_blocks = 2;
    c.noise_embed_dim = 4;
    c.sigma_data = 0.5;
    policy = init_policy(c, seed);
    std::mt19937_64 rng(seed + 17);
    for (auto& p : policy.params.params()) p.value = random_tensor(p.value.shape(), rng, 0.4);
    batch.xi = random_tensor({rows, c.action_len()}, rng, 0.5);
    batch.obs = random_tensor({rows, c.obs_dim}, rng, 2.0);
    noise = draw_loss_noise(TrainNoiseDist{}, rows, c.action_len(), rng);
  }

  double loss(ad::Graph& g, bool backward, bool weighted = false) {
    const ad::Var l = diffusion_loss(g, policy, batch, noise, weighted);
    if (backward) g.backward(l);
    return g.value(l)[0];
  }
};

// Analytic optimal denoiser for data ~ N(0, sd^2 I).
inline DenoiseFn gaussian_denoiser(double sd) {
  return [sd](const ad::Tensor& x, std::span<const double> sigmas) {
    ad::Tensor out(x.shape());
    const std::size_t cols = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double k = sd * sd / (sd * sd + sigmas[r] * sigmas[r]);
      for (std::size_t j = 0; j < cols; ++j) out.at(r, j) = k * x.at(r, j);
    }
    return out;
  };
}

inline Path random_path(std::mt19937_64& rng, std::size_t len) {
  std::normal_distribution<double> n(0.0, 2.0);
  Path p(len);
  for (auto& v : p) v = {n(rng), n(rng)};
  return p;
}

// Exhaustive recursion over monotone couplings.
inline double frechet_brute(const Path& p, const Path& q, std::size_t i, std::size_t j) {
  const double d = distance(p[i], q[j]);
  if (i == 0 && j == 0) return d;
  double best = std::numeric_limits<double>::infinity();
  if (i > 0) best = std::min(best, frechet_brute(p, q, i - 1, j));
  if (j > 0) best = std::min(best, frechet_brute(p, q, i, j - 1));
  if (i > 0 && j > 0) best = std::min(best, frechet_brute(p, q, i - 1, j - 1));
  return std::max(d, best);
}

// Mean matched Frechet cost minimized over every permutation.
inline double emd_brute(const std::vector<Path>& a, const std::vector<Path>& b) {
  const std::size_t n = a.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += discrete_frechet(a[i], b[perm[i]]);
    best = std::min(best, c / static_cast<double>(n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace mimicd::testing
