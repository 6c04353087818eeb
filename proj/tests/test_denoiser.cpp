#include <doctest.h>

#include <cmath>
#include <random>

#include "mimicd/denoiser.hpp"
#include "mimicd/errors.hpp"
#include "support.hpp"

using namespace mimicd;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.T = 3;
  c.m = 2;
  c.obs_dim = 5;
  c.hidden_width = 8;
  c.n_blocks = 2;
  c.noise_embed_dim = 4;
  return c;
}

}  // namespace

TEST_CASE("preconditioner at sigma = sigma_data") {
  const double sd = 0.5;
  CHECK(c_skip(sd, sd) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c_out(sd, sd) == doctest::Approx(sd / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(c_in(sd, sd) == doctest::Approx(1.0 / (sd * std::sqrt(2.0))).epsilon(1e-15));
  CHECK(c_noise(sd) == doctest::Approx(std::log(sd) / 4.0).epsilon(1e-15));
}

TEST_CASE("preconditioner limits as sigma goes to zero") {
  CHECK(c_skip(1e-9, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c_out(1e-9, 0.5) < 1e-8);
  // c_skip^2 * sd^2 + c_out^2 ... identity: c_skip + c_out^2 / sd^2 = 1
  for (double s : {0.01, 0.3, 2.0, 80.0})
    CHECK(c_skip(s, 0.5) + c_out(s, 0.5) * c_out(s, 0.5) / 0.25 == doctest::Approx(1.0));
}

TEST_CASE("a fresh network denoises to c_skip * xi exactly") {
  const Policy p = init_policy(small_config(), 3);
  std::mt19937_64 rng(1);
  for (double sigma : {0.002, 0.5, 80.0}) {
    ActionTrajectory xi(3, testing::random_tensor({6}, rng).values());
    const auto obs = testing::random_tensor({5}, rng).values();
    const ActionTrajectory out = denoise(p, xi, sigma, obs);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out.values[i] == c_skip(sigma, 0.5) * xi.values[i]);
  }
}

TEST_CASE("initialization is seeded") {
  const Policy a = init_policy(small_config(), 42);
  const Policy b = init_policy(small_config(), 42);
  const Policy c = init_policy(small_config(), 43);
  CHECK(a.params.identical(b.params));
  CHECK_FALSE(a.params.identical(c.params));
}

TEST_CASE("parameter count follows the architecture") {
  // in 6*8, blocks 2*2*(64+8), out 9*6, xi-in 7*8, noise 5*8
  const Policy d = init_policy(small_config(), 1);
  CHECK(d.params.scalar_count() == 48 + 288 + 54 + 56 + 40);
  CHECK(parameter_count(small_config(), PolicyKind::Diffusion) == 486);
  const Policy r = init_policy(small_config(), 1, PolicyKind::Regressor);
  CHECK(r.params.scalar_count() == 48 + 288 + 54);
  CHECK(parameter_count(small_config(), PolicyKind::Regressor) == 390);
}

TEST_CASE("config validation and json round trip") {
  DenoiserConfig c = small_config();
  CHECK(denoiser_config_from_json(to_json(c)) == c);
  c.noise_embed_dim = 5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = small_config();
  c.obs_dim = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("observation normalizer keeps flat dimensions at unit scale") {
  Policy p = init_policy(small_config(), 1);
  std::vector<double> rows;
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 5; ++j) rows.push_back(j == 2 ? 7.0 : r * (j + 1.0));
  fit_observation_normalizer(p, rows);
  CHECK(p.obs_mean[2] == 7.0);
  CHECK(p.obs_scale[2] == 1.0);
  const auto z = normalize_observations(p, rows, 4);
  double mean = 0.0, sq = 0.0;
  for (int r = 0; r < 4; ++r) mean += z[r * 5 + 1] / 4.0;
  for (int r = 0; r < 4; ++r) sq += (z[r * 5 + 1] - mean) * (z[r * 5 + 1] - mean) / 4.0;
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sq == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batched denoising is row independent") {
  testing::DenoiserFixture f(5, 6);
  const std::vector<double> sigmas{0.01, 0.1, 0.5, 1.0, 10.0, 80.0};
  const ad::Tensor all = denoise_batch(f.policy, f.batch.xi, sigmas, f.batch.obs);
  for (std::size_t r = 0; r < 6; ++r) {
    ActionTrajectory xi(3, std::vector<double>(f.batch.xi.data() + r * 6, f.batch.xi.data() + r * 6 + 6));
    const std::span<const double> obs(f.batch.obs.data() + r * 5, 5);
    const ActionTrajectory one = denoise(f.policy, xi, sigmas[r], obs);
    for (std::size_t j = 0; j < 6; ++j) CHECK(one.values[j] == all.at(r, j));
  }
}

TEST_CASE("regressor inference is deterministic") {
  Policy p = init_policy(small_config(), 2, PolicyKind::Regressor);
  std::mt19937_64 rng(2);
  for (auto& q : p.params.params()) q.value = testing::random_tensor(q.value.shape(), rng, 0.3);
  const ad::Tensor obs = testing::random_tensor({2, 5}, rng);
  CHECK(regress_batch(p, obs).identical(regress_batch(p, obs)));
}

TEST_CASE("full denoiser loss gradient matches central differences") {
  testing::DenoiserFixture f(8);
  const auto r = testing::check_gradients(f.policy.params,
                                          [&](ad::Graph& g, bool bw) { return f.loss(g, bw); });
  CHECK(r.entries == 486);
  CHECK(r.max_rel_error < 1e-5);
}
