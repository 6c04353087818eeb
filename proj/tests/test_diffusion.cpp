#include <doctest.h>

#include <cmath>
#include <random>

#include "mimicd/diffusion.hpp"
#include "mimicd/errors.hpp"
#include "support.hpp"

using namespace mimicd;

namespace {

struct Moments {
  double mean = 0.0, sd = 0.0;
};

Moments moments(const std::vector<double>& v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.sd += (x - m.mean) * (x - m.mean);
  m.sd = std::sqrt(m.sd / static_cast<double>(v.size() - 1));
  return m;
}

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.T = 2;
  c.m = 2;
  c.obs_dim = 3;
  c.hidden_width = 8;
  c.n_blocks = 1;
  c.noise_embed_dim = 4;
  return c;
}

}  // namespace

TEST_CASE("training sigma distribution") {
  std::mt19937_64 rng(1);
  CHECK(sample_train_sigma({0.3, 0.0}, rng) == std::exp(0.3));
  std::vector<double> logs;
  for (int k = 0; k < 100000; ++k) {
    const double s = sample_train_sigma({}, rng);
    REQUIRE(s > 0.0);
    logs.push_back(std::log(s));
  }
  const Moments m = moments(logs);
  CHECK(std::abs(m.mean + 1.2) < 0.02);
  CHECK(std::abs(m.sd - 1.2) < 0.02);
  CHECK_THROWS_AS((TrainNoiseDist{0.0, -1.0}.validate()), ValidationError);
}

TEST_CASE("perturb") {
  std::mt19937_64 rng(2);
  ActionTrajectory xi(4, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 1e-300});
  CHECK(perturb(xi, 0.0, rng) == xi);

  std::vector<double> d;
  for (int k = 0; k < 50000; ++k)
    for (double v : perturb(ActionTrajectory(1), 2.0, rng).values) d.push_back(v);
  const Moments m = moments(d);
  CHECK(m.sd >= 1.98);
  CHECK(m.sd <= 2.02);
  CHECK(std::abs(m.mean) < 0.02);
}

TEST_CASE("karras schedule") {
  const NoiseSchedule one = karras_schedule(1, 0.002, 80, 7);
  CHECK(one.sigmas == std::vector<double>{80.0, 0.0});
  for (std::size_t K : {2, 5, 40}) {
    const NoiseSchedule s = karras_schedule(K, 0.002, 80, 7);
    REQUIRE(s.sigmas.size() == K + 1);
    CHECK(s.sigmas.front() == doctest::Approx(80.0).epsilon(1e-14));
    CHECK(s.sigmas[K - 1] == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(s.sigmas.back() == 0.0);
    for (std::size_t i = 0; i + 1 < s.sigmas.size(); ++i) CHECK(s.sigmas[i] > s.sigmas[i + 1]);
  }
  const NoiseSchedule three = karras_schedule(3, 0.002, 80, 7);
  const double mid =
      std::pow(std::pow(80.0, 1 / 7.0) + 0.5 * (std::pow(0.002, 1 / 7.0) - std::pow(80.0, 1 / 7.0)), 7.0);
  CHECK(three.sigmas[1] == doctest::Approx(mid).epsilon(1e-14));
  CHECK_THROWS_AS(karras_schedule(0, 0.002, 80, 7), ValidationError);
  CHECK_THROWS_AS(karras_schedule(4, 1.0, 0.5, 7), ValidationError);
}

TEST_CASE("loss for a single frozen example equals the hand computation") {
  Policy p = init_policy(tiny_config(), 1);  // zero output layer: D = c_skip * noisy
  LossBatch b{ad::Tensor({1, 4}, std::vector<double>{0.3, -0.1, 0.8, 0.2}),
              ad::Tensor({1, 3}, std::vector<double>{1, 2, 3})};
  LossNoise n{{0.7}, ad::Tensor({1, 4}, std::vector<double>{0.5, -1.0, 0.25, 2.0})};
  double expect = 0.0, expect_w = 0.0;
  const double cs = c_skip(0.7, 0.5), lam = edm_loss_weight(0.7, 0.5);
  for (std::size_t j = 0; j < 4; ++j) {
    const double e = cs * (b.xi[j] + 0.7 * n.eps[j]) - b.xi[j];
    expect += e * e / 4.0;
    expect_w += lam * e * e / 4.0;
  }
  ad::Graph g(false);
  CHECK(g.value(diffusion_loss(g, p, b, n))[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(g.value(diffusion_loss(g, p, b, n, true))[0] == doctest::Approx(expect_w).epsilon(1e-13));
  CHECK(lam == doctest::Approx((0.49 + 0.25) / (0.49 * 0.25)).epsilon(1e-15));
}

TEST_CASE("loss is nonnegative and zero for a perfect denoiser") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    testing::DenoiserFixture f(seed);
    ad::Graph g(false);
    CHECK(f.loss(g, false) >= 0.0);
  }
  // as sigma -> 0 the preconditioned identity is exact
  Policy p = init_policy(tiny_config(), 1);
  LossBatch b{ad::Tensor({1, 4}, std::vector<double>{0.3, -0.1, 0.8, 0.2}), ad::Tensor::matrix(1, 3)};
  LossNoise n{{1e-300}, ad::Tensor::matrix(1, 4)};
  ad::Graph g(false);
  CHECK(g.value(diffusion_loss(g, p, b, n))[0] == 0.0);
}

TEST_CASE("gaussian denoiser samples recover the data distribution") {
  const double sd = 0.5;
  const NoiseSchedule s = karras_schedule(ScheduleParams{});
  std::mt19937_64 rng(7);
  const std::size_t n = 10000, dims = 4;
  ad::Tensor x0({n, dims}, initial_noise(n * dims, 80.0, rng));
  const ad::Tensor out = heun_sample(testing::gaussian_denoiser(sd), x0, s);
  for (std::size_t j = 0; j < dims; ++j) {
    std::vector<double> col;
    for (std::size_t r = 0; r < n; ++r) col.push_back(out.at(r, j));
    const Moments m = moments(col);
    CHECK(std::abs(m.sd - sd) <= 0.03 * sd);
    CHECK(std::abs(m.mean) < 0.05 * sd);
  }
}

TEST_CASE("one-step and two-step samplers agree with hand-stepped updates") {
  const double sd = 0.5;
  const auto den = testing::gaussian_denoiser(sd);
  const double x0 = 37.25;
  {
    const NoiseSchedule s = karras_schedule(1, 0.002, 80, 7);
    const ad::Tensor out = heun_sample(den, ad::Tensor({1, 1}, std::vector<double>{x0}), s);
    const double k = sd * sd / (sd * sd + 80.0 * 80.0);
    const double d = (x0 - k * x0) / 80.0;
    CHECK(out[0] == x0 + (0.0 - 80.0) * d);
    CHECK(out[0] == doctest::Approx(k * x0).epsilon(1e-12));
  }
  {
    const NoiseSchedule s = karras_schedule(2, 0.002, 80, 7);
    const ad::Tensor out = heun_sample(den, ad::Tensor({1, 1}, std::vector<double>{x0}), s);
    const double s0 = s.sigmas[0], s1 = s.sigmas[1];
    const double k0 = sd * sd / (sd * sd + s0 * s0), k1 = sd * sd / (sd * sd + s1 * s1);
    const double d0 = (x0 - k0 * x0) / s0;
    const double euler = x0 + (s1 - s0) * d0;
    const double d1 = (euler - k1 * euler) / s1;
    const double heun = x0 + (s1 - s0) * (0.5 * d0 + 0.5 * d1);
    const double dlast = (heun - k1 * heun) / s1;
    CHECK(out[0] == heun + (0.0 - s1) * dlast);
  }
}

TEST_CASE("sampling is seeded and row independent") {
  testing::DenoiserFixture f(3, 4);
  const NoiseSchedule s = karras_schedule(8, 0.002, 80, 7);
  std::vector<double> obs(f.batch.obs.data(), f.batch.obs.data() + 5);
  std::mt19937_64 a(11), b(11), c(12);
  const ActionTrajectory pa = sample(f.policy, obs, s, a);
  CHECK(pa == sample(f.policy, obs, s, b));
  CHECK_FALSE(pa == sample(f.policy, obs, s, c));

  // a row sampled inside a batch equals the same row sampled alone
  std::mt19937_64 r0(1), r1(2), r2(3), r3(4), solo(3);
  std::mt19937_64* rngs[] = {&r0, &r1, &r2, &r3};
  const ad::Tensor all = sample_batch(f.policy, f.batch.obs, s, rngs);
  std::vector<double> row2(f.batch.obs.data() + 10, f.batch.obs.data() + 15);
  const ActionTrajectory alone = sample(f.policy, row2, s, solo);
  for (std::size_t j = 0; j < 6; ++j) CHECK(alone.values[j] == all.at(2, j));
}

TEST_CASE("non-finite sampler state is a numeric error naming the step") {
  const DenoiseFn bad = [](const ad::Tensor& x, std::span<const double>) {
    ad::Tensor out(x.shape(), std::nan(""));
    return out;
  };
  try {
    heun_sample(bad, ad::Tensor({1, 2}, std::vector<double>{1, 2}), karras_schedule(3, 0.002, 80, 7));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}
