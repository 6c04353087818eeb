#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mimicd/autodiff.hpp"
#include "mimicd/errors.hpp"
#include "support.hpp"

using namespace mimicd;
using ad::Graph;
using ad::Tensor;

TEST_CASE("forward examples") {
  Graph g(false);
  const auto m = g.matmul(g.constant(Tensor::scalar(2)), g.constant(Tensor::scalar(3)));
  CHECK(g.value(m)[0] == 6.0);

  const auto ln = g.layer_norm(g.constant(Tensor({1, 4}, 7.5)));
  for (double v : g.value(ln).values()) CHECK(v == 0.0);

  const auto ms = g.mean_square(g.constant(Tensor({1, 2}, std::vector<double>{3, 4})));
  CHECK(g.value(ms)[0] == 12.5);
}

TEST_CASE("derivative of x^2 at 3 is 6") {
  ad::ParamStore store;
  auto& x = store.add("x", Tensor::scalar(3.0));
  Graph g;
  const auto xv = g.param(x);
  // mean_square of a single element is x^2
  g.backward(g.mean_square(xv));
  CHECK(x.grad[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("mean_square(W v) gradient matches central differences") {
  std::mt19937_64 rng(3);
  ad::ParamStore store;
  store.add("W", testing::random_tensor({4, 4}, rng));
  const Tensor v = testing::random_tensor({4, 1}, rng);
  const auto r = testing::check_gradients(store, [&](Graph& g, bool bw) {
    const auto l = g.mean_square(g.matmul(g.param(store.at("W")), g.constant(v)));
    if (bw) g.backward(l);
    return g.value(l)[0];
  });
  CHECK(r.entries == 16);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("random graphs: reverse mode matches central differences") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    testing::RandomGraph rg(seed);
    const auto r = testing::check_gradients(
        rg.store(), [&](Graph& g, bool bw) { return rg.evaluate(g, bw); });
    INFO("seed " << seed);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("gradient of a sum of losses is the sum of the gradients") {
  std::mt19937_64 rng(4);
  ad::ParamStore store;
  auto& w = store.add("W", testing::random_tensor({3, 2}, rng));
  const Tensor x1 = testing::random_tensor({5, 3}, rng), x2 = testing::random_tensor({2, 3}, rng);
  auto loss = [&](Graph& g, const Tensor& x) { return g.mean_square(g.gelu(g.matmul(g.constant(x), g.param(w)))); };
  store.zero_grad();
  {
    Graph g;
    g.backward(loss(g, x1));
  }
  Tensor g1 = w.grad;
  store.zero_grad();
  {
    Graph g;
    g.backward(loss(g, x2));
  }
  Tensor g2 = w.grad;
  store.zero_grad();
  {
    Graph g;
    g.backward(g.add(loss(g, x1), loss(g, x2)));
  }
  for (std::size_t i = 0; i < w.grad.numel(); ++i)
    CHECK(w.grad[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-13));
}

TEST_CASE("shape errors are reported") {
  Graph g;
  const auto a = g.constant(Tensor::matrix(2, 3));
  const auto b = g.constant(Tensor::matrix(2, 3));
  CHECK_THROWS_AS(g.matmul(a, b), ValidationError);
  CHECK_THROWS_AS(g.slice_cols(a, 2, 5), ValidationError);
}

TEST_CASE("read-only parameters are rejected on a recording graph") {
  ad::ParamStore store;
  const auto& p = store.add("p", Tensor::scalar(1.0));
  Graph g(true);
  CHECK_THROWS_AS(g.param(p), ValidationError);
  Graph inference(false);
  CHECK(inference.value(inference.param(p))[0] == 1.0);
}

TEST_CASE("adamw: zero gradient and no decay leaves values unchanged") {
  ad::ParamStore store;
  auto& p = store.add("p", Tensor({2, 2}, std::vector<double>{1, -2, 3, 0.5}));
  const Tensor before = p.value;
  store.zero_grad();
  ad::AdamWConfig c;
  c.weight_decay = 0.0;
  ad::adamw_step(store, c);
  CHECK(p.value.identical(before));
  for (double m : p.first_moment.values()) CHECK(m == 0.0);
  for (double v : p.second_moment.values()) CHECK(v == 0.0);
  CHECK(store.step_count() == 1);
}

TEST_CASE("adamw: bias-corrected first step is a sign step") {
  ad::ParamStore store;
  auto& p = store.add("p", Tensor::scalar(1.0));
  p.grad = Tensor::scalar(1.0);
  ad::adamw_step(store, {0.1, 0.0, 0.0, 0.0, 0.0});
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("adamw converges on (x - 2)^2") {
  ad::ParamStore store;
  auto& x = store.add("x", Tensor::scalar(0.0));
  ad::AdamWConfig c;
  c.lr = 0.05;
  c.weight_decay = 0.0;
  for (int s = 0; s < 200; ++s) {
    store.zero_grad();
    Graph g;
    g.backward(g.mean_square(g.sub(g.param(x), g.constant(Tensor::scalar(2.0)))));
    ad::adamw_step(store, c);
  }
  CHECK(std::abs(x.value[0] - 2.0) < 0.01);
}

TEST_CASE("param store round trip is bitwise, optimizer state included") {
  std::mt19937_64 rng(9);
  ad::ParamStore store;
  store.add("a", testing::random_tensor({3, 4}, rng));
  store.add("b", testing::random_tensor({1, 4}, rng));
  for (auto& p : store.params()) p.grad = testing::random_tensor(p.value.shape(), rng);
  ad::adamw_step(store, ad::AdamWConfig{});
  std::stringstream ss;
  ad::write_store(ss, store);
  ad::ParamStore back = ad::read_store(ss);
  for (auto& p : back.params()) p.grad = store.at(p.name).grad;
  CHECK(back.identical(store, true));
  CHECK(back.step_count() == store.step_count());
}

TEST_CASE("truncated param store is a parse error") {
  ad::ParamStore store;
  store.add("a", Tensor::matrix(8, 8, 1.0));
  std::stringstream ss;
  ad::write_store(ss, store);
  std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(ad::read_store(cut), ParseError);
}
