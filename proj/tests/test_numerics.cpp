#include <catch2/catch_amalgamated.hpp>

#include "bestrq/autodiff.hpp"
#include "bestrq/gradcheck.hpp"
#include "bestrq/optimizer.hpp"
#include "bestrq/rng.hpp"
#include "bestrq/tensor.hpp"

using namespace bestrq;

TEST_CASE("softmax of uniform logits is uniform", "[numerics]") {
  Tensor<double> logits({4}, {0, 0, 0, 0});
  Tensor<double> p = softmax(logits);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("softmax shift invariance", "[numerics]") {
  for (double c : {-17.0, 0.0, 3.25, 1000.0}) {
    Tensor<double> logits({2}, {c, c + std::log(2.0)});
    Tensor<double> p = softmax(logits);
    CHECK(p[0] == Catch::Approx(1.0 / 3.0).margin(1e-9));
    CHECK(p[1] == Catch::Approx(2.0 / 3.0).margin(1e-9));
  }
}

TEST_CASE("softmax is stable under large logits", "[numerics]") {
  Tensor<double> logits({2}, {1000.0, 0.0});
  Tensor<double> p = softmax(logits);
  CHECK(p[0] == Catch::Approx(1.0).margin(1e-12));
  CHECK(p[1] == Catch::Approx(0.0).margin(1e-12));
  CHECK(p.all_finite());
}

TEST_CASE("softmax rejects non-finite input", "[numerics]") {
  Tensor<double> logits({2}, {std::numeric_limits<double>::infinity(), 0.0});
  CHECK_THROWS_AS(softmax(logits), Error);
}

TEST_CASE("softmax rows sum to one", "[numerics]") {
  Rng rng(7);
  Tensor<double> logits({5, 9});
  for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-8, 8);
  Tensor<double> p = softmax(logits);
  for (std::int64_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (std::int64_t j = 0; j < 9; ++j) {
      sum += p.at(i, j);
      CHECK(p.at(i, j) > 0.0);
      CHECK(p.at(i, j) < 1.0);
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("transformer_lr crossover and decay points", "[numerics]") {
  ScheduleConfig cfg{0.004, 25000};
  CHECK(transformer_lr(25000, cfg) == Catch::Approx(0.004));
  CHECK(transformer_lr(12500, cfg) == Catch::Approx(0.002));
  CHECK(transformer_lr(100000, cfg) == Catch::Approx(0.002));
}

TEST_CASE("transformer_lr rejects step zero", "[numerics]") {
  ScheduleConfig cfg{0.001, 100};
  CHECK_THROWS_AS(transformer_lr(0, cfg), Error);
}

TEST_CASE("transformer_lr peaks at warmup and is monotone on both sides", "[numerics]") {
  ScheduleConfig cfg{0.01, 50};
  double peak = transformer_lr(cfg.warmup_steps, cfg);
  double prev = 0;
  for (std::int64_t s = 1; s <= 50; ++s) {
    double lr = transformer_lr(s, cfg);
    CHECK(lr > prev);
    CHECK(lr <= peak + 1e-15);
    prev = lr;
  }
  for (std::int64_t s = 51; s <= 200; ++s) {
    double lr = transformer_lr(s, cfg);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("adam with zero gradients and fresh state keeps parameters", "[numerics]") {
  Tensor<double> p({3}, {1.0, -2.0, 0.5});
  Tensor<double> g({3}, {0.0, 0.0, 0.0});
  auto state = AdamState<double>::init({&p});
  adam_step<double>({&p}, {&g}, state, 0.1);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(p[2] == 0.5);
  CHECK(state.step == 1);
}

TEST_CASE("adam single step matches hand-evaluated update", "[numerics]") {
  // p=1, g=1, lr=0.1, defaults: m-hat and v-hat both debias to exactly 1,
  // so the step is lr / (1 + eps)
  Tensor<double> p({1}, {1.0});
  Tensor<double> g({1}, {1.0});
  auto state = AdamState<double>::init({&p});
  adam_step<double>({&p}, {&g}, state, 0.1);
  const double m_hat = (0.1 * 1.0) / (1.0 - 0.9);
  const double v_hat = (0.02 * 1.0) / (1.0 - 0.98);
  const double expected = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-9);
  CHECK(p[0] == Catch::Approx(expected).margin(1e-15));
}

TEST_CASE("adam is deterministic", "[numerics]") {
  auto run = [] {
    Tensor<double> p({4}, {0.3, -0.7, 2.0, 0.0});
    Tensor<double> g({4}, {0.11, -0.5, 0.25, 1.5});
    auto state = AdamState<double>::init({&p});
    for (int i = 0; i < 20; ++i) adam_step<double>({&p}, {&g}, state, 0.05);
    return p;
  };
  Tensor<double> a = run(), b = run();
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("adam rejects shape mismatch and non-finite gradients", "[numerics]") {
  Tensor<double> p({2}, {1.0, 2.0});
  Tensor<double> bad_shape({3}, {0.0, 0.0, 0.0});
  auto state = AdamState<double>::init({&p});
  CHECK_THROWS_AS(adam_step<double>({&p}, {&bad_shape}, state, 0.1), Error);
  Tensor<double> nan_grad({2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(adam_step<double>({&p}, {&nan_grad}, state, 0.1), Error);
}

TEST_CASE("grad_check on a quadratic is near exact", "[numerics]") {
  LossBuilder<double> build = [](const std::vector<Tensor<double>>& params) {
    LossGraph<double> g;
    Var<double> p = Var<double>::leaf(params[0], true);
    g.leaves.push_back(p);
    g.loss = mse(p, Var<double>::leaf(Tensor<double>::zeros(params[0].shape()), false));
    return g;
  };
  Tensor<double> p({4}, {0.5, -1.25, 2.0, 3.5});
  double err = grad_check<double>(build, {p}, 1e-5);
  CHECK(err < 1e-8);
}

TEST_CASE("grad_check on a constant loss reports zero", "[numerics]") {
  LossBuilder<double> build = [](const std::vector<Tensor<double>>& params) {
    LossGraph<double> g;
    Var<double> p = Var<double>::leaf(params[0], true);
    g.leaves.push_back(p);
    g.loss = Var<double>::scalar(3.0);  // ignores p entirely
    return g;
  };
  Tensor<double> p({3}, {1.0, 2.0, 3.0});
  double err = grad_check<double>(build, {p}, 1e-5);
  CHECK(err < 1e-12);
}

TEST_CASE("rng streams are deterministic and independent", "[numerics]") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}

TEST_CASE("rng normal moments", "[numerics]") {
  Rng rng(11);
  double sum = 0, sumsq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(var == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("softmax is invariant to adding a constant to all logits", "[numerics]") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> logits({7});
    for (int i = 0; i < 7; ++i) logits[i] = rng.uniform(-5, 5);
    Tensor<double> p = softmax(logits);
    const double c = rng.uniform(-100, 100);
    Tensor<double> shifted = logits;
    for (int i = 0; i < 7; ++i) shifted[i] += c;
    Tensor<double> q = softmax(shifted);
    for (int i = 0; i < 7; ++i) CHECK(q[i] == Catch::Approx(p[i]).margin(1e-6));
  }
}
