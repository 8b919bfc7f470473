#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "bestrq/ctc.hpp"
#include "bestrq/gradcheck.hpp"
#include "bestrq/rng.hpp"

using namespace bestrq;

namespace {

// exhaustive oracle: enumerate every length-T path over the alphabet, keep the
// ones whose collapse equals the target, and sum their probabilities
double brute_force_ctc(const Tensor<double>& logits, const std::vector<std::int64_t>& target,
                       std::int64_t blank) {
  const std::int64_t T = logits.dim(0), K = logits.dim(1);
  Tensor<double> probs = softmax(logits);
  std::vector<std::int64_t> path(static_cast<std::size_t>(T), 0);
  double total = 0.0;
  std::int64_t count = 1;
  for (std::int64_t t = 0; t < T; ++t) count *= K;
  for (std::int64_t code = 0; code < count; ++code) {
    std::int64_t c = code;
    for (std::int64_t t = 0; t < T; ++t) {
      path[static_cast<std::size_t>(t)] = c % K;
      c /= K;
    }
    std::vector<std::int64_t> collapsed;
    std::int64_t prev = -1;
    for (auto p : path) {
      if (p != prev && p != blank) collapsed.push_back(p);
      prev = p;
    }
    if (collapsed != target) continue;
    double prob = 1.0;
    for (std::int64_t t = 0; t < T; ++t) prob *= probs.at(t, path[static_cast<std::size_t>(t)]);
    total += prob;
  }
  return total;
}

// second, independent implementation of the collapse rule for decode checks
std::vector<std::int64_t> reference_collapse(const std::vector<std::int64_t>& frames,
                                             std::int64_t blank) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i] == blank) continue;
    if (!out.empty() && i > 0 && frames[i - 1] == frames[i]) continue;
    out.push_back(frames[i]);
  }
  return out;
}

Tensor<double> random_logits(std::int64_t t, std::int64_t k, Rng& rng) {
  Tensor<double> l({t, k});
  for (std::int64_t i = 0; i < l.numel(); ++i) l[i] = rng.uniform(-2, 2);
  return l;
}

}  // namespace

TEST_CASE("single-frame ctc equals the frame posterior", "[ctc]") {
  Tensor<double> logits({1, 3}, {2.0, -1.0, 0.5});  // labels {0,1}, blank = 2
  auto probs = softmax(logits);
  auto res = ctc_loss(logits, {0}, 2);
  CHECK(res.feasible);
  CHECK(res.value == Catch::Approx(-std::log(probs.at(0, 0))).margin(1e-12));
}

TEST_CASE("ctc matches exhaustive path enumeration on all small instances", "[ctc]") {
  Rng rng(64);
  for (std::int64_t v = 1; v <= 4; ++v) {
    const std::int64_t k = v + 1;  // blank appended last
    for (std::int64_t t = 1; t <= 6; ++t) {
      for (std::int64_t len = 1; len <= 3; ++len) {
        // enumerate every target of this length over the vocab
        std::int64_t count = 1;
        for (std::int64_t i = 0; i < len; ++i) count *= v;
        for (std::int64_t code = 0; code < count; ++code) {
          std::vector<std::int64_t> target;
          std::int64_t c = code;
          for (std::int64_t i = 0; i < len; ++i) {
            target.push_back(c % v);
            c /= v;
          }
          Tensor<double> logits = random_logits(t, k, rng);
          auto res = ctc_loss(logits, target, v);
          const double brute = brute_force_ctc(logits, target, v);
          if (ctc_min_frames(target) > t) {
            CHECK_FALSE(res.feasible);
            CHECK(brute == 0.0);
          } else {
            REQUIRE(res.feasible);
            CHECK(res.value == Catch::Approx(-std::log(brute)).margin(1e-10));
          }
        }
      }
    }
  }
}

TEST_CASE("infeasible targets are flagged", "[ctc]") {
  Tensor<double> logits({2, 3});
  auto res = ctc_loss(logits, {0, 0}, 2);  // repeat needs 3 frames
  CHECK_FALSE(res.feasible);
  CHECK(std::isinf(res.value));
  auto res2 = ctc_loss(logits, {0, 1, 0}, 2);
  CHECK_FALSE(res2.feasible);
}

TEST_CASE("ctc gradient matches finite differences", "[ctc]") {
  Rng rng(65);
  Tensor<double> logits = random_logits(5, 4, rng);
  std::vector<std::int64_t> target{0, 2, 0};
  LossBuilder<double> build = [&](const std::vector<Tensor<double>>& p) {
    LossGraph<double> g;
    Var<double> vl = Var<double>::leaf(p[0], true);
    g.leaves = {vl};
    g.loss = ctc_loss_op(vl, target, 3);
    return g;
  };
  CHECK(grad_check<double>(build, {logits}, 1e-6) < 1e-7);
}

TEST_CASE("ctc_loss_op refuses infeasible targets", "[ctc]") {
  Tensor<double> logits({1, 3});
  Var<double> vl = Var<double>::leaf(logits, true);
  CHECK_THROWS_AS(ctc_loss_op(vl, {0, 1}, 2), Error);
}

TEST_CASE("ctc rejects bad labels", "[ctc]") {
  Tensor<double> logits({3, 3});
  CHECK_THROWS_AS(ctc_loss(logits, {2}, 2), Error);   // target equals blank
  CHECK_THROWS_AS(ctc_loss(logits, {5}, 2), Error);   // out of range
  CHECK_THROWS_AS(ctc_loss(logits, {}, 2), Error);    // empty target
}

TEST_CASE("greedy decode collapse rule", "[ctc]") {
  // frames argmax [a, a, blank, a] -> [a, a]
  const std::int64_t blank = 1;
  Tensor<double> logits({4, 2}, {5, 0, 5, 0, 0, 5, 5, 0});
  auto out = greedy_ctc_decode(logits, blank);
  CHECK(out == std::vector<std::int64_t>({0, 0}));
}

TEST_CASE("greedy decode of all blanks is empty", "[ctc]") {
  Tensor<double> logits({5, 3});
  for (std::int64_t t = 0; t < 5; ++t) logits.at(t, 2) = 10.0;
  CHECK(greedy_ctc_decode(logits, 2).empty());
}

TEST_CASE("greedy decode matches the reference collapse on random logits", "[ctc]") {
  Rng rng(66);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> logits = random_logits(12, 5, rng);
    std::vector<std::int64_t> argmaxes;
    for (std::int64_t t = 0; t < 12; ++t) {
      std::int64_t arg = 0;
      for (std::int64_t j = 1; j < 5; ++j)
        if (logits.at(t, j) > logits.at(t, arg)) arg = j;
      argmaxes.push_back(arg);
    }
    CHECK(greedy_ctc_decode(logits, 4) == reference_collapse(argmaxes, 4));
  }
}

TEST_CASE("edit distance basics", "[ctc]") {
  CHECK(edit_distance({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(edit_distance({1, 2, 3}, {1, 3}) == 1);
  CHECK(edit_distance({}, {1, 2}) == 2);
  CHECK(edit_distance({1, 2}, {2, 1}) == 2);
}

TEST_CASE("token error rate pools distance over reference length", "[ctc]") {
  std::vector<std::vector<std::int64_t>> refs{{1, 2, 3, 4}, {5, 6}};
  std::vector<std::vector<std::int64_t>> hyps{{1, 2, 3, 4}, {6, 6}};
  CHECK(token_error_rate(hyps, refs) == Catch::Approx(1.0 / 6.0));
}
