#include <catch2/catch_amalgamated.hpp>

#include "bestrq/encoder.hpp"
#include "bestrq/gradcheck.hpp"
#include "bestrq/rng.hpp"

using namespace bestrq;

namespace {
EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.input_dim = 6;
  cfg.vocab_size = 5;
  cfg.seed = 17;
  return cfg;
}

template <typename R>
Tensor<R> random_features(std::int64_t t, std::int64_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<R> f({t, d});
  for (std::int64_t i = 0; i < f.numel(); ++i) f[i] = static_cast<R>(rng.normal());
  return f;
}
}  // namespace

TEST_CASE("init_encoder is deterministic in the seed", "[encoder]") {
  auto cfg = tiny_config();
  auto a = init_encoder<float>(cfg);
  auto b = init_encoder<float>(cfg);
  REQUIRE(a.core.set.size() == b.core.set.size());
  for (std::size_t i = 0; i < a.core.set.size(); ++i)
    for (std::int64_t j = 0; j < a.core.set.tensors[i].numel(); ++j)
      CHECK(a.core.set.tensors[i][j] == b.core.set.tensors[i][j]);
  for (std::int64_t j = 0; j < a.head.set.tensors[0].numel(); ++j)
    CHECK(a.head.set.tensors[0][j] == b.head.set.tensors[0][j]);
}

TEST_CASE("parameter count matches the closed form", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  CHECK(params.core.set.total_count() + params.head.set.total_count() == cfg.param_count());

  EncoderConfig big;
  big.num_layers = 4;
  big.d_model = 128;
  big.num_heads = 4;
  big.ffn_dim = 512;
  big.input_dim = 80;
  big.vocab_size = 256;
  auto p2 = init_encoder<float>(big);
  CHECK(p2.core.set.total_count() + p2.head.set.total_count() == big.param_count());
}

TEST_CASE("config validation rejects indivisible heads", "[encoder]") {
  auto cfg = tiny_config();
  cfg.d_model = 9;
  CHECK_THROWS_AS(init_encoder<float>(cfg), Error);
}

TEST_CASE("context mode validation", "[encoder]") {
  ContextMode bad = ContextMode::causal();
  bad.right_window = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
  ContextMode look = ContextMode::causal_lookahead(0);
  CHECK_THROWS_AS(look.validate(), Error);
}

TEST_CASE("single-frame output is identical across context modes", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(1, cfg.input_dim, 3);
  auto full = forward_logits(params, feats, ContextMode::full_context());
  auto causal = forward_logits(params, feats, ContextMode::causal());
  auto look = forward_logits(params, feats, ContextMode::causal_lookahead(3));
  for (std::int64_t j = 0; j < cfg.vocab_size; ++j) {
    CHECK(full.at(0, j) == causal.at(0, j));
    CHECK(full.at(0, j) == look.at(0, j));
  }
}

TEST_CASE("duplicated utterance produces duplicated outputs", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(7, cfg.input_dim, 4);
  auto a = forward_logits(params, feats, ContextMode::full_context());
  auto b = forward_logits(params, feats, ContextMode::full_context());
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("causal mode passes the causality probe", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(12, cfg.input_dim, 5);
  for (std::int64_t t : {0, 3, 6, 10}) {
    float dev = causality_probe(params, feats, ContextMode::causal(), t, 1234);
    CHECK(dev <= 1e-6f);
  }
}

TEST_CASE("windowed causal mode still passes the probe", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(12, cfg.input_dim, 6);
  float dev = causality_probe(params, feats, ContextMode::causal(4), 5, 99);
  CHECK(dev <= 1e-6f);
}

TEST_CASE("lookahead mode sees exactly right_window frames ahead", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(14, cfg.input_dim, 7);
  const auto mode = ContextMode::causal_lookahead(3);
  // perturbation beyond t + right_window: invisible
  float far_dev = causality_probe(params, feats, mode, 5, 5 + 3 + 1, 31);
  CHECK(far_dev <= 1e-6f);
  // perturbation within the lookahead window: visible
  float near_dev = causality_probe(params, feats, mode, 5, 5 + 1, 31);
  CHECK(near_dev > 1e-6f);
}

TEST_CASE("full mode reports visible future perturbations", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(10, cfg.input_dim, 8);
  float dev = causality_probe(params, feats, ContextMode::full_context(), 4, 77);
  CHECK(dev > 1e-6f);  // probe reports, callers decide
}

TEST_CASE("encoder rejects wrong feature dim", "[encoder]") {
  auto cfg = tiny_config();
  auto params = init_encoder<float>(cfg);
  auto feats = random_features<float>(4, cfg.input_dim + 1, 9);
  CHECK_THROWS_AS(forward_logits(params, feats, ContextMode::full_context()), Error);
}

TEST_CASE("composed encoder loss passes the gradient check in 64-bit", "[encoder]") {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 12;
  cfg.input_dim = 6;
  cfg.vocab_size = 4;
  cfg.seed = 23;
  auto params = init_encoder<double>(cfg);
  auto feats = random_features<double>(5, cfg.input_dim, 10);
  std::vector<std::int64_t> labels{1, 3, 0, 2, 1};
  std::vector<bool> mask{true, false, true, true, false};

  // flatten core+head into one parameter list for the harness
  std::vector<Tensor<double>> flat;
  for (const auto& t : params.core.set.tensors) flat.push_back(t);
  for (const auto& t : params.head.set.tensors) flat.push_back(t);
  const std::size_t n_core = params.core.set.size();

  LossBuilder<double> build = [&](const std::vector<Tensor<double>>& p) {
    LossGraph<double> g;
    VarSet<double> cv, hv;
    for (std::size_t i = 0; i < n_core; ++i) cv.vars.push_back(Var<double>::leaf(p[i], true));
    for (std::size_t i = n_core; i < p.size(); ++i) hv.vars.push_back(Var<double>::leaf(p[i], true));
    g.leaves.insert(g.leaves.end(), cv.vars.begin(), cv.vars.end());
    g.leaves.insert(g.leaves.end(), hv.vars.begin(), hv.vars.end());
    Var<double> hidden = core_forward(params.core, cv, feats, ContextMode::full_context());
    Var<double> logits = linear_forward(params.head, hv, hidden);
    g.loss = masked_cross_entropy(logits, labels, mask);
    return g;
  };
  CHECK(grad_check<double>(build, flat, 1e-3) < 1e-4);
}

TEST_CASE("causal-mode gradient check also passes", "[encoder]") {
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.d_model = 6;
  cfg.num_heads = 2;
  cfg.ffn_dim = 8;
  cfg.input_dim = 4;
  cfg.vocab_size = 3;
  cfg.seed = 29;
  auto params = init_encoder<double>(cfg);
  auto feats = random_features<double>(4, cfg.input_dim, 11);
  std::vector<std::int64_t> labels{0, 2, 1, 1};
  std::vector<bool> mask{true, true, false, true};
  std::vector<Tensor<double>> flat;
  for (const auto& t : params.core.set.tensors) flat.push_back(t);
  for (const auto& t : params.head.set.tensors) flat.push_back(t);
  const std::size_t n_core = params.core.set.size();
  LossBuilder<double> build = [&](const std::vector<Tensor<double>>& p) {
    LossGraph<double> g;
    VarSet<double> cv, hv;
    for (std::size_t i = 0; i < n_core; ++i) cv.vars.push_back(Var<double>::leaf(p[i], true));
    for (std::size_t i = n_core; i < p.size(); ++i) hv.vars.push_back(Var<double>::leaf(p[i], true));
    g.leaves.insert(g.leaves.end(), cv.vars.begin(), cv.vars.end());
    g.leaves.insert(g.leaves.end(), hv.vars.begin(), hv.vars.end());
    Var<double> hidden = core_forward(params.core, cv, feats, ContextMode::causal_lookahead(2));
    g.loss = masked_cross_entropy(linear_forward(params.head, hv, hidden), labels, mask);
    return g;
  };
  CHECK(grad_check<double>(build, flat, 1e-3) < 1e-4);
}
