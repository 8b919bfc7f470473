#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bestrq/autodiff.hpp"
#include "bestrq/common.hpp"
#include "bestrq/rng.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

// ---- parameter storage -------------------------------------------------------

/// Flat named tensor store. Modules remember indices into it; optimizers,
/// checkpoints and the autodiff leafing all iterate it in insertion order.
template <typename R>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor<R>> tensors;

  std::int64_t add(std::string name, Tensor<R> t) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(t));
    return static_cast<std::int64_t>(tensors.size()) - 1;
  }
  Tensor<R>& operator[](std::int64_t i) { return tensors[static_cast<std::size_t>(i)]; }
  const Tensor<R>& operator[](std::int64_t i) const { return tensors[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return tensors.size(); }

  std::vector<Tensor<R>*> pointers() {
    std::vector<Tensor<R>*> out;
    out.reserve(tensors.size());
    for (auto& t : tensors) out.push_back(&t);
    return out;
  }
  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }
};

/// Leafed mirror of a ParamSet for one forward/backward pass.
template <typename R>
struct VarSet {
  std::vector<Var<R>> vars;
  const Var<R>& operator[](std::int64_t i) const { return vars[static_cast<std::size_t>(i)]; }
};

template <typename R>
VarSet<R> leaf_set(const ParamSet<R>& set, bool requires_grad) {
  VarSet<R> out;
  out.vars.reserve(set.size());
  for (const auto& t : set.tensors) out.vars.push_back(Var<R>::leaf(t, requires_grad));
  return out;
}

/// Reads accumulated leaf gradients back out, zeros where a leaf never saw a
/// gradient.
template <typename R>
std::vector<Tensor<R>> collect_grads(const VarSet<R>& vars) {
  std::vector<Tensor<R>> grads;
  grads.reserve(vars.vars.size());
  for (const auto& v : vars.vars)
    grads.push_back(v.has_grad() ? v.grad() : Tensor<R>::zeros(v.value().shape()));
  return grads;
}

// ---- configuration -----------------------------------------------------------

enum class ContextKind { full, causal, causal_lookahead };

/// Attention visibility: full context, strictly causal (optionally windowed to
/// the previous left_window frames), or causal with a small fixed lookahead.
struct ContextMode {
  ContextKind kind = ContextKind::full;
  std::int64_t left_window = -1;  // -1 = unlimited
  std::int64_t right_window = 0;

  static ContextMode full_context() { return {ContextKind::full, -1, 0}; }
  static ContextMode causal(std::int64_t left = -1) { return {ContextKind::causal, left, 0}; }
  static ContextMode causal_lookahead(std::int64_t right = 3, std::int64_t left = -1) {
    return {ContextKind::causal_lookahead, left, right};
  }

  void validate() const {
    if (kind == ContextKind::causal)
      require(right_window == 0, Errc::invalid_config, "causal mode requires right_window == 0");
    if (kind == ContextKind::causal_lookahead)
      require(right_window >= 1, Errc::invalid_config,
              "causal_lookahead requires right_window >= 1");
    require(left_window >= -1, Errc::invalid_config, "left_window must be >= -1");
  }
};

struct EncoderConfig {
  std::int64_t num_layers = 4;
  std::int64_t d_model = 128;
  std::int64_t num_heads = 4;
  std::int64_t ffn_dim = 512;
  std::int64_t input_dim = 80;
  std::int64_t vocab_size = 256;
  ContextMode context;
  std::uint64_t seed = 1;

  void validate() const {
    require(num_layers >= 1 && d_model >= 1 && num_heads >= 1 && ffn_dim >= 1 && input_dim >= 1 &&
                vocab_size >= 1,
            Errc::invalid_config, "encoder dims must be >= 1");
    require(d_model % num_heads == 0, Errc::invalid_config,
            "d_model must be divisible by num_heads");
    context.validate();
  }

  /// Closed-form trainable parameter count (core + softmax head).
  std::int64_t param_count() const {
    const std::int64_t dm = d_model, ff = ffn_dim;
    std::int64_t per_layer = 2 * dm                    // ln1
                             + 4 * (dm * dm + dm)      // q,k,v,o
                             + 2 * dm                  // ln2
                             + dm * ff + ff            // ffn in
                             + ff * dm + dm;           // ffn out
    return input_dim * dm + dm        // input projection
           + num_layers * per_layer   //
           + 2 * dm                   // final ln
           + dm * vocab_size + vocab_size;  // head
  }
};

// ---- parameters ----------------------------------------------------------------

struct LayerIdx {
  std::int64_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  std::int64_t ln2_g, ln2_b, w1, b1, w2, b2;
};

template <typename R>
struct EncoderCore {
  EncoderConfig cfg;
  ParamSet<R> set;
  std::int64_t w_in = 0, b_in = 0;
  std::vector<LayerIdx> layers;
  std::int64_t lnf_g = 0, lnf_b = 0;
};

template <typename R>
struct LinearHead {
  ParamSet<R> set;
  std::int64_t w = 0, b = 0;
  std::int64_t in_dim = 0, out_dim = 0;
};

/// Pre-training encoder: transformer core plus the softmax head over the
/// codebook vocabulary.
template <typename R>
struct EncoderParams {
  EncoderCore<R> core;
  LinearHead<R> head;
};

namespace detail {
template <typename R>
Tensor<R> xavier_uniform(std::int64_t rows, std::int64_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor<R> t({rows, cols});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<R>(rng.uniform(-bound, bound));
  return t;
}

template <typename R>
Tensor<R> vec_full(std::int64_t n, R v) {
  Tensor<R> t({n});
  t.fill(v);
  return t;
}
}  // namespace detail

template <typename R>
LinearHead<R> init_linear_head(std::int64_t in_dim, std::int64_t out_dim, Rng& rng,
                               const std::string& prefix) {
  LinearHead<R> head;
  head.in_dim = in_dim;
  head.out_dim = out_dim;
  head.w = head.set.add(prefix + ".w", detail::xavier_uniform<R>(in_dim, out_dim, rng));
  head.b = head.set.add(prefix + ".b", detail::vec_full<R>(out_dim, R(0)));
  return head;
}

template <typename R>
EncoderCore<R> init_encoder_core(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderCore<R> core;
  core.cfg = cfg;
  auto& s = core.set;
  const std::int64_t dm = cfg.d_model;
  core.w_in = s.add("in.w", detail::xavier_uniform<R>(cfg.input_dim, dm, rng));
  core.b_in = s.add("in.b", detail::vec_full<R>(dm, R(0)));
  for (std::int64_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    LayerIdx idx;
    idx.ln1_g = s.add(p + ".ln1.g", detail::vec_full<R>(dm, R(1)));
    idx.ln1_b = s.add(p + ".ln1.b", detail::vec_full<R>(dm, R(0)));
    idx.wq = s.add(p + ".attn.wq", detail::xavier_uniform<R>(dm, dm, rng));
    idx.bq = s.add(p + ".attn.bq", detail::vec_full<R>(dm, R(0)));
    idx.wk = s.add(p + ".attn.wk", detail::xavier_uniform<R>(dm, dm, rng));
    idx.bk = s.add(p + ".attn.bk", detail::vec_full<R>(dm, R(0)));
    idx.wv = s.add(p + ".attn.wv", detail::xavier_uniform<R>(dm, dm, rng));
    idx.bv = s.add(p + ".attn.bv", detail::vec_full<R>(dm, R(0)));
    idx.wo = s.add(p + ".attn.wo", detail::xavier_uniform<R>(dm, dm, rng));
    idx.bo = s.add(p + ".attn.bo", detail::vec_full<R>(dm, R(0)));
    idx.ln2_g = s.add(p + ".ln2.g", detail::vec_full<R>(dm, R(1)));
    idx.ln2_b = s.add(p + ".ln2.b", detail::vec_full<R>(dm, R(0)));
    idx.w1 = s.add(p + ".ffn.w1", detail::xavier_uniform<R>(dm, cfg.ffn_dim, rng));
    idx.b1 = s.add(p + ".ffn.b1", detail::vec_full<R>(cfg.ffn_dim, R(0)));
    idx.w2 = s.add(p + ".ffn.w2", detail::xavier_uniform<R>(cfg.ffn_dim, dm, rng));
    idx.b2 = s.add(p + ".ffn.b2", detail::vec_full<R>(dm, R(0)));
    core.layers.push_back(idx);
  }
  core.lnf_g = s.add("lnf.g", detail::vec_full<R>(dm, R(1)));
  core.lnf_b = s.add("lnf.b", detail::vec_full<R>(dm, R(0)));
  return core;
}

/// Xavier weights, zero biases, unit layer-norm gains; deterministic in
/// cfg.seed.
template <typename R>
EncoderParams<R> init_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 0x6001));
  EncoderParams<R> p;
  p.core = init_encoder_core<R>(cfg, rng);
  p.head = init_linear_head<R>(cfg.d_model, cfg.vocab_size, rng, "head");
  return p;
}

// ---- forward -------------------------------------------------------------------

/// Additive attention mask (0 allowed, -inf blocked) for a length-t sequence.
template <typename R>
Tensor<R> attention_mask(std::int64_t t, const ContextMode& mode) {
  mode.validate();
  Tensor<R> mask({t, t});
  const R neg_inf = -std::numeric_limits<R>::infinity();
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j < t; ++j) {
      bool ok = true;
      if (mode.kind != ContextKind::full) {
        const std::int64_t right = mode.kind == ContextKind::causal ? 0 : mode.right_window;
        if (j > i + right) ok = false;
        if (mode.left_window >= 0 && j < i - mode.left_window) ok = false;
      }
      mask.at(i, j) = ok ? R(0) : neg_inf;
    }
  }
  return mask;
}

/// Classic sinusoidal position table, added after the input projection.
template <typename R>
Tensor<R> sinusoidal_positions(std::int64_t t, std::int64_t d) {
  Tensor<R> pe({t, d});
  for (std::int64_t pos = 0; pos < t; ++pos) {
    for (std::int64_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe.at(pos, i) = static_cast<R>(std::sin(angle));
      if (i + 1 < d) pe.at(pos, i + 1) = static_cast<R>(std::cos(angle));
    }
  }
  return pe;
}

template <typename R>
Var<R> linear_forward(const LinearHead<R>& head, const VarSet<R>& hv, const Var<R>& x) {
  return add_bias(matmul(x, hv[head.w]), hv[head.b]);
}

/// Pre-norm transformer stack over a T' x input_dim input node; returns the
/// final layer-norm output (T' x d_model).
template <typename R>
Var<R> core_forward(const EncoderCore<R>& core, const VarSet<R>& v, const Var<R>& input,
                    const ContextMode& mode) {
  const EncoderConfig& cfg = core.cfg;
  const Tensor<R>& features = input.value();
  require(features.rank() == 2 && features.dim(1) == cfg.input_dim, Errc::shape_mismatch,
          "encoder input dim " + features.shape_str() + " vs cfg " + std::to_string(cfg.input_dim));
  const std::int64_t t = features.dim(0);
  const std::int64_t dh = cfg.d_model / cfg.num_heads;
  // Lookahead does not compound across layers: the whole model sees exactly
  // right_window frames ahead, so the budget is spent in the first layer and
  // the rest run strictly causal.
  const Tensor<R> first_mask = attention_mask<R>(t, mode);
  const Tensor<R> rest_mask = mode.kind == ContextKind::causal_lookahead
                                  ? attention_mask<R>(t, ContextMode::causal(mode.left_window))
                                  : first_mask;
  const R scale_factor = R(1) / std::sqrt(static_cast<R>(dh));

  Var<R> h = add_bias(matmul(input, v[core.w_in]), v[core.b_in]);
  h = add(h, Var<R>::leaf(sinusoidal_positions<R>(t, cfg.d_model), false));

  bool first_layer = true;
  for (const LayerIdx& L : core.layers) {
    const Tensor<R>& mask = first_layer ? first_mask : rest_mask;
    first_layer = false;
    Var<R> a = layer_norm(h, v[L.ln1_g], v[L.ln1_b]);
    Var<R> q = add_bias(matmul(a, v[L.wq]), v[L.bq]);
    Var<R> k = add_bias(matmul(a, v[L.wk]), v[L.bk]);
    Var<R> val = add_bias(matmul(a, v[L.wv]), v[L.bv]);
    std::vector<Var<R>> heads;
    heads.reserve(static_cast<std::size_t>(cfg.num_heads));
    for (std::int64_t hd = 0; hd < cfg.num_heads; ++hd) {
      Var<R> qh = slice_cols(q, hd * dh, dh);
      Var<R> kh = slice_cols(k, hd * dh, dh);
      Var<R> vh = slice_cols(val, hd * dh, dh);
      Var<R> scores = scale(matmul(qh, transpose(kh)), scale_factor);
      Var<R> probs = softmax_rows(scores, &mask);
      heads.push_back(matmul(probs, vh));
    }
    Var<R> attn = add_bias(matmul(concat_cols(heads), v[L.wo]), v[L.bo]);
    h = add(h, attn);
    Var<R> f = layer_norm(h, v[L.ln2_g], v[L.ln2_b]);
    Var<R> ffn = add_bias(matmul(gelu(add_bias(matmul(f, v[L.w1]), v[L.b1])), v[L.w2]), v[L.b2]);
    h = add(h, ffn);
  }
  return layer_norm(h, v[core.lnf_g], v[core.lnf_b]);
}

template <typename R>
Var<R> core_forward(const EncoderCore<R>& core, const VarSet<R>& v, const Tensor<R>& features,
                    const ContextMode& mode) {
  return core_forward(core, v, Var<R>::leaf(features, false), mode);
}

/// Full forward to vocabulary logits with gradient tracking disabled;
/// the training loop leafs its own VarSets instead.
template <typename R>
Tensor<R> forward_logits(const EncoderParams<R>& params, const Tensor<R>& features,
                         const ContextMode& mode) {
  VarSet<R> cv = leaf_set(params.core.set, false);
  VarSet<R> hv = leaf_set(params.head.set, false);
  Var<R> hidden = core_forward(params.core, cv, features, mode);
  return linear_forward(params.head, hv, hidden).value();
}

/// Max |logit delta| at positions <= t after randomizing frames at positions
/// >= perturb_from. Causal modes must report ~0 when the perturbation lies
/// outside their visible window; full mode generally reports > 0.
template <typename R>
R causality_probe(const EncoderParams<R>& params, const Tensor<R>& features, const ContextMode& mode,
                  std::int64_t t, std::int64_t perturb_from, std::uint64_t seed) {
  require(t >= 0 && t < features.dim(0), Errc::precondition, "causality_probe: t out of range");
  require(perturb_from > t, Errc::precondition, "causality_probe: perturbation must start after t");
  Tensor<R> logits0 = forward_logits(params, features, mode);
  Tensor<R> perturbed = features;
  Rng rng(seed);
  for (std::int64_t i = perturb_from; i < features.dim(0); ++i)
    for (std::int64_t j = 0; j < features.dim(1); ++j)
      perturbed.at(i, j) = static_cast<R>(rng.normal());
  Tensor<R> logits1 = forward_logits(params, perturbed, mode);
  R max_dev = 0;
  for (std::int64_t i = 0; i <= t; ++i)
    for (std::int64_t j = 0; j < logits0.dim(1); ++j)
      max_dev = std::max(max_dev, std::abs(logits0.at(i, j) - logits1.at(i, j)));
  return max_dev;
}

template <typename R>
R causality_probe(const EncoderParams<R>& params, const Tensor<R>& features, const ContextMode& mode,
                  std::int64_t t, std::uint64_t seed) {
  return causality_probe(params, features, mode, t, t + 1, seed);
}

}  // namespace bestrq
