#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bestrq/autodiff.hpp"
#include "bestrq/common.hpp"
#include "bestrq/encoder.hpp"
#include "bestrq/features.hpp"
#include "bestrq/optimizer.hpp"
#include "bestrq/rng.hpp"

namespace bestrq {

enum class VqVaeVariant { projection, transformer };

inline const char* vqvae_variant_name(VqVaeVariant v) {
  return v == VqVaeVariant::projection ? "projection" : "transformer";
}

/// Trained comparison quantizers: a projection-only VQ-VAE mirroring the
/// random-projection structure, and a transformer VQ-VAE whose encoder and
/// decoder reuse the encoder module's blocks at small size.
struct VqVaeConfig {
  VqVaeVariant variant = VqVaeVariant::projection;
  std::int64_t input_dim = 80;    // stacked frame dim
  std::int64_t code_dim = 16;     // h
  std::int64_t codebook_size = 256;
  bool l2_normalize = false;

  std::int64_t num_layers = 2;  // transformer halves
  std::int64_t d_model = 64;
  std::int64_t num_heads = 4;
  std::int64_t ffn_dim = 256;

  double learning_rate = 1e-4;  // constant
  double commitment_beta = 0.25;
  std::int64_t steps = 2000;
  std::int64_t batch_size = 16;
  std::uint64_t seed = 1;

  void validate() const {
    require(input_dim >= 1 && code_dim >= 1 && codebook_size >= 1, Errc::invalid_config,
            "vqvae dims must be >= 1");
    require(learning_rate > 0 && commitment_beta >= 0, Errc::invalid_config,
            "vqvae learning config invalid");
    require(steps >= 0 && batch_size >= 1, Errc::invalid_config, "vqvae steps/batch invalid");
    if (variant == VqVaeVariant::transformer) {
      require(d_model % num_heads == 0, Errc::invalid_config,
              "vqvae d_model must divide by num_heads");
    }
  }

  EncoderConfig half_config(std::int64_t in_dim, std::uint64_t seed_offset) const {
    EncoderConfig cfg;
    cfg.num_layers = num_layers;
    cfg.d_model = d_model;
    cfg.num_heads = num_heads;
    cfg.ffn_dim = ffn_dim;
    cfg.input_dim = in_dim;
    cfg.vocab_size = 1;  // heads are attached separately
    cfg.seed = derive_seed(seed, seed_offset);
    return cfg;
  }
};

/// One half (encoder or decoder): an optional transformer core followed by a
/// linear projection.
template <typename R>
struct VqVaeStack {
  bool has_core = false;
  EncoderCore<R> core;
  LinearHead<R> proj;
};

namespace detail {
template <typename R>
Var<R> stack_forward(const VqVaeStack<R>& stack, const VarSet<R>& core_vars,
                     const VarSet<R>& proj_vars, const Var<R>& input) {
  if (stack.has_core) {
    Var<R> hidden = core_forward(stack.core, core_vars, input, ContextMode::full_context());
    return linear_forward(stack.proj, proj_vars, hidden);
  }
  return linear_forward(stack.proj, proj_vars, input);
}
}  // namespace detail

class VqVaeQuantizer {
 public:
  VqVaeConfig cfg;
  VqVaeStack<float> encoder;
  VqVaeStack<float> decoder;
  Tensor<float> codebook;  // n x h
  std::int64_t trained_steps = 0;

  std::int64_t input_dim() const { return cfg.input_dim; }
  std::int64_t code_dim() const { return cfg.code_dim; }
  std::int64_t vocab_size() const { return cfg.codebook_size; }

  /// Encoder output for a whole stacked sequence, no gradients.
  Tensor<float> encode(const FeatureSequence& seq) const {
    require(seq.dim() == cfg.input_dim, Errc::dim_mismatch, "vqvae encode: frame dim mismatch");
    VarSet<float> cv = encoder.has_core ? leaf_set(encoder.core.set, false) : VarSet<float>{};
    VarSet<float> pv = leaf_set(encoder.proj.set, false);
    Var<float> z = detail::stack_forward(encoder, cv, pv, Var<float>::leaf(seq.frames, false));
    return z.value();
  }

  std::optional<std::int64_t> try_quantize_code(const float* z) const {
    double norm = 0;
    std::vector<double> q(static_cast<std::size_t>(cfg.code_dim));
    for (std::int64_t j = 0; j < cfg.code_dim; ++j) {
      q[static_cast<std::size_t>(j)] = z[j];
      norm += double(z[j]) * z[j];
    }
    norm = std::sqrt(norm);
    if (cfg.l2_normalize) {
      if (norm < 1e-12) return std::nullopt;
      for (auto& v : q) v /= norm;
    }
    std::int64_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < cfg.codebook_size; ++c) {
      const float* row = codebook.data() + c * cfg.code_dim;
      double cn = 1.0;
      if (cfg.l2_normalize) {
        cn = 0;
        for (std::int64_t j = 0; j < cfg.code_dim; ++j) cn += double(row[j]) * row[j];
        cn = std::sqrt(cn);
        if (cn < 1e-12) cn = 1.0;
      }
      double dist = 0;
      for (std::int64_t j = 0; j < cfg.code_dim; ++j) {
        const double cj = cfg.l2_normalize ? row[j] / cn : row[j];
        const double diff = q[static_cast<std::size_t>(j)] - cj;
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    return best;
  }

  /// Nearest codebook row to the encoder output (no l2 normalization unless
  /// configured).
  std::int64_t quantize(const std::vector<float>& x) const {
    require(static_cast<std::int64_t>(x.size()) == cfg.input_dim, Errc::dim_mismatch,
            "vqvae quantize: input dim mismatch");
    FeatureSequence seq;
    seq.frames = Tensor<float>({1, cfg.input_dim});
    for (std::int64_t j = 0; j < cfg.input_dim; ++j) seq.frames.at(0, j) = x[static_cast<std::size_t>(j)];
    Tensor<float> z = encode(seq);
    auto label = try_quantize_code(z.data());
    require(label.has_value(), Errc::degenerate_projection,
            "vqvae: encoder output has near-zero norm under l2 lookup");
    return *label;
  }

  std::vector<std::int64_t> quantize_sequence(const FeatureSequence& seq) const {
    Tensor<float> z = encode(seq);
    std::vector<std::int64_t> labels(static_cast<std::size_t>(z.dim(0)));
    for (std::int64_t t = 0; t < z.dim(0); ++t) {
      auto label = try_quantize_code(z.data() + t * cfg.code_dim);
      require(label.has_value(), Errc::degenerate_projection,
              "vqvae: encoder output has near-zero norm under l2 lookup");
      labels[static_cast<std::size_t>(t)] = *label;
    }
    return labels;
  }

  std::vector<Tensor<float>*> trainable_tensors() {
    std::vector<Tensor<float>*> out;
    if (encoder.has_core)
      for (auto* p : encoder.core.set.pointers()) out.push_back(p);
    for (auto* p : encoder.proj.set.pointers()) out.push_back(p);
    out.push_back(&codebook);
    if (decoder.has_core)
      for (auto* p : decoder.core.set.pointers()) out.push_back(p);
    for (auto* p : decoder.proj.set.pointers()) out.push_back(p);
    return out;
  }
};

inline VqVaeQuantizer init_vqvae(const VqVaeConfig& cfg) {
  cfg.validate();
  VqVaeQuantizer q;
  q.cfg = cfg;
  Rng rng(derive_seed(cfg.seed, 0x8801));
  if (cfg.variant == VqVaeVariant::transformer) {
    q.encoder.has_core = true;
    Rng enc_rng(derive_seed(cfg.seed, 0x8802));
    q.encoder.core = init_encoder_core<float>(cfg.half_config(cfg.input_dim, 0x8803), enc_rng);
    q.encoder.proj = init_linear_head<float>(cfg.d_model, cfg.code_dim, enc_rng, "enc_proj");
    q.decoder.has_core = true;
    Rng dec_rng(derive_seed(cfg.seed, 0x8804));
    q.decoder.core = init_encoder_core<float>(cfg.half_config(cfg.code_dim, 0x8805), dec_rng);
    q.decoder.proj = init_linear_head<float>(cfg.d_model, cfg.input_dim, dec_rng, "dec_proj");
  } else {
    q.encoder.has_core = false;
    q.encoder.proj = init_linear_head<float>(cfg.input_dim, cfg.code_dim, rng, "enc_proj");
    q.decoder.has_core = false;
    q.decoder.proj = init_linear_head<float>(cfg.code_dim, cfg.input_dim, rng, "dec_proj");
  }
  Rng code_rng(derive_seed(cfg.seed, 0x8806));
  q.codebook = Tensor<float>({cfg.codebook_size, cfg.code_dim});
  for (std::int64_t i = 0; i < q.codebook.numel(); ++i)
    q.codebook[i] = static_cast<float>(code_rng.normal());
  return q;
}

struct VqVaeTrainLog {
  std::vector<double> losses;         // per logged step
  std::vector<double> recon_losses;
  double final_loss = 0.0;
  double final_recon = 0.0;
};

/// Straight-through VQ-VAE training: reconstruction + codebook + commitment
/// losses, Adam at a constant learning rate. Deterministic in cfg.seed.
/// Expects normalized, stacked sequences.
inline VqVaeQuantizer train_vqvae(const std::vector<FeatureSequence>& corpus, const VqVaeConfig& cfg,
                                  VqVaeTrainLog* log = nullptr) {
  cfg.validate();
  require(!corpus.empty(), Errc::invalid_input, "train_vqvae: empty corpus");
  for (const auto& seq : corpus)
    require(seq.dim() == cfg.input_dim, Errc::dim_mismatch, "train_vqvae: corpus dim mismatch");

  VqVaeQuantizer q = init_vqvae(cfg);
  auto params = q.trainable_tensors();
  auto adam = AdamState<float>::init(params);

  Rng batch_rng(derive_seed(cfg.seed, 0x8810));
  const float beta = static_cast<float>(cfg.commitment_beta);

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    // leaf everything once per step; per-utterance losses share the leaves
    VarSet<float> enc_core_v = q.encoder.has_core ? leaf_set(q.encoder.core.set, true) : VarSet<float>{};
    VarSet<float> enc_proj_v = leaf_set(q.encoder.proj.set, true);
    Var<float> code_v = Var<float>::leaf(q.codebook, true);
    VarSet<float> dec_core_v = q.decoder.has_core ? leaf_set(q.decoder.core.set, true) : VarSet<float>{};
    VarSet<float> dec_proj_v = leaf_set(q.decoder.proj.set, true);

    double step_loss = 0.0, step_recon = 0.0;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      const auto& seq =
          corpus[batch_rng.uniform_int(static_cast<std::uint64_t>(corpus.size()))];
      Var<float> x = Var<float>::leaf(seq.frames, false);
      Var<float> z_e = detail::stack_forward(q.encoder, enc_core_v, enc_proj_v, x);

      // nearest-code assignment is not differentiated through
      std::vector<std::int64_t> idx(static_cast<std::size_t>(z_e.value().dim(0)));
      for (std::int64_t t = 0; t < z_e.value().dim(0); ++t) {
        auto label = q.try_quantize_code(z_e.value().data() + t * cfg.code_dim);
        idx[static_cast<std::size_t>(t)] = label.value_or(0);
      }
      Var<float> codes = select_rows(code_v, idx);

      Var<float> ste = add(z_e, stopgrad(sub(codes, z_e)));  // straight-through
      Var<float> recon = detail::stack_forward(q.decoder, dec_core_v, dec_proj_v, ste);
      Var<float> recon_loss = mse(recon, x);
      Var<float> codebook_loss = mse(stopgrad(z_e), codes);
      Var<float> commit_loss = scale(mse(z_e, stopgrad(codes)), beta);
      Var<float> loss = add(add(recon_loss, codebook_loss), commit_loss);

      const double lv = loss.scalar_value();
      if (!std::isfinite(lv))
        fail(Errc::training_diverged, "vqvae loss non-finite at step " + std::to_string(step));
      step_loss += lv;
      step_recon += recon_loss.scalar_value();
      backward(loss, 1.0f / static_cast<float>(cfg.batch_size));
    }

    // gradient order must mirror trainable_tensors()
    std::vector<Tensor<float>> grads;
    auto push_grads = [&grads](const VarSet<float>& vs) {
      for (const auto& v : vs.vars)
        grads.push_back(v.has_grad() ? v.grad() : Tensor<float>::zeros(v.value().shape()));
    };
    if (q.encoder.has_core) push_grads(enc_core_v);
    push_grads(enc_proj_v);
    grads.push_back(code_v.has_grad() ? code_v.grad() : Tensor<float>::zeros(q.codebook.shape()));
    if (q.decoder.has_core) push_grads(dec_core_v);
    push_grads(dec_proj_v);

    std::vector<const Tensor<float>*> grad_ptrs;
    grad_ptrs.reserve(grads.size());
    for (const auto& g : grads) grad_ptrs.push_back(&g);
    adam_step(q.trainable_tensors(), grad_ptrs, adam, static_cast<float>(cfg.learning_rate));

    if (log) {
      log->losses.push_back(step_loss / static_cast<double>(cfg.batch_size));
      log->recon_losses.push_back(step_recon / static_cast<double>(cfg.batch_size));
    }
  }
  if (log && !log->losses.empty()) {
    log->final_loss = log->losses.back();
    log->final_recon = log->recon_losses.back();
  }
  q.trained_steps = cfg.steps;
  return q;
}

}  // namespace bestrq
