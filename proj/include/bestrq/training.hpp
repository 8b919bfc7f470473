#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bestrq/checkpoint.hpp"
#include "bestrq/common.hpp"
#include "bestrq/corpus_io.hpp"
#include "bestrq/ctc.hpp"
#include "bestrq/encoder.hpp"
#include "bestrq/masking.hpp"
#include "bestrq/metrics.hpp"
#include "bestrq/optimizer.hpp"
#include "bestrq/quantizer.hpp"
#include "bestrq/synth.hpp"
#include "bestrq/vqvae.hpp"

namespace bestrq {

// ---- quantizer handle ------------------------------------------------------------

/// Either target quantizer behind one face; frozen at training time.
class QuantizerHandle {
 public:
  explicit QuantizerHandle(RandomProjectionQuantizer q) : q_(std::move(q)) {}
  explicit QuantizerHandle(VqVaeQuantizer q) : q_(std::move(q)) {}

  std::int64_t vocab_size() const {
    return std::visit([](const auto& q) { return q.vocab_size(); }, q_);
  }
  std::int64_t input_dim() const {
    return std::visit([](const auto& q) { return q.input_dim(); }, q_);
  }
  std::string kind() const { return std::holds_alternative<RandomProjectionQuantizer>(q_) ? "rpq" : "vqvae"; }

  nlohmann::json spec_json() const {
    if (const auto* rpq = std::get_if<RandomProjectionQuantizer>(&q_)) return rpq_spec_json(*rpq);
    const auto& v = std::get<VqVaeQuantizer>(q_);
    nlohmann::json j = vqvae_config_to_json(v.cfg);
    j["trained_steps"] = v.trained_steps;
    return j;
  }

  /// Labels for a clean stacked sequence; degenerate-projection frames come
  /// back with valid=false and are excluded from the loss by the caller.
  void labels_for(const FeatureSequence& stacked, std::vector<std::int64_t>& labels,
                  std::vector<bool>& valid) const {
    const std::int64_t t = stacked.length();
    labels.assign(static_cast<std::size_t>(t), 0);
    valid.assign(static_cast<std::size_t>(t), true);
    if (const auto* rpq = std::get_if<RandomProjectionQuantizer>(&q_)) {
      require(stacked.dim() == rpq->input_dim(), Errc::dim_mismatch, "quantizer input dim mismatch");
      for (std::int64_t i = 0; i < t; ++i) {
        auto label = rpq->try_quantize(stacked.frames.data() + i * stacked.dim(), stacked.dim());
        if (label) {
          labels[static_cast<std::size_t>(i)] = *label;
        } else {
          valid[static_cast<std::size_t>(i)] = false;
        }
      }
      return;
    }
    const auto& v = std::get<VqVaeQuantizer>(q_);
    Tensor<float> z = v.encode(stacked);
    for (std::int64_t i = 0; i < t; ++i) {
      auto label = v.try_quantize_code(z.data() + i * v.code_dim());
      if (label) {
        labels[static_cast<std::size_t>(i)] = *label;
      } else {
        valid[static_cast<std::size_t>(i)] = false;
      }
    }
  }

 private:
  std::variant<RandomProjectionQuantizer, VqVaeQuantizer> q_;
};

// ---- pre-training ------------------------------------------------------------------

struct RpqSpec {
  std::int64_t code_dim = 16;
  std::int64_t vocab_size = 256;
  std::uint64_t seed = 1;
  bool l2_normalize = true;
};

struct PretrainConfig {
  RpqSpec rpq;  // used unless an external quantizer is injected
  double mask_start_prob = 0.01;
  std::int64_t mask_span_frames = 40;
  double mask_noise_std = 0.1;
  std::int64_t stack = 4;
  EncoderConfig encoder;
  ScheduleConfig schedule{2e-3, 500};
  std::int64_t batch_size = 32;
  std::int64_t total_steps = 3000;
  double data_fraction = 1.0;
  std::uint64_t run_seed = 1;
  std::int64_t metrics_every = 10;
  std::int64_t checkpoint_every = 0;  // 0 = final checkpoint only

  void validate() const {
    require(mask_start_prob >= 0 && mask_start_prob <= 1, Errc::invalid_config,
            "mask_start_prob must be in [0, 1]");
    require(mask_span_frames >= 1, Errc::invalid_config, "mask_span_frames must be >= 1");
    require(mask_noise_std >= 0, Errc::invalid_config, "mask_noise_std must be >= 0");
    require(stack >= 1, Errc::invalid_config, "stack must be >= 1");
    require(batch_size >= 1, Errc::invalid_config, "batch_size must be >= 1");
    require(total_steps >= 0, Errc::invalid_config, "total_steps must be >= 0");
    require(data_fraction > 0 && data_fraction <= 1, Errc::invalid_config,
            "data_fraction must be in (0, 1]");
    require(metrics_every >= 1, Errc::invalid_config, "metrics_every must be >= 1");
    require(checkpoint_every >= 0, Errc::invalid_config, "checkpoint_every must be >= 0");
    encoder.validate();
    schedule.validate();
  }
};

/// One pre-training batch item: the normalized (unstacked) signal and the
/// frozen targets computed from its clean stacked form.
struct PretrainItem {
  const FeatureSequence* seq = nullptr;
  std::vector<std::int64_t> labels;
  std::vector<bool> label_valid;
};

struct PretrainState {
  PretrainConfig cfg;
  QuantizerHandle quantizer;
  EncoderParams<float> params;
  AdamState<float> adam;
  std::int64_t step = 0;

  PretrainState(PretrainConfig c, QuantizerHandle q)
      : cfg(std::move(c)), quantizer(std::move(q)), params(init_encoder<float>(cfg.encoder)) {
    require(cfg.encoder.vocab_size == quantizer.vocab_size(), Errc::invalid_config,
            "encoder vocab_size must equal the quantizer codebook size");
    std::vector<Tensor<float>*> ptrs = params.core.set.pointers();
    for (auto* p : params.head.set.pointers()) ptrs.push_back(p);
    adam = AdamState<float>::init(ptrs);
  }
};

inline PretrainItem make_pretrain_item(const QuantizerHandle& q, const FeatureSequence& normalized,
                                       std::int64_t stack) {
  PretrainItem item;
  item.seq = &normalized;
  FeatureSequence stacked = stack_frames(normalized, stack);
  q.labels_for(stacked, item.labels, item.label_valid);
  return item;
}

/// One optimizer step of masked-label prediction. Targets always come from the
/// clean signal (the labels frozen in the batch items); masking, stacking and
/// the forward pass run on the noise-filled copy.
inline MetricsRow pretrain_step(PretrainState& state, const std::vector<PretrainItem>& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const PretrainConfig& cfg = state.cfg;
  require(!batch.empty(), Errc::invalid_input, "pretrain_step: empty batch");

  VarSet<float> core_vars = leaf_set(state.params.core.set, true);
  VarSet<float> head_vars = leaf_set(state.params.head.set, true);

  double loss_sum = 0.0;
  std::int64_t masked_total = 0, correct_total = 0;
  std::vector<std::int64_t> batch_labels;
  std::int64_t zero_mask_items = 0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PretrainItem& item = batch[i];
    const FeatureSequence& seq = *item.seq;

    const std::uint64_t item_stream =
        derive_seed(derive_seed(cfg.run_seed, 0xA000 + static_cast<std::uint64_t>(state.step)),
                    static_cast<std::uint64_t>(i));
    MaskPlan plan = sample_mask(seq.length(), cfg.mask_start_prob, cfg.mask_span_frames,
                                derive_seed(item_stream, 1));
    MaskedSequence masked = apply_mask(seq, plan, cfg.mask_noise_std, derive_seed(item_stream, 2));
    FeatureSequence stacked_masked = stack_frames(masked.masked, cfg.stack);

    std::vector<bool> label_mask = reduce_mask(plan.mask, cfg.stack);
    require(label_mask.size() == item.labels.size(), Errc::shape_mismatch,
            "pretrain_step: label/mask length mismatch");
    for (std::size_t t = 0; t < label_mask.size(); ++t) {
      if (!item.label_valid[t]) label_mask[t] = false;  // unlabeled frames carry no loss
      if (item.label_valid[t]) batch_labels.push_back(item.labels[t]);
    }

    Var<float> hidden =
        core_forward(state.params.core, core_vars, stacked_masked.frames, cfg.encoder.context);
    Var<float> logits = linear_forward(state.params.head, head_vars, hidden);
    MaskedCeStats stats;
    Var<float> loss = masked_cross_entropy(logits, item.labels, label_mask, &stats);

    const double lv = loss.scalar_value();
    if (!std::isfinite(lv))
      fail(Errc::training_diverged, "pretrain loss non-finite at step " + std::to_string(state.step));
    loss_sum += lv;
    if (stats.accuracy_defined()) {
      masked_total += stats.masked_positions;
      correct_total += stats.correct;
    } else {
      ++zero_mask_items;
    }
    if (loss.requires_grad()) backward(loss, 1.0f / static_cast<float>(batch.size()));
  }

  MetricsRow row;
  row.step = state.step + 1;
  row.loss = loss_sum / static_cast<double>(batch.size());
  row.accuracy_defined = masked_total > 0;
  row.masked_accuracy = masked_total > 0 ? double(correct_total) / double(masked_total) : 0.0;
  if (!batch_labels.empty()) {
    auto util = utilization(batch_labels, state.quantizer.vocab_size());
    row.utilization_defined = true;
    row.codes_used_fraction = util.codes_used_fraction;
    row.normalized_entropy = util.normalized_entropy;
  }
  row.learning_rate = transformer_lr(state.step + 1, cfg.schedule);

  if (masked_total > 0) {
    std::vector<Tensor<float>> grads = collect_grads(core_vars);
    for (auto& g : collect_grads(head_vars)) grads.push_back(std::move(g));
    std::vector<const Tensor<float>*> grad_ptrs;
    grad_ptrs.reserve(grads.size());
    for (const auto& g : grads) grad_ptrs.push_back(&g);
    std::vector<Tensor<float>*> param_ptrs = state.params.core.set.pointers();
    for (auto* p : state.params.head.set.pointers()) param_ptrs.push_back(p);
    adam_step(param_ptrs, grad_ptrs, state.adam, static_cast<float>(row.learning_rate));
  }
  // an all-unmasked batch contributes nothing; the step still counts
  row.zero_mask_items = zero_mask_items;

  state.step += 1;
  row.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
  CorpusStats stats;
};

inline Checkpoint make_checkpoint(const PretrainState& state, const CorpusStats& stats,
                                  const MetricsRow& last) {
  Checkpoint ckpt;
  ckpt.encoder_cfg = state.cfg.encoder;
  ckpt.params = state.params;
  ckpt.quantizer_spec = state.quantizer.spec_json();
  ckpt.step = state.step;
  ckpt.last_metrics = last;
  ckpt.stats = stats;
  return ckpt;
}

/// Full pre-training run over a corpus directory's worth of utterances.
/// Deterministic in (cfg, seeds): the metrics timeline and final checkpoint
/// are byte-identical across repeats.
inline PretrainResult run_pretrain(const PretrainConfig& cfg, const std::vector<Utterance>& corpus,
                                   const QuantizerHandle* quantizer_override = nullptr,
                                   const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  require(!corpus.empty(), Errc::invalid_input, "run_pretrain: empty corpus");

  const std::int64_t effective =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(
                                    cfg.data_fraction * static_cast<double>(corpus.size()))));
  std::vector<FeatureSequence> raw;
  raw.reserve(static_cast<std::size_t>(effective));
  for (std::int64_t i = 0; i < effective; ++i) {
    require(corpus[static_cast<std::size_t>(i)].features.length() >= cfg.stack, Errc::invalid_input,
            "utterance shorter than the stacking factor");
    raw.push_back(corpus[static_cast<std::size_t>(i)].features);
  }
  const CorpusStats stats = compute_stats(raw);
  std::vector<FeatureSequence> normed;
  normed.reserve(raw.size());
  for (const auto& seq : raw) normed.push_back(normalize(seq, stats));

  const std::int64_t d_feature = normed.front().dim();
  require(cfg.encoder.input_dim == cfg.stack * d_feature, Errc::invalid_config,
          "encoder input_dim must equal stack * feature_dim");

  QuantizerHandle quantizer =
      quantizer_override
          ? *quantizer_override
          : QuantizerHandle(RandomProjectionQuantizer(cfg.stack * d_feature, cfg.rpq.code_dim,
                                                      cfg.rpq.vocab_size, cfg.rpq.seed,
                                                      cfg.rpq.l2_normalize));
  require(quantizer.input_dim() == cfg.stack * d_feature, Errc::invalid_config,
          "quantizer input dim must equal stack * feature_dim");

  PretrainState state(cfg, quantizer);

  // targets come from the clean signal once; masking varies per step
  std::vector<PretrainItem> cache;
  cache.reserve(normed.size());
  for (const auto& seq : normed) cache.push_back(make_pretrain_item(state.quantizer, seq, cfg.stack));

  PretrainResult result;
  result.stats = stats;
  MetricsWriter writer;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    writer = MetricsWriter(out_dir / "metrics.csv");
  }

  MetricsRow last;
  last.learning_rate = cfg.total_steps > 0 ? transformer_lr(1, cfg.schedule) : cfg.schedule.peak_lr;
  for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
    Rng batch_rng(derive_seed(cfg.run_seed, 0xB000 + static_cast<std::uint64_t>(step)));
    std::vector<PretrainItem> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (std::int64_t b = 0; b < cfg.batch_size; ++b)
      batch.push_back(cache[batch_rng.uniform_int(cache.size())]);
    MetricsRow row = pretrain_step(state, batch);
    last = row;
    result.metrics.push_back(row);
    const bool log_now = (row.step % cfg.metrics_every == 0) || row.step == cfg.total_steps;
    if (log_now) {
      writer.append(row);
      std::cerr << "[pretrain] step " << row.step << " loss " << format_double(row.loss)
                << (row.accuracy_defined
                        ? " acc " + format_double(row.masked_accuracy)
                        : std::string(" acc n/a"))
                << " lr " << format_double(row.learning_rate) << " wall_ms "
                << format_double(row.wall_time_ms);
      if (row.zero_mask_items > 0)
        std::cerr << " zero_mask_items " << row.zero_mask_items;
      std::cerr << "\n";
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0 &&
        row.step != cfg.total_steps) {
      save_checkpoint(make_checkpoint(state, stats, row),
                      out_dir / ("checkpoint_" + std::to_string(row.step) + ".ckpt"));
    }
  }

  result.checkpoint = make_checkpoint(state, stats, last);
  if (!out_dir.empty()) save_checkpoint(result.checkpoint, out_dir / "checkpoint_final.ckpt");
  return result;
}

// ---- fine-tuning -------------------------------------------------------------------

/// Fine-tuning drops the pre-training softmax head and attaches a fresh
/// projection layer plus a CTC output head (blank is the last class).
struct FinetuneConfig {
  EncoderConfig encoder;  // used from scratch; must agree with the checkpoint core otherwise
  std::int64_t stack = 4;
  std::int64_t task_vocab = 12;
  ScheduleConfig encoder_schedule{6e-4, 1000};
  ScheduleConfig head_schedule{2e-3, 300};
  std::int64_t steps = 800;
  std::int64_t batch_size = 16;
  std::uint64_t seed = 1;
  std::int64_t metrics_every = 25;
  std::optional<ContextMode> context_override;

  void validate(bool pretrained_init) const {
    encoder.validate();
    encoder_schedule.validate();
    head_schedule.validate();
    require(task_vocab >= 1, Errc::invalid_config, "task_vocab must be >= 1");
    require(stack >= 1 && steps >= 0 && batch_size >= 1 && metrics_every >= 1,
            Errc::invalid_config, "finetune run parameters invalid");
    if (pretrained_init)
      require(encoder_schedule.peak_lr <= head_schedule.peak_lr, Errc::invalid_config,
              "encoder peak lr must not exceed the head peak lr when initializing from a checkpoint");
  }
};

struct FinetuneResult {
  double ter = 1.0;
  std::vector<MetricsRow> metrics;
  double initial_loss = 0.0;
  std::int64_t infeasible_items = 0;
};

namespace detail {

struct SupervisedItem {
  Tensor<float> features;  // stacked, normalized
  std::vector<std::int64_t> transcript;
};

inline std::vector<SupervisedItem> prepare_supervised(const std::vector<Utterance>& corpus,
                                                      const CorpusStats& stats, std::int64_t stack,
                                                      std::int64_t task_vocab) {
  std::vector<SupervisedItem> items;
  items.reserve(corpus.size());
  for (const auto& utt : corpus) {
    require(!utt.transcript.empty(), Errc::invalid_input, "utterance with empty transcript: " + utt.id);
    for (auto t : utt.transcript)
      require(t >= 0 && t < task_vocab, Errc::out_of_range_label,
              "transcript token out of range in " + utt.id);
    SupervisedItem item;
    item.features = stack_frames(normalize(utt.features, stats), stack).frames;
    item.transcript = utt.transcript;
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace detail

inline FinetuneResult run_finetune(const FinetuneConfig& cfg, const std::vector<Utterance>& train,
                                   const std::vector<Utterance>& eval_set,
                                   const Checkpoint* init = nullptr,
                                   const CorpusStats* stats_in = nullptr,
                                   const std::filesystem::path& out_dir = {}) {
  cfg.validate(init != nullptr);
  require(!train.empty() && !eval_set.empty(), Errc::invalid_input,
          "run_finetune: train and eval sets must be nonempty");

  EncoderConfig enc_cfg = cfg.encoder;
  EncoderCore<float> core;
  if (init) {
    const EncoderConfig& ck = init->encoder_cfg;
    const bool compatible = ck.num_layers == cfg.encoder.num_layers &&
                            ck.d_model == cfg.encoder.d_model &&
                            ck.num_heads == cfg.encoder.num_heads &&
                            ck.ffn_dim == cfg.encoder.ffn_dim &&
                            ck.input_dim == cfg.encoder.input_dim;
    require(compatible, Errc::invalid_config,
            "checkpoint encoder core does not match the finetune encoder config");
    core = init->params.core;
    enc_cfg = ck;
  } else {
    Rng rng(derive_seed(cfg.encoder.seed, 0x6001));
    core = init_encoder_core<float>(enc_cfg, rng);
  }
  const ContextMode mode = cfg.context_override.value_or(enc_cfg.context);

  // heads are fresh in both the scratch and the pretrained arm
  Rng head_rng(derive_seed(cfg.seed, 0x6F01));
  LinearHead<float> adapter =
      init_linear_head<float>(enc_cfg.d_model, enc_cfg.d_model, head_rng, "adapter");
  LinearHead<float> out_head = init_linear_head<float>(
      enc_cfg.d_model, cfg.task_vocab + 1, head_rng, "ctc_head");
  const std::int64_t blank = cfg.task_vocab;

  CorpusStats stats;
  if (init)
    stats = init->stats;
  else if (stats_in)
    stats = *stats_in;
  else {
    std::vector<FeatureSequence> feats;
    for (const auto& u : train) feats.push_back(u.features);
    stats = compute_stats(feats);
  }

  auto train_items = detail::prepare_supervised(train, stats, cfg.stack, cfg.task_vocab);
  auto eval_items = detail::prepare_supervised(eval_set, stats, cfg.stack, cfg.task_vocab);

  AdamState<float> enc_adam = AdamState<float>::init(core.set.pointers());
  std::vector<Tensor<float>*> head_ptrs = adapter.set.pointers();
  for (auto* p : out_head.set.pointers()) head_ptrs.push_back(p);
  AdamState<float> head_adam = AdamState<float>::init(head_ptrs);

  FinetuneResult result;
  MetricsWriter writer;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    writer = MetricsWriter(out_dir / "metrics.csv");
  }

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    VarSet<float> core_vars = leaf_set(core.set, true);
    VarSet<float> adapter_vars = leaf_set(adapter.set, true);
    VarSet<float> out_vars = leaf_set(out_head.set, true);

    Rng batch_rng(derive_seed(cfg.seed, 0xD000 + static_cast<std::uint64_t>(step)));
    double loss_sum = 0.0;
    std::int64_t used = 0;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      const auto& item = train_items[batch_rng.uniform_int(train_items.size())];
      if (ctc_min_frames(item.transcript) > item.features.dim(0)) {
        ++result.infeasible_items;
        continue;
      }
      Var<float> hidden = core_forward(core, core_vars, item.features, mode);
      Var<float> logits = linear_forward(out_head, out_vars,
                                         linear_forward(adapter, adapter_vars, hidden));
      Var<float> loss = ctc_loss_op(logits, item.transcript, blank);
      const double lv = loss.scalar_value();
      if (!std::isfinite(lv))
        fail(Errc::training_diverged, "finetune loss non-finite at step " + std::to_string(step));
      loss_sum += lv;
      ++used;
      backward(loss, 1.0f / static_cast<float>(cfg.batch_size));
    }

    MetricsRow row;
    row.step = step + 1;
    row.loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;
    row.learning_rate = transformer_lr(step + 1, cfg.head_schedule);
    if (step == 0) result.initial_loss = row.loss;

    if (used > 0) {
      std::vector<Tensor<float>> enc_grads = collect_grads(core_vars);
      std::vector<const Tensor<float>*> enc_gp;
      for (const auto& g : enc_grads) enc_gp.push_back(&g);
      adam_step(core.set.pointers(), enc_gp, enc_adam,
                static_cast<float>(transformer_lr(step + 1, cfg.encoder_schedule)));

      std::vector<Tensor<float>> head_grads = collect_grads(adapter_vars);
      for (auto& g : collect_grads(out_vars)) head_grads.push_back(std::move(g));
      std::vector<const Tensor<float>*> head_gp;
      for (const auto& g : head_grads) head_gp.push_back(&g);
      std::vector<Tensor<float>*> hp = adapter.set.pointers();
      for (auto* p : out_head.set.pointers()) hp.push_back(p);
      adam_step(hp, head_gp, head_adam, static_cast<float>(row.learning_rate));
    }

    row.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(row);
    if (row.step % cfg.metrics_every == 0 || row.step == cfg.steps) {
      writer.append(row);
      std::cerr << "[finetune] step " << row.step << " loss " << format_double(row.loss)
                << " lr_head " << format_double(row.learning_rate) << " wall_ms "
                << format_double(row.wall_time_ms) << "\n";
    }
  }

  // token error rate on the held-out set, greedy decode
  VarSet<float> core_vars = leaf_set(core.set, false);
  VarSet<float> adapter_vars = leaf_set(adapter.set, false);
  VarSet<float> out_vars = leaf_set(out_head.set, false);
  std::vector<std::vector<std::int64_t>> hyps, refs;
  for (const auto& item : eval_items) {
    Var<float> hidden = core_forward(core, core_vars, item.features, mode);
    Var<float> logits =
        linear_forward(out_head, out_vars, linear_forward(adapter, adapter_vars, hidden));
    hyps.push_back(greedy_ctc_decode(logits.value(), blank));
    refs.push_back(item.transcript);
  }
  result.ter = token_error_rate(hyps, refs);
  return result;
}

// ---- direct-ASR quantizer-quality probe ------------------------------------------------

/// Trains a small recognizer whose only input is the quantized label sequence;
/// its error rate measures how much task signal the labels preserve.
struct ProbeConfig {
  std::int64_t embed_dim = 32;
  EncoderConfig encoder;  // input_dim must equal embed_dim
  ScheduleConfig schedule{2e-3, 200};
  std::int64_t steps = 600;
  std::int64_t batch_size = 16;
  std::int64_t stack = 4;
  std::int64_t task_vocab = 12;
  std::uint64_t seed = 1;
  bool shuffle_pairing = false;  // control: destroys the label/transcript link

  void validate() const {
    encoder.validate();
    schedule.validate();
    require(embed_dim >= 1 && embed_dim == encoder.input_dim, Errc::invalid_config,
            "probe encoder input_dim must equal embed_dim");
    require(task_vocab >= 1 && stack >= 1 && steps >= 0 && batch_size >= 1, Errc::invalid_config,
            "probe run parameters invalid");
  }
};

struct ProbeResult {
  double ter = 1.0;
  double final_loss = 0.0;
  std::int64_t infeasible_items = 0;
};

inline ProbeResult direct_asr_probe(const QuantizerHandle& quantizer,
                                    const std::vector<Utterance>& train,
                                    const std::vector<Utterance>& eval_set, const ProbeConfig& cfg,
                                    const CorpusStats& stats) {
  cfg.validate();
  require(!train.empty() && !eval_set.empty(), Errc::invalid_input,
          "direct_asr_probe: train and eval sets must be nonempty");

  struct LabeledItem {
    std::vector<std::int64_t> labels;
    std::vector<std::int64_t> transcript;
  };
  auto label_items = [&](const std::vector<Utterance>& corpus) {
    std::vector<LabeledItem> items;
    items.reserve(corpus.size());
    for (const auto& utt : corpus) {
      LabeledItem item;
      FeatureSequence stacked = stack_frames(normalize(utt.features, stats), cfg.stack);
      std::vector<bool> valid;
      quantizer.labels_for(stacked, item.labels, valid);  // degenerate frames keep label 0
      item.transcript = utt.transcript;
      items.push_back(std::move(item));
    }
    return items;
  };
  auto train_items = label_items(train);
  auto eval_items = label_items(eval_set);

  if (cfg.shuffle_pairing) {
    // deterministic Fisher-Yates over the transcripts only
    Rng rng(derive_seed(cfg.seed, 0xC0DE));
    for (std::size_t i = train_items.size(); i > 1; --i) {
      const std::size_t j = rng.uniform_int(i);
      std::swap(train_items[i - 1].transcript, train_items[j].transcript);
    }
  }

  Rng init_rng(derive_seed(cfg.seed, 0x9E01));
  Tensor<float> embedding =
      detail::xavier_uniform<float>(quantizer.vocab_size(), cfg.embed_dim, init_rng);
  EncoderCore<float> core = init_encoder_core<float>(cfg.encoder, init_rng);
  LinearHead<float> out_head =
      init_linear_head<float>(cfg.encoder.d_model, cfg.task_vocab + 1, init_rng, "ctc_head");
  const std::int64_t blank = cfg.task_vocab;

  std::vector<Tensor<float>*> params{&embedding};
  for (auto* p : core.set.pointers()) params.push_back(p);
  for (auto* p : out_head.set.pointers()) params.push_back(p);
  AdamState<float> adam = AdamState<float>::init(params);

  ProbeResult result;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Var<float> emb_var = Var<float>::leaf(embedding, true);
    VarSet<float> core_vars = leaf_set(core.set, true);
    VarSet<float> out_vars = leaf_set(out_head.set, true);

    Rng batch_rng(derive_seed(cfg.seed, 0xE000 + static_cast<std::uint64_t>(step)));
    double loss_sum = 0.0;
    std::int64_t used = 0;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      const auto& item = train_items[batch_rng.uniform_int(train_items.size())];
      if (ctc_min_frames(item.transcript) > static_cast<std::int64_t>(item.labels.size())) {
        ++result.infeasible_items;
        continue;
      }
      Var<float> input = select_rows(emb_var, item.labels);
      Var<float> hidden = core_forward(core, core_vars, input, ContextMode::full_context());
      Var<float> logits = linear_forward(out_head, out_vars, hidden);
      Var<float> loss = ctc_loss_op(logits, item.transcript, blank);
      const double lv = loss.scalar_value();
      if (!std::isfinite(lv))
        fail(Errc::training_diverged, "probe loss non-finite at step " + std::to_string(step));
      loss_sum += lv;
      ++used;
      backward(loss, 1.0f / static_cast<float>(cfg.batch_size));
    }
    result.final_loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;

    if (used > 0) {
      std::vector<Tensor<float>> grads;
      grads.push_back(emb_var.has_grad() ? emb_var.grad() : Tensor<float>::zeros(embedding.shape()));
      for (auto& g : collect_grads(core_vars)) grads.push_back(std::move(g));
      for (auto& g : collect_grads(out_vars)) grads.push_back(std::move(g));
      std::vector<const Tensor<float>*> gp;
      for (const auto& g : grads) gp.push_back(&g);
      adam_step(params, gp, adam, static_cast<float>(transformer_lr(step + 1, cfg.schedule)));
    }
  }

  Var<float> emb_var = Var<float>::leaf(embedding, false);
  VarSet<float> core_vars = leaf_set(core.set, false);
  VarSet<float> out_vars = leaf_set(out_head.set, false);
  std::vector<std::vector<std::int64_t>> hyps, refs;
  for (const auto& item : eval_items) {
    Var<float> input = select_rows(emb_var, item.labels);
    Var<float> hidden = core_forward(core, core_vars, input, ContextMode::full_context());
    Var<float> logits = linear_forward(out_head, out_vars, hidden);
    hyps.push_back(greedy_ctc_decode(logits.value(), blank));
    refs.push_back(item.transcript);
  }
  result.ter = token_error_rate(hyps, refs);
  return result;
}

// ---- data-size scaling experiment ------------------------------------------------------

struct ScalingConfig {
  PretrainConfig pretrain;  // template; data_fraction is set per point
  VqVaeConfig tvae;         // trained on the same fraction as the pretrain
  FinetuneConfig finetune;
};

struct ScalingRow {
  std::string quantizer_kind;  // "rpq" | "tvae"
  double fraction = 1.0;
  double ter = 1.0;
};

inline std::string scaling_csv(const std::vector<ScalingRow>& rows) {
  std::string out = "quantizer,fraction,ter\n";
  for (const auto& r : rows)
    out += r.quantizer_kind + "," + format_double(r.fraction) + "," + format_double(r.ter) + "\n";
  return out;
}

/// For each fraction: pre-train + fine-tune once with the random-projection
/// quantizer and once with a transformer VQ-VAE trained on that same fraction.
inline std::vector<ScalingRow> data_scaling_experiment(const std::vector<double>& fractions,
                                                       const ScalingConfig& cfg,
                                                       const std::vector<Utterance>& pretrain_corpus,
                                                       const std::vector<Utterance>& ft_train,
                                                       const std::vector<Utterance>& ft_eval) {
  require(!fractions.empty(), Errc::invalid_input, "scaling: no fractions given");
  for (double f : fractions)
    require(f > 0.0 && f <= 1.0, Errc::invalid_input, "scaling fractions must lie in (0, 1]");

  std::vector<ScalingRow> rows;
  for (double fraction : fractions) {
    PretrainConfig pcfg = cfg.pretrain;
    pcfg.data_fraction = fraction;

    std::cerr << "[scaling] fraction " << format_double(fraction) << ": rpq arm\n";
    PretrainResult rpq_pre = run_pretrain(pcfg, pretrain_corpus);
    FinetuneResult rpq_ft = run_finetune(cfg.finetune, ft_train, ft_eval, &rpq_pre.checkpoint);
    rows.push_back({"rpq", fraction, rpq_ft.ter});

    std::cerr << "[scaling] fraction " << format_double(fraction) << ": tvae arm\n";
    const std::int64_t effective = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(fraction * double(pretrain_corpus.size()))));
    std::vector<FeatureSequence> subset;
    for (std::int64_t i = 0; i < effective; ++i)
      subset.push_back(pretrain_corpus[static_cast<std::size_t>(i)].features);
    const CorpusStats stats = compute_stats(subset);
    std::vector<FeatureSequence> stacked;
    for (const auto& seq : subset)
      stacked.push_back(stack_frames(normalize(seq, stats), cfg.pretrain.stack));
    VqVaeQuantizer tvae = train_vqvae(stacked, cfg.tvae);
    QuantizerHandle handle{std::move(tvae)};
    PretrainResult tvae_pre = run_pretrain(pcfg, pretrain_corpus, &handle);
    FinetuneResult tvae_ft = run_finetune(cfg.finetune, ft_train, ft_eval, &tvae_pre.checkpoint);
    rows.push_back({"tvae", fraction, tvae_ft.ter});
  }
  return rows;
}

}  // namespace bestrq
