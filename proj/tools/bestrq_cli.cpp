// bestrq command-line driver: every pipeline stage as a subcommand with JSON
// configs, explicit seeds, and machine-readable outputs. Logs go to stderr,
// data to files and stdout.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "bestrq/checkpoint.hpp"
#include "bestrq/corpus_io.hpp"
#include "bestrq/gradcheck.hpp"
#include "bestrq/latency.hpp"
#include "bestrq/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bestrq;

namespace {

// exit codes: 0 ok, 2 usage, 3 invalid config/input, 4 I/O or file-format, 5 numeric/training
int exit_code_for(Errc code) {
  switch (code) {
    case Errc::invalid_config:
    case Errc::invalid_input:
    case Errc::precondition:
    case Errc::shape_mismatch:
    case Errc::dim_mismatch:
    case Errc::out_of_range_label:
      return 3;
    case Errc::io_error:
    case Errc::parse_error:
    case Errc::malformed_header:
    case Errc::truncated_payload:
    case Errc::corrupt_file:
    case Errc::version_mismatch:
    case Errc::config_hash_mismatch:
    case Errc::duplicate_id:
      return 4;
    default:
      return 5;
  }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  require(j.is_object(), Errc::invalid_config, ctx + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= (key == a);
    require(ok, Errc::invalid_config, "unknown key '" + key + "' in " + ctx);
  }
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::io_error, "cannot open config: " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    fail(Errc::parse_error, "config " + path + ": " + e.what());
  }
}

fs::path resolve_out_dir(const std::string& out_flag, const std::string& subcommand) {
  if (!out_flag.empty()) return out_flag;
  const char* root = std::getenv("BESTRQ_OUT");
  return fs::path(root ? root : "out") / subcommand;
}

void write_resolved_config(const fs::path& out_dir, const json& resolved) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "resolved_config.json");
  require(static_cast<bool>(os), Errc::io_error, "cannot write resolved config");
  os << resolved.dump(2) << "\n";
}

// ---- config parsers (defaults + strict keys) -------------------------------

SyntheticTaskSpec parse_task(const json& j) {
  check_keys(j,
             {"token_vocab_size", "frames_per_token", "feature_dim", "emission_noise_std",
              "transition_order", "min_utterance_tokens", "max_utterance_tokens", "frame_stride_ms"},
             "task");
  SyntheticTaskSpec spec;
  spec.token_vocab_size = j.value("token_vocab_size", spec.token_vocab_size);
  spec.frames_per_token = j.value("frames_per_token", spec.frames_per_token);
  spec.feature_dim = j.value("feature_dim", spec.feature_dim);
  spec.emission_noise_std = j.value("emission_noise_std", spec.emission_noise_std);
  spec.transition_order = j.value("transition_order", spec.transition_order);
  spec.min_utterance_tokens = j.value("min_utterance_tokens", spec.min_utterance_tokens);
  spec.max_utterance_tokens = j.value("max_utterance_tokens", spec.max_utterance_tokens);
  spec.frame_stride_ms = j.value("frame_stride_ms", spec.frame_stride_ms);
  spec.validate();
  return spec;
}

json task_to_json(const SyntheticTaskSpec& s) {
  return {{"token_vocab_size", s.token_vocab_size},
          {"frames_per_token", s.frames_per_token},
          {"feature_dim", s.feature_dim},
          {"emission_noise_std", s.emission_noise_std},
          {"transition_order", s.transition_order},
          {"min_utterance_tokens", s.min_utterance_tokens},
          {"max_utterance_tokens", s.max_utterance_tokens},
          {"frame_stride_ms", s.frame_stride_ms}};
}

ContextMode parse_context(const json& j) {
  check_keys(j, {"kind", "left_window", "right_window"}, "context");
  ContextMode base;
  json full = {{"kind", j.value("kind", "full")},
               {"left_window", j.value("left_window", base.left_window)},
               {"right_window", j.value("right_window", std::int64_t(-1))}};
  // default right window depends on the kind
  if (full["right_window"].get<std::int64_t>() == -1)
    full["right_window"] = full["kind"] == "causal_lookahead" ? 3 : 0;
  return context_mode_from_json(full);
}

EncoderConfig parse_encoder(const json& j, EncoderConfig cfg) {
  check_keys(j,
             {"num_layers", "d_model", "num_heads", "ffn_dim", "input_dim", "vocab_size", "context",
              "seed"},
             "encoder");
  cfg.num_layers = j.value("num_layers", cfg.num_layers);
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.num_heads = j.value("num_heads", cfg.num_heads);
  cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
  cfg.input_dim = j.value("input_dim", cfg.input_dim);
  cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
  if (j.contains("context")) cfg.context = parse_context(j["context"]);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

ScheduleConfig parse_schedule(const json& j, ScheduleConfig cfg) {
  check_keys(j, {"peak_lr", "warmup_steps"}, "schedule");
  cfg.peak_lr = j.value("peak_lr", cfg.peak_lr);
  cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
  cfg.validate();
  return cfg;
}

json schedule_to_json(const ScheduleConfig& s) {
  return {{"peak_lr", s.peak_lr}, {"warmup_steps", s.warmup_steps}};
}

RpqSpec parse_rpq(const json& j, RpqSpec spec) {
  check_keys(j, {"kind", "code_dim", "vocab_size", "seed", "l2_normalize"}, "quantizer");
  spec.code_dim = j.value("code_dim", spec.code_dim);
  spec.vocab_size = j.value("vocab_size", spec.vocab_size);
  spec.seed = j.value("seed", spec.seed);
  spec.l2_normalize = j.value("l2_normalize", spec.l2_normalize);
  return spec;
}

VqVaeConfig parse_vqvae(const json& j, VqVaeConfig cfg) {
  check_keys(j,
             {"kind", "variant", "input_dim", "code_dim", "codebook_size", "l2_normalize",
              "num_layers", "d_model", "num_heads", "ffn_dim", "learning_rate", "commitment_beta",
              "steps", "batch_size", "seed"},
             "vqvae");
  if (j.contains("variant")) {
    const std::string v = j["variant"].get<std::string>();
    require(v == "projection" || v == "transformer", Errc::invalid_config,
            "vqvae variant must be projection|transformer");
    cfg.variant = v == "projection" ? VqVaeVariant::projection : VqVaeVariant::transformer;
  }
  cfg.input_dim = j.value("input_dim", cfg.input_dim);
  cfg.code_dim = j.value("code_dim", cfg.code_dim);
  cfg.codebook_size = j.value("codebook_size", cfg.codebook_size);
  cfg.l2_normalize = j.value("l2_normalize", cfg.l2_normalize);
  cfg.num_layers = j.value("num_layers", cfg.num_layers);
  cfg.d_model = j.value("d_model", cfg.d_model);
  cfg.num_heads = j.value("num_heads", cfg.num_heads);
  cfg.ffn_dim = j.value("ffn_dim", cfg.ffn_dim);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.commitment_beta = j.value("commitment_beta", cfg.commitment_beta);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

PretrainConfig parse_pretrain(const json& j) {
  check_keys(j,
             {"corpus", "quantizer", "quantizer_file", "mask_start_prob", "mask_span_frames",
              "mask_noise_std", "stack", "encoder", "schedule", "batch_size", "total_steps",
              "data_fraction", "run_seed", "metrics_every", "checkpoint_every"},
             "pretrain config");
  PretrainConfig cfg;
  if (j.contains("quantizer")) cfg.rpq = parse_rpq(j["quantizer"], cfg.rpq);
  cfg.mask_start_prob = j.value("mask_start_prob", cfg.mask_start_prob);
  cfg.mask_span_frames = j.value("mask_span_frames", cfg.mask_span_frames);
  cfg.mask_noise_std = j.value("mask_noise_std", cfg.mask_noise_std);
  cfg.stack = j.value("stack", cfg.stack);
  if (j.contains("encoder")) cfg.encoder = parse_encoder(j["encoder"], cfg.encoder);
  if (j.contains("schedule")) cfg.schedule = parse_schedule(j["schedule"], cfg.schedule);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.total_steps = j.value("total_steps", cfg.total_steps);
  cfg.data_fraction = j.value("data_fraction", cfg.data_fraction);
  cfg.run_seed = j.value("run_seed", cfg.run_seed);
  cfg.metrics_every = j.value("metrics_every", cfg.metrics_every);
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.validate();
  return cfg;
}

json pretrain_to_json(const PretrainConfig& cfg) {
  return {{"quantizer",
           {{"kind", "rpq"},
            {"code_dim", cfg.rpq.code_dim},
            {"vocab_size", cfg.rpq.vocab_size},
            {"seed", cfg.rpq.seed},
            {"l2_normalize", cfg.rpq.l2_normalize}}},
          {"mask_start_prob", cfg.mask_start_prob},
          {"mask_span_frames", cfg.mask_span_frames},
          {"mask_noise_std", cfg.mask_noise_std},
          {"stack", cfg.stack},
          {"encoder", encoder_config_to_json(cfg.encoder)},
          {"schedule", schedule_to_json(cfg.schedule)},
          {"batch_size", cfg.batch_size},
          {"total_steps", cfg.total_steps},
          {"data_fraction", cfg.data_fraction},
          {"run_seed", cfg.run_seed},
          {"metrics_every", cfg.metrics_every},
          {"checkpoint_every", cfg.checkpoint_every}};
}

FinetuneConfig parse_finetune(const json& j) {
  check_keys(j,
             {"train_corpus", "eval_corpus", "init_checkpoint", "encoder", "stack", "task_vocab",
              "encoder_schedule", "head_schedule", "steps", "batch_size", "seed", "metrics_every",
              "context"},
             "finetune config");
  FinetuneConfig cfg;
  if (j.contains("encoder")) cfg.encoder = parse_encoder(j["encoder"], cfg.encoder);
  cfg.stack = j.value("stack", cfg.stack);
  cfg.task_vocab = j.value("task_vocab", cfg.task_vocab);
  if (j.contains("encoder_schedule"))
    cfg.encoder_schedule = parse_schedule(j["encoder_schedule"], cfg.encoder_schedule);
  if (j.contains("head_schedule"))
    cfg.head_schedule = parse_schedule(j["head_schedule"], cfg.head_schedule);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.metrics_every = j.value("metrics_every", cfg.metrics_every);
  if (j.contains("context")) cfg.context_override = parse_context(j["context"]);
  return cfg;
}

json finetune_to_json(const FinetuneConfig& cfg) {
  json j = {{"encoder", encoder_config_to_json(cfg.encoder)},
            {"stack", cfg.stack},
            {"task_vocab", cfg.task_vocab},
            {"encoder_schedule", schedule_to_json(cfg.encoder_schedule)},
            {"head_schedule", schedule_to_json(cfg.head_schedule)},
            {"steps", cfg.steps},
            {"batch_size", cfg.batch_size},
            {"seed", cfg.seed},
            {"metrics_every", cfg.metrics_every}};
  if (cfg.context_override) j["context"] = context_mode_to_json(*cfg.context_override);
  return j;
}

QuantizerHandle make_quantizer(const json& quantizer_cfg, const std::string& quantizer_file,
                               std::int64_t input_dim) {
  if (!quantizer_file.empty()) {
    auto loaded = load_quantizer(quantizer_file);
    if (loaded.is_rpq) return QuantizerHandle(*loaded.rpq);
    return QuantizerHandle(*loaded.vqvae);
  }
  RpqSpec spec = parse_rpq(quantizer_cfg, RpqSpec{});
  return QuantizerHandle(
      RandomProjectionQuantizer(input_dim, spec.code_dim, spec.vocab_size, spec.seed, spec.l2_normalize));
}

struct CorpusWithStats {
  std::vector<Utterance> utterances;
  CorpusStats stats;
};

CorpusWithStats load_corpus_with_stats(const std::string& corpus_dir, const std::string& stats_file) {
  CorpusWithStats out;
  out.utterances = read_corpus(corpus_dir);
  if (!stats_file.empty()) {
    out.stats = read_stats(stats_file);
  } else {
    std::vector<FeatureSequence> feats;
    for (const auto& u : out.utterances) feats.push_back(u.features);
    out.stats = compute_stats(feats);
  }
  return out;
}

// ---- subcommands -------------------------------------------------------------

int cmd_synth(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
              const std::string& out_flag, std::int64_t count_flag, std::int64_t start_flag) {
  json cfg_json = load_config(config_path);
  check_keys(cfg_json, {"task", "count", "seed", "start_index"}, "synth config");
  SyntheticTaskSpec task = parse_task(cfg_json.value("task", json::object()));
  std::int64_t count = count_flag > 0 ? count_flag : cfg_json.value("count", std::int64_t(64));
  std::uint64_t seed = seed_flag.value_or(cfg_json.value("seed", std::uint64_t(1)));
  std::int64_t start = start_flag >= 0 ? start_flag : cfg_json.value("start_index", std::int64_t(0));

  fs::path out_dir = resolve_out_dir(out_flag, "synth");
  auto corpus = synth_corpus(task, count, seed, start);
  write_corpus(corpus, out_dir);
  write_resolved_config(out_dir, {{"task", task_to_json(task)},
                                  {"count", count},
                                  {"seed", seed},
                                  {"start_index", start}});
  std::cerr << "[synth] wrote " << corpus.size() << " utterances to " << out_dir << "\n";
  std::cout << json({{"corpus", out_dir.string()}, {"utterances", corpus.size()}}).dump() << "\n";
  return 0;
}

int cmd_stats(const std::string& corpus_dir, const std::string& out_flag) {
  require(!corpus_dir.empty(), Errc::invalid_config, "stats: --corpus is required");
  auto corpus = read_corpus(corpus_dir);
  std::vector<FeatureSequence> feats;
  for (const auto& u : corpus) feats.push_back(u.features);
  CorpusStats stats = compute_stats(feats);
  json j = {{"mean", stats.mean}, {"std", stats.std}, {"utterances", corpus.size()}};
  std::cout << j.dump() << "\n";
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    write_stats(stats, fs::path(out_flag) / "stats.json");
  }
  return 0;
}

int cmd_quantize(const std::string& config_path, const std::string& corpus_dir,
                 const std::string& quantizer_file, const std::string& stats_file,
                 const std::string& out_flag) {
  json cfg_json = load_config(config_path);
  check_keys(cfg_json, {"stack", "quantizer"}, "quantize config");
  require(!corpus_dir.empty(), Errc::invalid_config, "quantize: --corpus is required");
  const std::int64_t stack = cfg_json.value("stack", std::int64_t(4));
  auto data = load_corpus_with_stats(corpus_dir, stats_file);
  const std::int64_t d = data.utterances.front().features.dim();
  QuantizerHandle q =
      make_quantizer(cfg_json.value("quantizer", json::object()), quantizer_file, stack * d);

  fs::path out_dir = resolve_out_dir(out_flag, "quantize");
  fs::create_directories(out_dir);
  std::ofstream os(out_dir / "labels.jsonl");
  require(static_cast<bool>(os), Errc::io_error, "cannot write labels.jsonl");
  for (const auto& utt : data.utterances) {
    FeatureSequence stacked = stack_frames(normalize(utt.features, data.stats), stack);
    std::vector<std::int64_t> labels;
    std::vector<bool> valid;
    q.labels_for(stacked, labels, valid);
    os << json({{"id", utt.id}, {"labels", labels}}).dump() << "\n";
  }
  write_resolved_config(out_dir, {{"corpus", corpus_dir},
                                  {"stack", stack},
                                  {"quantizer", quantizer_file.empty()
                                                    ? q.spec_json()
                                                    : json(quantizer_file)}});
  std::cerr << "[quantize] labeled " << data.utterances.size() << " utterances\n";
  std::cout << json({{"labels", (out_dir / "labels.jsonl").string()}}).dump() << "\n";
  return 0;
}

int cmd_probe_codebook(const std::string& config_path, const std::string& corpus_dir,
                       const std::string& quantizer_file, const std::string& stats_file,
                       bool with_histogram) {
  json cfg_json = load_config(config_path);
  check_keys(cfg_json, {"stack", "quantizer"}, "probe-codebook config");
  require(!corpus_dir.empty(), Errc::invalid_config, "probe-codebook: --corpus is required");
  const std::int64_t stack = cfg_json.value("stack", std::int64_t(4));
  auto data = load_corpus_with_stats(corpus_dir, stats_file);
  const std::int64_t d = data.utterances.front().features.dim();
  QuantizerHandle q =
      make_quantizer(cfg_json.value("quantizer", json::object()), quantizer_file, stack * d);

  std::vector<std::int64_t> all_labels;
  for (const auto& utt : data.utterances) {
    FeatureSequence stacked = stack_frames(normalize(utt.features, data.stats), stack);
    std::vector<std::int64_t> labels;
    std::vector<bool> valid;
    q.labels_for(stacked, labels, valid);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (valid[i]) all_labels.push_back(labels[i]);
  }
  auto report = utilization(all_labels, q.vocab_size());
  json j = {{"codes_used_fraction", report.codes_used_fraction},
            {"normalized_entropy", report.normalized_entropy},
            {"total_labels", report.total_labels},
            {"codebook_size", q.vocab_size()}};
  if (with_histogram) j["histogram"] = report.histogram;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                 const std::string& out_flag, std::string quantizer_file) {
  json cfg_json = load_config(config_path);
  require(cfg_json.contains("corpus"), Errc::invalid_config, "pretrain config needs \"corpus\"");
  PretrainConfig cfg = parse_pretrain(cfg_json);
  if (seed_flag) cfg.run_seed = *seed_flag;
  const std::string corpus_dir = cfg_json["corpus"].get<std::string>();
  auto corpus = read_corpus(corpus_dir);

  if (quantizer_file.empty()) quantizer_file = cfg_json.value("quantizer_file", std::string());
  std::optional<QuantizerHandle> override_q;
  if (!quantizer_file.empty()) {
    auto loaded = load_quantizer(quantizer_file);
    override_q = loaded.is_rpq ? QuantizerHandle(*loaded.rpq) : QuantizerHandle(*loaded.vqvae);
  }

  fs::path out_dir = resolve_out_dir(out_flag, "pretrain");
  json resolved = pretrain_to_json(cfg);
  resolved["corpus"] = corpus_dir;
  if (!quantizer_file.empty()) resolved["quantizer_file"] = quantizer_file;
  write_resolved_config(out_dir, resolved);

  auto result = run_pretrain(cfg, corpus, override_q ? &*override_q : nullptr, out_dir);
  write_stats(result.stats, out_dir / "stats.json");
  const MetricsRow& last = result.checkpoint.last_metrics;
  json summary = {{"steps", result.checkpoint.step},
                  {"final_loss", last.loss},
                  {"checkpoint", (out_dir / "checkpoint_final.ckpt").string()}};
  if (last.accuracy_defined) summary["final_masked_accuracy"] = last.masked_accuracy;
  if (last.utilization_defined) {
    summary["codes_used_fraction"] = last.codes_used_fraction;
    summary["normalized_entropy"] = last.normalized_entropy;
  }
  std::ofstream rs(out_dir / "result.json");
  rs << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_finetune(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                 const std::string& out_flag) {
  json cfg_json = load_config(config_path);
  require(cfg_json.contains("train_corpus") && cfg_json.contains("eval_corpus"),
          Errc::invalid_config, "finetune config needs train_corpus and eval_corpus");
  FinetuneConfig cfg = parse_finetune(cfg_json);
  if (seed_flag) cfg.seed = *seed_flag;
  auto train = read_corpus(cfg_json["train_corpus"].get<std::string>());
  auto eval_set = read_corpus(cfg_json["eval_corpus"].get<std::string>());

  std::optional<Checkpoint> init;
  if (cfg_json.contains("init_checkpoint") && !cfg_json["init_checkpoint"].get<std::string>().empty())
    init = load_checkpoint(cfg_json["init_checkpoint"].get<std::string>());

  fs::path out_dir = resolve_out_dir(out_flag, "finetune");
  json resolved = finetune_to_json(cfg);
  resolved["train_corpus"] = cfg_json["train_corpus"];
  resolved["eval_corpus"] = cfg_json["eval_corpus"];
  if (init) resolved["init_checkpoint"] = cfg_json["init_checkpoint"];
  write_resolved_config(out_dir, resolved);

  auto result = run_finetune(cfg, train, eval_set, init ? &*init : nullptr, nullptr, out_dir);
  json summary = {{"ter", result.ter},
                  {"steps", cfg.steps},
                  {"initial_loss", result.initial_loss},
                  {"final_loss", result.metrics.empty() ? 0.0 : result.metrics.back().loss},
                  {"infeasible_items", result.infeasible_items}};
  std::ofstream rs(out_dir / "result.json");
  rs << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_direct_asr(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                   const std::string& out_flag, const std::string& quantizer_file) {
  json cfg_json = load_config(config_path);
  check_keys(cfg_json,
             {"train_corpus", "eval_corpus", "quantizer", "embed_dim", "encoder", "schedule",
              "steps", "batch_size", "stack", "task_vocab", "seed", "shuffle_pairing"},
             "direct-asr config");
  require(cfg_json.contains("train_corpus") && cfg_json.contains("eval_corpus"),
          Errc::invalid_config, "direct-asr config needs train_corpus and eval_corpus");
  ProbeConfig cfg;
  cfg.embed_dim = cfg_json.value("embed_dim", cfg.embed_dim);
  cfg.encoder.num_layers = 2;
  cfg.encoder.d_model = 64;
  cfg.encoder.num_heads = 4;
  cfg.encoder.ffn_dim = 256;
  cfg.encoder.input_dim = cfg.embed_dim;
  cfg.encoder.vocab_size = 1;
  if (cfg_json.contains("encoder")) cfg.encoder = parse_encoder(cfg_json["encoder"], cfg.encoder);
  if (cfg_json.contains("schedule")) cfg.schedule = parse_schedule(cfg_json["schedule"], cfg.schedule);
  cfg.steps = cfg_json.value("steps", cfg.steps);
  cfg.batch_size = cfg_json.value("batch_size", cfg.batch_size);
  cfg.stack = cfg_json.value("stack", cfg.stack);
  cfg.task_vocab = cfg_json.value("task_vocab", cfg.task_vocab);
  cfg.seed = cfg_json.value("seed", cfg.seed);
  cfg.shuffle_pairing = cfg_json.value("shuffle_pairing", false);
  if (seed_flag) cfg.seed = *seed_flag;

  auto train = read_corpus(cfg_json["train_corpus"].get<std::string>());
  auto eval_set = read_corpus(cfg_json["eval_corpus"].get<std::string>());
  std::vector<FeatureSequence> feats;
  for (const auto& u : train) feats.push_back(u.features);
  CorpusStats stats = compute_stats(feats);
  const std::int64_t d = train.front().features.dim();
  QuantizerHandle q =
      make_quantizer(cfg_json.value("quantizer", json::object()), quantizer_file, cfg.stack * d);

  fs::path out_dir = resolve_out_dir(out_flag, "direct-asr");
  write_resolved_config(out_dir, cfg_json);
  auto result = direct_asr_probe(q, train, eval_set, cfg, stats);
  json summary = {{"ter", result.ter},
                  {"final_loss", result.final_loss},
                  {"quantizer", q.kind()},
                  {"shuffled_pairing", cfg.shuffle_pairing}};
  std::ofstream rs(out_dir / "result.json");
  rs << summary.dump(2) << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_scaling(const std::string& config_path, std::optional<std::uint64_t> seed_flag,
                const std::string& out_flag) {
  json cfg_json = load_config(config_path);
  check_keys(cfg_json,
             {"fractions", "pretrain", "tvae", "finetune", "pretrain_corpus", "ft_train_corpus",
              "ft_eval_corpus"},
             "scaling config");
  require(cfg_json.contains("pretrain_corpus") && cfg_json.contains("ft_train_corpus") &&
              cfg_json.contains("ft_eval_corpus"),
          Errc::invalid_config, "scaling config needs the three corpus paths");
  ScalingConfig cfg;
  json pjson = cfg_json.value("pretrain", json::object());
  pjson.erase("corpus");
  cfg.pretrain = parse_pretrain(pjson);
  cfg.tvae = parse_vqvae(cfg_json.value("tvae", json::object()), [] {
    VqVaeConfig v;
    v.variant = VqVaeVariant::transformer;
    return v;
  }());
  cfg.finetune = parse_finetune(cfg_json.value("finetune", json::object()));
  if (seed_flag) cfg.pretrain.run_seed = *seed_flag;
  std::vector<double> fractions =
      cfg_json.value("fractions", std::vector<double>{1.0 / 64, 4.0 / 64, 16.0 / 64, 1.0});

  auto pre_corpus = read_corpus(cfg_json["pretrain_corpus"].get<std::string>());
  auto ft_train = read_corpus(cfg_json["ft_train_corpus"].get<std::string>());
  auto ft_eval = read_corpus(cfg_json["ft_eval_corpus"].get<std::string>());

  fs::path out_dir = resolve_out_dir(out_flag, "scaling");
  write_resolved_config(out_dir, cfg_json);
  auto rows = data_scaling_experiment(fractions, cfg, pre_corpus, ft_train, ft_eval);
  const std::string csv = scaling_csv(rows);
  std::ofstream os(out_dir / "scaling.csv");
  os << csv;
  std::cout << csv;
  return 0;
}

int cmd_latency(const std::string& base_path, const std::string& comp_path) {
  require(!base_path.empty() && !comp_path.empty(), Errc::invalid_config,
          "latency: --base and --comp are required");
  std::vector<std::string> warnings;
  auto base = parse_hypotheses(base_path, &warnings);
  auto comp = parse_hypotheses(comp_path, &warnings);
  auto result = compare_hypotheses(base, comp, &warnings);
  for (const auto& w : warnings) std::cerr << "[latency] warning: " << w << "\n";
  json j = {{"relative_latency_ms", result.relative_latency_ms},
            {"matched_words", result.matched_words},
            {"utterances", result.utterances}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_grad_check(double eps) {
  // composed loss: tiny 64-bit encoder + masked cross entropy
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.input_dim = 6;
  cfg.vocab_size = 5;
  cfg.seed = 7;
  auto params = init_encoder<double>(cfg);
  Rng rng(11);
  Tensor<double> feats({5, 6});
  for (std::int64_t i = 0; i < feats.numel(); ++i) feats[i] = rng.normal();
  std::vector<std::int64_t> labels{0, 3, 1, 4, 2};
  std::vector<bool> mask{true, false, true, true, false};
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
    g.loss = masked_cross_entropy(linear_forward(params.head, hv, hidden), labels, mask);
    return g;
  };
  const double err = grad_check<double>(build, flat, eps);
  const bool pass = err < 1e-4;
  std::cout << json({{"max_rel_error", err}, {"eps", eps}, {"tolerance", 1e-4}, {"pass", pass}}).dump()
            << "\n";
  return pass ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale BEST-RQ pipeline: self-supervised pre-training with a random-projection "
               "quantizer, CTC fine-tuning, quantizer-quality and latency analysis"};
  app.require_subcommand(1);

  std::string config_path, out_flag, corpus_dir, quantizer_file, stats_file;
  std::string base_path, comp_path;
  std::int64_t count_flag = 0;
  std::int64_t start_flag = -1;
  double eps = 5e-4;
  bool with_histogram = false;
  std::optional<std::uint64_t> seed_flag;

  auto add_common = [&](CLI::App* sub, bool with_config = true) {
    if (with_config) sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed_flag, "override the run seed");
    sub->add_option("--out", out_flag, "output directory (default: $BESTRQ_OUT/<subcommand>)");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic speech-like corpus");
  add_common(synth);
  synth->add_option("--count", count_flag, "number of utterances");
  synth->add_option("--start", start_flag, "global index of the first utterance");

  CLI::App* stats = app.add_subcommand("stats", "per-dimension corpus statistics");
  stats->add_option("--corpus", corpus_dir, "corpus directory")->required();
  stats->add_option("--out", out_flag, "also write stats.json here");

  CLI::App* quantize = app.add_subcommand("quantize", "label a corpus with a quantizer");
  add_common(quantize);
  quantize->add_option("--corpus", corpus_dir, "corpus directory")->required();
  quantize->add_option("--quantizer", quantizer_file, "saved quantizer file");
  quantize->add_option("--stats", stats_file, "stats.json to normalize with");

  CLI::App* probe = app.add_subcommand("probe-codebook", "codebook utilization report");
  add_common(probe);
  probe->add_option("--corpus", corpus_dir, "corpus directory")->required();
  probe->add_option("--quantizer", quantizer_file, "saved quantizer file");
  probe->add_option("--stats", stats_file, "stats.json to normalize with");
  probe->add_flag("--histogram", with_histogram, "include the per-code histogram");

  CLI::App* pretrain = app.add_subcommand("pretrain", "masked-label pre-training");
  add_common(pretrain);
  pretrain->add_option("--quantizer", quantizer_file, "saved quantizer file (overrides config spec)");

  CLI::App* finetune = app.add_subcommand("finetune", "CTC fine-tuning on the synthetic task");
  add_common(finetune);

  CLI::App* direct = app.add_subcommand("direct-asr", "quantizer-quality probe: labels in, CTC out");
  add_common(direct);
  direct->add_option("--quantizer", quantizer_file, "saved quantizer file");

  CLI::App* scaling = app.add_subcommand("scaling", "pre-training data-size study (rpq vs tvae)");
  add_common(scaling);

  CLI::App* latency = app.add_subcommand("latency", "relative latency between two hypothesis files");
  latency->add_option("--base", base_path, "baseline hypotheses JSONL")->required();
  latency->add_option("--comp", comp_path, "compared hypotheses JSONL")->required();

  CLI::App* gradcheck = app.add_subcommand("grad-check", "finite-difference check of the composed loss");
  gradcheck->add_option("--eps", eps, "central-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(config_path, seed_flag, out_flag, count_flag, start_flag);
    if (stats->parsed()) return cmd_stats(corpus_dir, out_flag);
    if (quantize->parsed())
      return cmd_quantize(config_path, corpus_dir, quantizer_file, stats_file, out_flag);
    if (probe->parsed())
      return cmd_probe_codebook(config_path, corpus_dir, quantizer_file, stats_file, with_histogram);
    if (pretrain->parsed()) return cmd_pretrain(config_path, seed_flag, out_flag, quantizer_file);
    if (finetune->parsed()) return cmd_finetune(config_path, seed_flag, out_flag);
    if (direct->parsed()) return cmd_direct_asr(config_path, seed_flag, out_flag, quantizer_file);
    if (scaling->parsed()) return cmd_scaling(config_path, seed_flag, out_flag);
    if (latency->parsed()) return cmd_latency(base_path, comp_path);
    if (gradcheck->parsed()) return cmd_grad_check(eps);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
