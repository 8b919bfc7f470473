// Acceptance suite: one pass/fail line per criterion, grouped so the long
// training runs can be scheduled separately from the fast checks.
//
//   --group core      fast oracle/property criteria (1-7, 12, 13)
//   --group training  pre-training, transfer, quantizer-quality (8, 9, 10)
//   --group scaling   the extended data-size study (11)
//   --criterion N     run a single criterion

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "bestrq/gradcheck.hpp"
#include "bestrq/latency.hpp"
#include "bestrq/training.hpp"

using namespace bestrq;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1
// quantize equals exhaustive brute-force argmin on 1000 random cases

std::int64_t brute_force_label(const RandomProjectionQuantizer& q, const std::vector<float>& x,
                               double* margin = nullptr) {
  const std::int64_t h = q.code_dim();
  std::vector<double> proj(static_cast<std::size_t>(h), 0.0);
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < q.input_dim(); ++j)
      proj[static_cast<std::size_t>(i)] +=
          double(q.projection().at(i, j)) * x[static_cast<std::size_t>(j)];
  double pn = 0;
  for (double v : proj) pn += v * v;
  pn = std::sqrt(pn);
  std::int64_t best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  double second = std::numeric_limits<double>::infinity();
  for (std::int64_t c = 0; c < q.vocab_size(); ++c) {
    double cn = 0;
    for (std::int64_t j = 0; j < h; ++j) cn += double(q.codebook().at(c, j)) * q.codebook().at(c, j);
    cn = std::sqrt(cn);
    double dist = 0;
    for (std::int64_t j = 0; j < h; ++j) {
      const double diff = double(q.codebook().at(c, j)) / cn - proj[static_cast<std::size_t>(j)] / pn;
      dist += diff * diff;
    }
    if (dist < best_dist) {
      second = best_dist;
      best_dist = dist;
      best = c;
    } else if (dist < second) {
      second = dist;
    }
  }
  if (margin) *margin = second - best_dist;
  return best;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240101);
  std::int64_t mismatches = 0;
  for (int
           trial = 0;
       trial < 1000; ++trial) {
    const std::int64_t d = 8 + static_cast<std::int64_t>(rng.uniform_int(33));
    const std::int64_t h = 4 + static_cast<std::int64_t>(rng.uniform_int(21));
    const std::int64_t n = 16 + static_cast<std::int64_t>(rng.uniform_int(241));
    RandomProjectionQuantizer q(d, h, n, rng.next_u64());
    std::vector<float> x(static_cast<std::size_t>(d));
    for (auto& v : x) v = static_cast<float>(rng.normal());
    if (q.quantize(x) != brute_force_label(q, x)) ++mismatches;
  }
  report(1, "nearest-code label equals brute-force argmin",
         mismatches == 0,
         "1000 cases, " + std::to_string(mismatches) + " mismatches, " +
             format_double(elapsed_s(t0)) + " s");
}

// ---------------------------------------------------------------- criterion 2

void criterion_2() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20240202);
  std::int64_t violations = 0;
  int done = 0;
  while (done < 1000) {
    const std::int64_t d = 8 + static_cast<std::int64_t>(rng.uniform_int(25));
    const std::int64_t h = 4 + static_cast<std::int64_t>(rng.uniform_int(13));
    const std::int64_t n = 16 + static_cast<std::int64_t>(rng.uniform_int(113));
    RandomProjectionQuantizer q(d, h, n, rng.next_u64());
    std::vector<float> x(static_cast<std::size_t>(d));
    for (auto& v : x) v = static_cast<float>(rng.normal());
    double margin = 0;
    const std::int64_t base = brute_force_label(q, x, &margin);
    if (margin == 0.0) continue;  // exact tie: regenerate
    ++done;
    for (double alpha : {0.1, 3.0, 100.0}) {
      std::vector<float> scaled = x;
      for (auto& v : scaled) v = static_cast<float>(v * alpha);
      if (q.quantize(scaled) != base) ++violations;
    }
  }
  report(2, "labels are invariant to positive input scaling", violations == 0,
         "1000 cases x 3 scales, " + std::to_string(violations) + " violations, " +
             format_double(elapsed_s(t0)) + " s");
}

// ---------------------------------------------------------------- criterion 3

void criterion_3() {
  RandomProjectionQuantizer a(80, 16, 256, 4242), b(80, 16, 256, 4242);
  bool same = true;
  for (std::int64_t i = 0; i < a.projection().numel() && same; ++i)
    same = a.projection()[i] == b.projection()[i];
  for (std::int64_t i = 0; i < a.codebook().numel() && same; ++i)
    same = a.codebook()[i] == b.codebook()[i];

  SyntheticTaskSpec task;
  auto corpus = synth_corpus(task, 16, 99, 0);
  std::vector<FeatureSequence> feats;
  for (const auto& u : corpus) feats.push_back(u.features);
  auto stats = compute_stats(feats);
  bool labels_same = true;
  for (const auto& u : corpus) {
    auto stacked = stack_frames(normalize(u.features, stats), 4);
    if (a.quantize_sequence(stacked) != b.quantize_sequence(stacked)) labels_same = false;
  }
  report(3, "frozen quantizer is bit-identical from its seed", same && labels_same,
         std::string("matrices ") + (same ? "identical" : "differ") + ", labels " +
             (labels_same ? "identical" : "differ"));
}

// ---------------------------------------------------------------- criterion 4

void criterion_4() {
  const auto t0 = std::chrono::steady_clock::now();
  auto plan = sample_mask(1000000, 0.01, 40, 777);
  const double freq = double(plan.starts.size()) / 1e6;
  const bool freq_ok = freq >= 0.0095 && freq <= 0.0105;

  FeatureSequence seq;
  seq.frames = Tensor<float>({12500, 8});  // 1e5 values
  auto full = sample_mask(12500, 1.0, 1, 3);
  auto masked = apply_mask(seq, full, 0.1, 55);
  double sum = 0, sumsq = 0;
  for (std::int64_t i = 0; i < masked.masked.frames.numel(); ++i) {
    sum += masked.masked.frames[i];
    sumsq += double(masked.masked.frames[i]) * masked.masked.frames[i];
  }
  const double n = 1e5;
  const double mean = sum / n;
  const double stdev = std::sqrt(sumsq / n - mean * mean);
  const bool noise_ok = std::abs(mean) < 0.002 && stdev >= 0.098 && stdev <= 0.102;

  report(4, "masking start rate and noise moments match the contract", freq_ok && noise_ok,
         "start freq " + format_double(freq) + ", noise mean " + format_double(mean) + ", std " +
             format_double(stdev) + ", " + format_double(elapsed_s(t0)) + " s");
}

// ---------------------------------------------------------------- criterion 5

void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 32;
  cfg.num_heads = 4;
  cfg.ffn_dim = 64;
  cfg.input_dim = 12;
  cfg.vocab_size = 8;
  bool causal_ok = true, look_far_ok = true, look_near_seen = false;
  Rng rng(31337);
  for (int trial = 0; trial < 20; ++trial) {
    cfg.seed = 1000 + static_cast<std::uint64_t>(trial);
    auto params = init_encoder<float>(cfg);
    const std::int64_t t_len = 10 + static_cast<std::int64_t>(rng.uniform_int(8));
    Tensor<float> feats({t_len, cfg.input_dim});
    for (std::int64_t i = 0; i < feats.numel(); ++i) feats[i] = static_cast<float>(rng.normal());
    const std::int64_t t = 2 + static_cast<std::int64_t>(rng.uniform_int(
                                   static_cast<std::uint64_t>(t_len - 6)));
    const std::uint64_t pseed = rng.next_u64();
    if (causality_probe(params, feats, ContextMode::causal(), t, pseed) > 1e-6f) causal_ok = false;
    if (causality_probe(params, feats, ContextMode::causal_lookahead(3), t, t + 4, pseed) > 1e-6f)
      look_far_ok = false;
    if (causality_probe(params, feats, ContextMode::causal_lookahead(3), t, t + 3, pseed) > 1e-6f)
      look_near_seen = true;  // frame t+3 must actually be visible
  }
  report(5, "causal visibility is exact and lookahead stops at right_window",
         causal_ok && look_far_ok && look_near_seen,
         std::string("causal ") + (causal_ok ? "tight" : "LEAKS") + ", beyond-window " +
             (look_far_ok ? "tight" : "LEAKS") + ", in-window influence " +
             (look_near_seen ? "observed" : "NOT OBSERVED") + ", " +
             format_double(elapsed_s(t0)) + " s");
}

// ---------------------------------------------------------------- criterion 6

void criterion_6() {
  const auto t0 = std::chrono::steady_clock::now();
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.input_dim = 6;
  cfg.vocab_size = 5;
  cfg.seed = 7;
  auto params = init_encoder<double>(cfg);
  Rng rng(10);
  Tensor<double> feats({5, 6});
  for (std::int64_t i = 0; i < feats.numel(); ++i) feats[i] = rng.normal();
  std::vector<std::int64_t> labels{1, 3, 0, 2, 1};
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
  const double err = grad_check<double>(build, flat, 5e-4);
  report(6, "composed masked-prediction loss passes the 64-bit gradient check", err < 1e-4,
         "max relative error " + format_double(err) + ", " + format_double(elapsed_s(t0)) + " s");
}

// ---------------------------------------------------------------- criterion 7

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

void criterion_7() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(70707);
  std::int64_t instances = 0, failures = 0;
  double worst = 0.0;
  for (std::int64_t v = 1; v <= 4; ++v) {
    const std::int64_t k = v + 1;
    for (std::int64_t t = 1; t <= 6; ++t) {
      for (std::int64_t len = 1; len <= 3; ++len) {
        std::int64_t count = 1;
        for (std::int64_t i = 0; i < len; ++i) count *= v;
        for (std::int64_t code = 0; code < count; ++code) {
          std::vector<std::int64_t> target;
          std::int64_t c = code;
          for (std::int64_t i = 0; i < len; ++i) {
            target.push_back(c % v);
            c /= v;
          }
          Tensor<double> logits({t, k});
          for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-2, 2);
          auto res = ctc_loss(logits, target, v);
          const double brute = brute_force_ctc(logits, target, v);
          ++instances;
          if (ctc_min_frames(target) > t) {
            if (res.feasible || brute != 0.0) ++failures;
          } else {
            const double diff = std::abs(res.value - (-std::log(brute)));
            worst = std::max(worst, diff);
            if (!(res.feasible && diff < 1e-10)) ++failures;
          }
        }
      }
    }
  }
  report(7, "CTC loss equals the exhaustive alignment sum", failures == 0,
         std::to_string(instances) + " instances, worst |diff| " + format_double(worst) + ", " +
             format_double(elapsed_s(t0)) + " s");
}

// --------------------------------------------------------------- criterion 12

void criterion_12() {
  auto mk = [](std::vector<std::tuple<const char*, double, double>> words) {
    TimedHypothesis h;
    h.utterance_id = "u";
    for (auto& [w, s, e] : words) h.words.push_back({w, s, e});
    return h;
  };
  auto base = mk({{"a", 0, 100}, {"b", 150, 250}, {"c", 300, 460}});
  MatchedPairSet self_set;
  self_set.utterances.push_back({"u", align_words(base, base)});
  const double self_val = relative_latency(self_set);

  auto shifted = mk({{"a", 25, 125}, {"b", 175, 275}, {"c", 325, 485}});
  MatchedPairSet shift_set;
  shift_set.utterances.push_back({"u", align_words(base, shifted)});
  const double shift_val = relative_latency(shift_set);

  auto base2 = mk({{"x", 100, 200}, {"y", 300, 400}});
  auto comp2 = mk({{"x", 110, 230}, {"y", 280, 400}});
  MatchedPairSet mixed_set;
  mixed_set.utterances.push_back({"u", align_words(base2, comp2)});
  const double mixed_val = relative_latency(mixed_set);

  const bool pass = self_val == 0.0 && shift_val == 25.0 && mixed_val == 5.0;
  report(12, "latency tool is exact on the three fixtures", pass,
         "self " + format_double(self_val) + ", uniform-shift " + format_double(shift_val) +
             ", mixed " + format_double(mixed_val));
}

// --------------------------------------------------------------- criterion 13

void criterion_13() {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RandomProjectionQuantizer with_norm(80, 16, 256, 5000 + seed, true);
    RandomProjectionQuantizer without_norm(80, 16, 256, 5000 + seed, false);
    Rng rng(900 + seed);
    std::vector<std::int64_t> la, lb;
    la.reserve(8192);
    lb.reserve(8192);
    for (int i = 0; i < 8192; ++i) {
      std::vector<float> x(80);
      for (auto& v : x) v = static_cast<float>(rng.normal());
      la.push_back(with_norm.quantize(x));
      lb.push_back(without_norm.quantize(x));
    }
    const double on = utilization(la, 256).normalized_entropy;
    const double off = utilization(lb, 256).normalized_entropy;
    if (on > off) ++wins;
    detail += format_double(on) + ">" + format_double(off) + (seed < 5 ? "; " : "");
  }
  report(13, "l2 normalization raises label entropy in >= 4/5 seeds", wins >= 4,
         std::to_string(wins) + "/5 seeds, " + detail + ", " + format_double(elapsed_s(t0)) + " s");
}

// ----------------------------------------------------------- training group

// shared desk-scale corpora: one task model, disjoint index ranges
struct TrainingData {
  SyntheticTaskSpec task;
  std::vector<Utterance> pretrain;  // [0, 256)
  std::vector<Utterance> ft_train;  // [256, 288)
  std::vector<Utterance> ft_eval;   // [288, 416)
};

TrainingData make_training_data(double emission_noise, std::uint64_t seed) {
  TrainingData d;
  d.task.emission_noise_std = emission_noise;
  d.pretrain = synth_corpus(d.task, 256, seed, 0);
  d.ft_train = synth_corpus(d.task, 32, seed, 256);
  d.ft_eval = synth_corpus(d.task, 128, seed, 288);
  return d;
}

PretrainConfig default_pretrain_config() {
  PretrainConfig cfg;
  cfg.rpq = {16, 256, 7, true};
  cfg.mask_start_prob = 0.01;
  cfg.mask_span_frames = 40;
  cfg.mask_noise_std = 0.1;
  cfg.stack = 4;
  cfg.encoder.num_layers = 4;
  cfg.encoder.d_model = 128;
  cfg.encoder.num_heads = 4;
  cfg.encoder.ffn_dim = 512;
  cfg.encoder.input_dim = 80;
  cfg.encoder.vocab_size = 256;
  cfg.encoder.seed = 11;
  cfg.schedule = {2e-3, 500};
  cfg.batch_size = 32;
  cfg.total_steps = 3000;
  cfg.run_seed = 3;
  cfg.metrics_every = 100;
  return cfg;
}

FinetuneConfig default_finetune_config(const SyntheticTaskSpec& task) {
  FinetuneConfig cfg;
  cfg.encoder.num_layers = 4;
  cfg.encoder.d_model = 128;
  cfg.encoder.num_heads = 4;
  cfg.encoder.ffn_dim = 512;
  cfg.encoder.input_dim = 80;
  cfg.encoder.vocab_size = 256;
  cfg.stack = 4;
  cfg.task_vocab = task.token_vocab_size;
  cfg.encoder_schedule = {6e-4, 500};  // 0.3x peak, 10/3x warmup of the head group
  cfg.head_schedule = {2e-3, 150};
  cfg.steps = 300;
  cfg.batch_size = 16;
  cfg.metrics_every = 100;
  return cfg;
}

Checkpoint criterion_8(const TrainingData& data) {
  const auto t0 = std::chrono::steady_clock::now();
  PretrainConfig cfg = default_pretrain_config();
  auto result = run_pretrain(cfg, data.pretrain);
  const MetricsRow& last = result.checkpoint.last_metrics;
  const double chance = 1.0 / 256.0;
  const bool pass = last.accuracy_defined && last.masked_accuracy >= 10.0 * chance;
  report(8, "pre-training reaches >= 10x chance masked accuracy at 3k steps", pass,
         "accuracy " + format_double(last.masked_accuracy) + " vs bound " +
             format_double(10.0 * chance) + ", loss " + format_double(last.loss) + ", " +
             format_double(elapsed_s(t0) / 60.0) + " min");
  return result.checkpoint;
}

void criterion_9(const TrainingData& data, const Checkpoint& ckpt) {
  const auto t0 = std::chrono::steady_clock::now();
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 101; seed <= 105; ++seed) {
    FinetuneConfig cfg = default_finetune_config(data.task);
    cfg.seed = seed;
    cfg.encoder.seed = seed;  // scratch arm re-initializes per seed
    auto pretrained = run_finetune(cfg, data.ft_train, data.ft_eval, &ckpt);
    auto scratch = run_finetune(cfg, data.ft_train, data.ft_eval, nullptr, &ckpt.stats);
    if (pretrained.ter < scratch.ter) ++wins;
    detail += format_double(pretrained.ter) + "<" + format_double(scratch.ter) +
              (seed < 105 ? "; " : "");
  }
  report(9, "pretrained init beats scratch TER in >= 4/5 seeds", wins >= 4,
         std::to_string(wins) + "/5: " + detail + ", " + format_double(elapsed_s(t0) / 60.0) +
             " min");
}

void criterion_10() {
  const auto t0 = std::chrono::steady_clock::now();
  // a noisier corpus separates the quantizers: random projections scatter
  // noisy frames across codes while the trained VQ-VAE's encoder denoises
  TrainingData data = make_training_data(0.6, 21);
  std::vector<FeatureSequence> raw;
  for (const auto& u : data.pretrain) raw.push_back(u.features);
  const CorpusStats stats = compute_stats(raw);
  std::vector<FeatureSequence> stacked;
  for (const auto& seq : raw) stacked.push_back(stack_frames(normalize(seq, stats), 4));

  VqVaeConfig vcfg;
  vcfg.variant = VqVaeVariant::transformer;
  vcfg.input_dim = 80;
  vcfg.code_dim = 16;
  vcfg.codebook_size = 256;
  vcfg.num_layers = 2;
  vcfg.d_model = 64;
  vcfg.num_heads = 4;
  vcfg.ffn_dim = 256;
  vcfg.learning_rate = 1e-4;
  vcfg.steps = 2000;
  vcfg.batch_size = 16;
  vcfg.seed = 23;
  QuantizerHandle tvae{train_vqvae(stacked, vcfg)};
  QuantizerHandle rpq{RandomProjectionQuantizer(80, 16, 256, 7, true)};
  std::fprintf(stderr, "[criterion 10] tvae trained (%.1f min)\n", elapsed_s(t0) / 60.0);

  ProbeConfig pcfg;
  pcfg.embed_dim = 32;
  pcfg.encoder.num_layers = 2;
  pcfg.encoder.d_model = 64;
  pcfg.encoder.num_heads = 4;
  pcfg.encoder.ffn_dim = 256;
  pcfg.encoder.input_dim = 32;
  pcfg.encoder.vocab_size = 1;
  pcfg.encoder.seed = 31;
  pcfg.schedule = {2e-3, 200};
  pcfg.steps = 600;
  pcfg.batch_size = 16;
  pcfg.stack = 4;
  pcfg.task_vocab = data.task.token_vocab_size;
  pcfg.seed = 33;
  auto probe_rpq = direct_asr_probe(rpq, data.ft_train, data.ft_eval, pcfg, stats);
  auto probe_tvae = direct_asr_probe(tvae, data.ft_train, data.ft_eval, pcfg, stats);
  const bool probe_ordered = probe_tvae.ter < probe_rpq.ter;
  std::fprintf(stderr, "[criterion 10] probes done: rpq %.4f tvae %.4f (%.1f min)\n",
               probe_rpq.ter, probe_tvae.ter, elapsed_s(t0) / 60.0);

  PretrainConfig pretrain_cfg = default_pretrain_config();
  pretrain_cfg.total_steps = 2000;
  auto rpq_pre = run_pretrain(pretrain_cfg, data.pretrain);
  auto tvae_pre = run_pretrain(pretrain_cfg, data.pretrain, &tvae);

  FinetuneConfig fcfg = default_finetune_config(data.task);
  fcfg.seed = 52;
  fcfg.steps = 600;
  auto ssl_rpq = run_finetune(fcfg, data.ft_train, data.ft_eval, &rpq_pre.checkpoint);
  auto ssl_tvae = run_finetune(fcfg, data.ft_train, data.ft_eval, &tvae_pre.checkpoint);
  const double hi = std::max(ssl_rpq.ter, ssl_tvae.ter);
  const bool ssl_close = hi == 0.0 || std::abs(ssl_rpq.ter - ssl_tvae.ter) <= 0.10 * hi;

  report(10, "tvae beats rpq as direct input while SSL results stay within 10%",
         probe_ordered && ssl_close,
         "probe rpq " + format_double(probe_rpq.ter) + " vs tvae " + format_double(probe_tvae.ter) +
             "; ssl rpq " + format_double(ssl_rpq.ter) + " vs tvae " + format_double(ssl_tvae.ter) +
             ", " + format_double(elapsed_s(t0) / 60.0) + " min");
}

void criterion_11() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainingData data = make_training_data(0.6, 87);

  ScalingConfig cfg;
  cfg.pretrain = default_pretrain_config();
  cfg.pretrain.total_steps = 1500;
  cfg.pretrain.run_seed = 61;
  cfg.tvae.variant = VqVaeVariant::transformer;
  cfg.tvae.input_dim = 80;
  cfg.tvae.code_dim = 16;
  cfg.tvae.codebook_size = 256;
  cfg.tvae.num_layers = 2;
  cfg.tvae.d_model = 64;
  cfg.tvae.num_heads = 4;
  cfg.tvae.ffn_dim = 256;
  cfg.tvae.learning_rate = 1e-4;
  cfg.tvae.steps = 1500;
  cfg.tvae.batch_size = 16;
  cfg.tvae.seed = 62;
  cfg.finetune = default_finetune_config(data.task);
  cfg.finetune.seed = 63;
  cfg.finetune.steps = 400;

  const std::vector<double> fractions{1.0 / 64.0, 1.0};
  auto rows = data_scaling_experiment(fractions, cfg, data.pretrain, data.ft_train, data.ft_eval);
  std::printf("%s", scaling_csv(rows).c_str());

  double gap_small = 0, gap_large = 0;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const double gap = std::abs(rows[i].ter - rows[i + 1].ter);
    if (rows[i].fraction == fractions.front()) gap_small = gap;
    if (rows[i].fraction == fractions.back()) gap_large = gap;
  }
  report(11, "quantizer TER gap shrinks from the smallest to the largest fraction",
         gap_large < gap_small,
         "gap@" + format_double(fractions.front()) + " = " + format_double(gap_small) + ", gap@1 = " +
             format_double(gap_large) + ", " + format_double(elapsed_s(t0) / 60.0) + " min");
}

}  // namespace

int main(int argc, char** argv) {
  std::string group = "all";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--group") == 0 && i + 1 < argc) group = argv[++i];
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  }

  const bool core = group == "all" || group == "core";
  const bool training = group == "all" || group == "training";
  const bool scaling = group == "all" || group == "scaling";

  try {
    if (only) {
      TrainingData data = make_training_data(0.1, 1);
      switch (only) {
        case 1: criterion_1(); break;
        case 2: criterion_2(); break;
        case 3: criterion_3(); break;
        case 4: criterion_4(); break;
        case 5: criterion_5(); break;
        case 6: criterion_6(); break;
        case 7: criterion_7(); break;
        case 8: criterion_8(data); break;
        case 9: criterion_9(data, criterion_8(data)); break;
        case 10: criterion_10(); break;
        case 11: criterion_11(); break;
        case 12: criterion_12(); break;
        case 13: criterion_13(); break;
        default:
          std::fprintf(stderr, "unknown criterion %d\n", only);
          return 2;
      }
    } else {
      if (core) {
        criterion_1();
        criterion_2();
        criterion_3();
        criterion_4();
        criterion_5();
        criterion_6();
        criterion_7();
        criterion_12();
        criterion_13();
      }
      if (training) {
        TrainingData data = make_training_data(0.1, 1);
        Checkpoint ckpt = criterion_8(data);
        criterion_9(data, ckpt);
        criterion_10();
      }
      if (scaling) {
        criterion_11();
      }
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "acceptance run aborted: %s\n", e.what());
    return 3;
  }

  if (g_failures > 0) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all selected criteria passed\n");
  return 0;
}
