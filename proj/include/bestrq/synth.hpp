#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bestrq/common.hpp"
#include "bestrq/features.hpp"
#include "bestrq/rng.hpp"

namespace bestrq {

struct Utterance {
  std::string id;
  FeatureSequence features;
  std::vector<std::int64_t> transcript;
};

/// Speech-like toy task: token sequences from a seeded Markov chain, each
/// token emitting a fixed embedding vector plus i.i.d. Gaussian noise. The
/// low-entropy transitions are what make masked spans predictable from
/// context.
struct SyntheticTaskSpec {
  std::int64_t token_vocab_size = 12;
  std::int64_t frames_per_token = 8;
  std::int64_t feature_dim = 20;
  double emission_noise_std = 0.1;
  std::int64_t transition_order = 1;
  std::int64_t min_utterance_tokens = 6;
  std::int64_t max_utterance_tokens = 14;
  double frame_stride_ms = 10.0;

  void validate() const {
    require(token_vocab_size >= 1, Errc::invalid_config, "token_vocab_size must be >= 1");
    require(frames_per_token >= 1, Errc::invalid_config, "frames_per_token must be >= 1");
    require(feature_dim >= 1, Errc::invalid_config, "feature_dim must be >= 1");
    require(emission_noise_std >= 0, Errc::invalid_config, "emission_noise_std must be >= 0");
    require(transition_order >= 1 && transition_order <= 3, Errc::invalid_config,
            "transition_order must be in [1, 3]");
    require(min_utterance_tokens >= 1 && max_utterance_tokens >= min_utterance_tokens,
            Errc::invalid_config, "utterance length range invalid");
    require(frame_stride_ms > 0, Errc::invalid_config, "frame_stride_ms must be > 0");
  }
};

/// The generating process itself, exposed so tests can compare empirical
/// frequencies against the seeded chain.
struct SynthModel {
  Tensor<float> embeddings;                    // vocab x feature_dim
  std::vector<std::vector<double>> transition;  // vocab^order rows, vocab cols
  std::int64_t order = 1;
  std::int64_t vocab = 1;

  std::int64_t context_count() const { return static_cast<std::int64_t>(transition.size()); }
};

namespace detail {
// Each context gets up to three preferred successors with fixed weights; the
// concentration keeps per-step entropy low enough for context to carry signal.
inline std::vector<double> transition_row(std::int64_t vocab, Rng& rng) {
  static const double weights[3] = {0.65, 0.25, 0.10};
  const int k = static_cast<int>(std::min<std::int64_t>(3, vocab));
  std::vector<std::int64_t> successors;
  while (static_cast<int>(successors.size()) < k) {
    std::int64_t cand = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(vocab)));
    bool dup = false;
    for (auto s : successors) dup |= (s == cand);
    if (!dup) successors.push_back(cand);
  }
  double total = 0;
  for (int i = 0; i < k; ++i) total += weights[i];
  std::vector<double> row(static_cast<std::size_t>(vocab), 0.0);
  for (int i = 0; i < k; ++i) row[static_cast<std::size_t>(successors[i])] = weights[i] / total;
  return row;
}
}  // namespace detail

inline SynthModel make_synth_model(const SyntheticTaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  SynthModel model;
  model.order = spec.transition_order;
  model.vocab = spec.token_vocab_size;

  Rng emb_rng(derive_seed(seed, 0x7001));
  model.embeddings = Tensor<float>({spec.token_vocab_size, spec.feature_dim});
  for (std::int64_t i = 0; i < model.embeddings.numel(); ++i)
    model.embeddings[i] = static_cast<float>(emb_rng.normal());

  std::int64_t contexts = 1;
  for (std::int64_t i = 0; i < spec.transition_order; ++i) contexts *= spec.token_vocab_size;
  Rng chain_rng(derive_seed(seed, 0x7002));
  model.transition.reserve(static_cast<std::size_t>(contexts));
  for (std::int64_t c = 0; c < contexts; ++c)
    model.transition.push_back(detail::transition_row(spec.token_vocab_size, chain_rng));
  return model;
}

namespace detail {
inline std::int64_t context_index(const std::vector<std::int64_t>& tokens, std::int64_t order,
                                  std::int64_t vocab) {
  std::int64_t idx = 0;
  const std::size_t n = tokens.size();
  for (std::int64_t i = 0; i < order; ++i)
    idx = idx * vocab + tokens[n - static_cast<std::size_t>(order - i)];
  return idx;
}

inline std::int64_t sample_categorical(const std::vector<double>& probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<std::int64_t>(i);
  }
  return static_cast<std::int64_t>(probs.size()) - 1;
}
}  // namespace detail

inline Utterance synth_utterance(const SyntheticTaskSpec& spec, const SynthModel& model,
                                 std::uint64_t utt_seed, const std::string& id) {
  Rng rng(utt_seed);
  const std::int64_t len_span = spec.max_utterance_tokens - spec.min_utterance_tokens + 1;
  const std::int64_t n_tokens =
      spec.min_utterance_tokens +
      static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(len_span)));

  std::vector<std::int64_t> tokens;
  tokens.reserve(static_cast<std::size_t>(n_tokens));
  for (std::int64_t i = 0; i < n_tokens; ++i) {
    if (i < spec.transition_order) {
      tokens.push_back(
          static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(spec.token_vocab_size))));
    } else {
      const std::int64_t ctx = detail::context_index(tokens, spec.transition_order, spec.token_vocab_size);
      tokens.push_back(detail::sample_categorical(model.transition[static_cast<std::size_t>(ctx)], rng));
    }
  }

  Utterance utt;
  utt.id = id;
  utt.transcript = tokens;
  utt.features.frame_stride_ms = spec.frame_stride_ms;
  utt.features.frames = Tensor<float>({n_tokens * spec.frames_per_token, spec.feature_dim});
  std::int64_t t = 0;
  for (std::int64_t tok_i = 0; tok_i < n_tokens; ++tok_i) {
    const std::int64_t tok = tokens[static_cast<std::size_t>(tok_i)];
    for (std::int64_t f = 0; f < spec.frames_per_token; ++f, ++t)
      for (std::int64_t j = 0; j < spec.feature_dim; ++j)
        utt.features.frames.at(t, j) =
            model.embeddings.at(tok, j) +
            static_cast<float>(spec.emission_noise_std * rng.normal());
  }
  return utt;
}

/// Deterministic function of (spec, count, seed, start_index); utterances draw
/// from streams derived per global index, so corpora from the same seed agree
/// wherever their index ranges overlap. Disjoint ranges (a pre-training set
/// and held-out fine-tuning sets, say) share the task model but no utterances.
inline std::vector<Utterance> synth_corpus(const SyntheticTaskSpec& spec, std::int64_t count,
                                           std::uint64_t seed, std::int64_t start_index = 0) {
  spec.validate();
  require(count >= 1, Errc::invalid_input, "synth_corpus: count must be >= 1");
  require(start_index >= 0, Errc::invalid_input, "synth_corpus: start_index must be >= 0");
  const SynthModel model = make_synth_model(spec, seed);
  std::vector<Utterance> corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = start_index; i < start_index + count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "utt%06lld", static_cast<long long>(i));
    corpus.push_back(synth_utterance(spec, model, derive_seed(seed, 0x9000 + static_cast<std::uint64_t>(i)), id));
  }
  return corpus;
}

}  // namespace bestrq
