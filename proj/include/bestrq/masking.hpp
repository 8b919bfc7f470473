#pragma once

#include <cstdint>
#include <vector>

#include "bestrq/common.hpp"
#include "bestrq/features.hpp"
#include "bestrq/rng.hpp"

namespace bestrq {

/// Span mask over a frame timeline: a Bernoulli draw at every frame decides
/// whether a fixed-length span starts there; overlapping spans take the union
/// and spans clip at the sequence end.
struct MaskPlan {
  std::int64_t length = 0;
  std::int64_t span_frames = 0;
  double start_prob = 0.0;
  std::vector<std::int64_t> starts;  // sorted
  std::vector<bool> mask;            // length entries

  std::int64_t masked_count() const {
    std::int64_t n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
  }
};

inline MaskPlan sample_mask(std::int64_t length, double start_prob, std::int64_t span_frames,
                            std::uint64_t seed) {
  require(length >= 1, Errc::precondition, "sample_mask: length must be >= 1");
  require(start_prob >= 0.0 && start_prob <= 1.0, Errc::precondition,
          "sample_mask: start_prob must be in [0, 1]");
  require(span_frames >= 1, Errc::invalid_input, "sample_mask: span_frames must be >= 1");
  MaskPlan plan;
  plan.length = length;
  plan.span_frames = span_frames;
  plan.start_prob = start_prob;
  plan.mask.assign(static_cast<std::size_t>(length), false);
  Rng rng(seed);
  for (std::int64_t t = 0; t < length; ++t) {
    if (!rng.bernoulli(start_prob)) continue;
    plan.starts.push_back(t);
    const std::int64_t end = std::min(length, t + span_frames);
    for (std::int64_t i = t; i < end; ++i) plan.mask[static_cast<std::size_t>(i)] = true;
  }
  return plan;
}

struct MaskedSequence {
  FeatureSequence original;
  FeatureSequence masked;
  MaskPlan plan;
  std::uint64_t noise_seed = 0;
};

/// Replaces masked frames with N(0, noise_std^2) samples; unmasked frames are
/// copied bit-exactly (the loss-target separation depends on this).
inline MaskedSequence apply_mask(const FeatureSequence& seq, const MaskPlan& plan,
                                 double noise_std, std::uint64_t seed) {
  require(plan.length == seq.length(), Errc::invalid_input,
          "apply_mask: plan length does not match sequence");
  require(noise_std >= 0, Errc::invalid_input, "apply_mask: noise_std must be >= 0");
  MaskedSequence out;
  out.original = seq;
  out.masked = seq;
  out.plan = plan;
  out.noise_seed = seed;
  Rng rng(seed);
  const std::int64_t d = seq.dim();
  for (std::int64_t t = 0; t < seq.length(); ++t) {
    if (!plan.mask[static_cast<std::size_t>(t)]) continue;
    for (std::int64_t j = 0; j < d; ++j)
      out.masked.frames.at(t, j) = static_cast<float>(noise_std * rng.normal());
  }
  return out;
}

/// Projects a frame-level mask onto the label timeline after k-fold temporal
/// reduction: a label position is masked iff any of its k source frames is.
inline std::vector<bool> reduce_mask(const std::vector<bool>& frame_mask, std::int64_t k) {
  require(k >= 1, Errc::precondition, "reduce_mask: k must be >= 1");
  const std::int64_t t_out = static_cast<std::int64_t>(frame_mask.size()) / k;
  std::vector<bool> out(static_cast<std::size_t>(t_out), false);
  for (std::int64_t i = 0; i < t_out; ++i)
    for (std::int64_t g = 0; g < k; ++g)
      if (frame_mask[static_cast<std::size_t>(i * k + g)]) {
        out[static_cast<std::size_t>(i)] = true;
        break;
      }
  return out;
}

}  // namespace bestrq
