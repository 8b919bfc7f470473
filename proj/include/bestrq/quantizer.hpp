#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "bestrq/common.hpp"
#include "bestrq/features.hpp"
#include "bestrq/rng.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

/// Frozen random-projection quantizer: project with a fixed random matrix,
/// then nearest-neighbor lookup in a fixed random codebook under l2
/// normalization. Reconstructible bit-exactly from (d, h, n, seed); nothing
/// here is ever updated.
class RandomProjectionQuantizer {
 public:
  RandomProjectionQuantizer(std::int64_t d, std::int64_t h, std::int64_t n, std::uint64_t seed,
                            bool l2_normalize = true)
      : d_(d), h_(h), n_(n), seed_(seed), l2_normalize_(l2_normalize) {
    require(d >= 1 && h >= 1 && n >= 1, Errc::invalid_config, "quantizer dims must be >= 1");
    // projection: Xavier-uniform over (h, d); codebook: i.i.d. standard normal
    const double bound = std::sqrt(6.0 / static_cast<double>(h + d));
    Rng proj_rng(derive_seed(seed, 0x5101));
    projection_ = Tensor<float>({h, d});
    for (std::int64_t i = 0; i < projection_.numel(); ++i)
      projection_[i] = static_cast<float>(proj_rng.uniform(-bound, bound));
    Rng code_rng(derive_seed(seed, 0x5102));
    codebook_ = Tensor<float>({n, h});
    for (std::int64_t i = 0; i < codebook_.numel(); ++i)
      codebook_[i] = static_cast<float>(code_rng.normal());
    // codebook rows pre-normalized once for the lookup; the raw rows stay as
    // the serialized truth
    normalized_codebook_ = codebook_;
    if (l2_normalize_) {
      for (std::int64_t i = 0; i < n_; ++i) {
        double norm = 0;
        for (std::int64_t j = 0; j < h_; ++j) norm += double(codebook_.at(i, j)) * codebook_.at(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) continue;  // leave the row as-is; measure-zero under N(0,1)
        for (std::int64_t j = 0; j < h_; ++j)
          normalized_codebook_.at(i, j) = static_cast<float>(codebook_.at(i, j) / norm);
      }
    }
  }

  std::int64_t input_dim() const { return d_; }
  std::int64_t code_dim() const { return h_; }
  std::int64_t vocab_size() const { return n_; }
  std::uint64_t seed() const { return seed_; }
  bool l2_normalized() const { return l2_normalize_; }
  const Tensor<float>& projection() const { return projection_; }
  const Tensor<float>& codebook() const { return codebook_; }

  /// Like quantize() but reports a degenerate projection as nullopt instead of
  /// throwing; training loops treat such frames as unlabeled.
  std::optional<std::int64_t> try_quantize(const float* x, std::int64_t dim) const {
    require(dim == d_, Errc::dim_mismatch, "quantize: input dim mismatch");
    std::vector<double> proj(static_cast<std::size_t>(h_), 0.0);
    for (std::int64_t i = 0; i < h_; ++i) {
      double acc = 0;
      const float* row = projection_.data() + i * d_;
      for (std::int64_t j = 0; j < d_; ++j) acc += double(row[j]) * x[j];
      require(std::isfinite(acc), Errc::invalid_input, "quantize: non-finite projection");
      proj[static_cast<std::size_t>(i)] = acc;
    }
    double norm = 0;
    for (double v : proj) norm += v * v;
    norm = std::sqrt(norm);
    if (l2_normalize_) {
      if (norm < 1e-12) return std::nullopt;
      for (double& v : proj) v /= norm;
    }
    // distance to unit vectors is monotone in negative dot product, but the
    // comparison is done on true distances so the tie-break matches the
    // stated contract exactly
    std::int64_t best = 0;
    double best_dist = squared_distance(proj, 0);
    for (std::int64_t i = 1; i < n_; ++i) {
      const double dist = squared_distance(proj, i);
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    return best;
  }

  /// Label of a single (stacked) frame: argmin over codes of the distance
  /// between l2-normalized code and l2-normalized projection, ties to the
  /// lowest index. Equivalent to argmax cosine similarity.
  std::int64_t quantize(const float* x, std::int64_t dim) const {
    auto label = try_quantize(x, dim);
    require(label.has_value(), Errc::degenerate_projection,
            "projected vector has near-zero norm; frame cannot be labeled");
    return *label;
  }

  std::int64_t quantize(const std::vector<float>& x) const {
    return quantize(x.data(), static_cast<std::int64_t>(x.size()));
  }

  /// One label per stacked frame. Callers feed the clean normalized signal;
  /// targets never see masking.
  std::vector<std::int64_t> quantize_sequence(const FeatureSequence& seq) const {
    require(seq.dim() == d_, Errc::dim_mismatch, "quantize_sequence: frame dim mismatch");
    std::vector<std::int64_t> labels(static_cast<std::size_t>(seq.length()));
    for (std::int64_t t = 0; t < seq.length(); ++t)
      labels[static_cast<std::size_t>(t)] = quantize(seq.frames.data() + t * d_, d_);
    return labels;
  }

 private:
  double squared_distance(const std::vector<double>& q, std::int64_t row) const {
    const float* c = normalized_codebook_.data() + row * h_;
    double acc = 0;
    for (std::int64_t j = 0; j < h_; ++j) {
      const double diff = q[static_cast<std::size_t>(j)] - double(c[j]);
      acc += diff * diff;
    }
    return acc;
  }

  std::int64_t d_, h_, n_;
  std::uint64_t seed_;
  bool l2_normalize_;
  Tensor<float> projection_;
  Tensor<float> codebook_;
  Tensor<float> normalized_codebook_;
};

struct UtilizationReport {
  double codes_used_fraction = 0.0;
  double normalized_entropy = 0.0;
  std::vector<std::int64_t> histogram;
  std::int64_t total_labels = 0;
};

/// Fraction of distinct codes used plus the normalized entropy (base ln n) of
/// the empirical label distribution.
inline UtilizationReport utilization(const std::vector<std::int64_t>& labels, std::int64_t n) {
  require(n >= 1, Errc::invalid_input, "utilization: n must be >= 1");
  require(!labels.empty(), Errc::invalid_input, "utilization: no labels");
  UtilizationReport report;
  report.histogram.assign(static_cast<std::size_t>(n), 0);
  for (auto l : labels) {
    require(l >= 0 && l < n, Errc::out_of_range_label,
            "label " + std::to_string(l) + " outside [0, " + std::to_string(n) + ")");
    report.histogram[static_cast<std::size_t>(l)] += 1;
  }
  report.total_labels = static_cast<std::int64_t>(labels.size());
  std::int64_t distinct = 0;
  double entropy = 0;
  const double total = static_cast<double>(labels.size());
  for (auto c : report.histogram) {
    if (c == 0) continue;
    ++distinct;
    const double p = static_cast<double>(c) / total;
    entropy -= p * std::log(p);
  }
  report.codes_used_fraction = static_cast<double>(distinct) / static_cast<double>(n);
  // n == 1 has zero max entropy; report 0 rather than 0/0
  report.normalized_entropy = n > 1 ? entropy / std::log(static_cast<double>(n)) : 0.0;
  return report;
}

}  // namespace bestrq
