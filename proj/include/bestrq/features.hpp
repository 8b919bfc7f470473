#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bestrq/common.hpp"
#include "bestrq/tensor.hpp"

namespace bestrq {

/// T frames of d-dimensional features; the carrier for every signal in the
/// pipeline. Frame stride is in milliseconds (10 ms per frame by default).
struct FeatureSequence {
  Tensor<float> frames;  // T x d
  double frame_stride_ms = 10.0;

  std::int64_t length() const { return frames.dim(0); }
  std::int64_t dim() const { return frames.dim(1); }

  void validate() const {
    require(frames.rank() == 2 && frames.dim(0) >= 1 && frames.dim(1) >= 1, Errc::invalid_input,
            "feature sequence needs at least one frame and one dimension");
    require(frame_stride_ms > 0, Errc::invalid_input, "frame stride must be positive");
    frames.assert_finite("features");
  }
};

struct CorpusStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per-dimension mean and population std over all frames of all utterances.
/// Std is floored at 1e-6 so degenerate dimensions stay usable.
inline CorpusStats compute_stats(const std::vector<FeatureSequence>& corpus) {
  require(!corpus.empty(), Errc::invalid_input, "compute_stats: empty corpus");
  const std::int64_t d = corpus.front().dim();
  std::vector<double> sum(static_cast<std::size_t>(d), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(d), 0.0);
  std::int64_t n = 0;
  for (const auto& seq : corpus) {
    require(seq.dim() == d, Errc::dim_mismatch, "compute_stats: inconsistent feature dim");
    for (std::int64_t t = 0; t < seq.length(); ++t) {
      for (std::int64_t j = 0; j < d; ++j) {
        const double v = seq.frames.at(t, j);
        sum[static_cast<std::size_t>(j)] += v;
        sumsq[static_cast<std::size_t>(j)] += v * v;
      }
      ++n;
    }
  }
  CorpusStats stats;
  stats.mean.resize(static_cast<std::size_t>(d));
  stats.std.resize(static_cast<std::size_t>(d));
  for (std::int64_t j = 0; j < d; ++j) {
    const auto ju = static_cast<std::size_t>(j);
    const double mu = sum[ju] / static_cast<double>(n);
    double var = sumsq[ju] / static_cast<double>(n) - mu * mu;
    if (var < 0) var = 0;  // rounding guard
    stats.mean[ju] = mu;
    stats.std[ju] = std::max(std::sqrt(var), 1e-6);
  }
  return stats;
}

/// (x - mean) / std, per dimension.
inline FeatureSequence normalize(const FeatureSequence& seq, const CorpusStats& stats) {
  require(seq.dim() == static_cast<std::int64_t>(stats.mean.size()) &&
              stats.mean.size() == stats.std.size(),
          Errc::dim_mismatch, "normalize: stats dim mismatch");
  FeatureSequence out = seq;
  for (std::int64_t t = 0; t < seq.length(); ++t)
    for (std::int64_t j = 0; j < seq.dim(); ++j) {
      const auto ju = static_cast<std::size_t>(j);
      out.frames.at(t, j) =
          static_cast<float>((seq.frames.at(t, j) - stats.mean[ju]) / stats.std[ju]);
    }
  return out;
}

/// Concatenates every k consecutive frames into one; trailing remainder frames
/// are dropped and the stride scales by k so label timelines stay aligned.
inline FeatureSequence stack_frames(const FeatureSequence& seq, std::int64_t k) {
  require(k >= 1, Errc::precondition, "stack_frames: k must be >= 1");
  require(seq.length() >= k, Errc::invalid_input, "stack_frames: sequence shorter than k");
  const std::int64_t t_out = seq.length() / k;
  const std::int64_t d = seq.dim();
  FeatureSequence out;
  out.frames = Tensor<float>({t_out, k * d});
  out.frame_stride_ms = seq.frame_stride_ms * static_cast<double>(k);
  for (std::int64_t i = 0; i < t_out; ++i)
    for (std::int64_t g = 0; g < k; ++g)
      for (std::int64_t j = 0; j < d; ++j)
        out.frames.at(i, g * d + j) = seq.frames.at(i * k + g, j);
  return out;
}

// ---- feature file format ----------------------------------------------------
// Fixed little-endian header (magic "BRQF", u32 version, u32 T, u32 d,
// f32 stride_ms, u32 precision in bytes) followed by row-major payload at the
// stored precision.

namespace detail {
constexpr char kFeatureMagic[4] = {'B', 'R', 'Q', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}
}  // namespace detail

inline void write_features(const FeatureSequence& seq, const std::filesystem::path& path,
                           std::uint32_t precision_bytes = 4) {
  seq.validate();
  require(precision_bytes == 4 || precision_bytes == 8, Errc::invalid_input,
          "feature precision must be 4 or 8 bytes");
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io_error, "cannot open for write: " + path.string());
  os.write(detail::kFeatureMagic, 4);
  detail::write_pod(os, detail::kFeatureVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(seq.length()));
  detail::write_pod(os, static_cast<std::uint32_t>(seq.dim()));
  detail::write_pod(os, static_cast<float>(seq.frame_stride_ms));
  detail::write_pod(os, precision_bytes);
  if (precision_bytes == 4) {
    os.write(reinterpret_cast<const char*>(seq.frames.data()),
             static_cast<std::streamsize>(seq.frames.numel() * 4));
  } else {
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i)
      detail::write_pod(os, static_cast<double>(seq.frames[i]));
  }
  require(static_cast<bool>(os), Errc::io_error, "write failed: " + path.string());
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::io_error, "cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  require(static_cast<bool>(is) && std::memcmp(magic, detail::kFeatureMagic, 4) == 0,
          Errc::malformed_header, "bad feature file magic: " + path.string());
  std::uint32_t version = 0, t = 0, d = 0, precision = 0;
  float stride = 0;
  bool header_ok = detail::read_pod(is, version) && detail::read_pod(is, t) &&
                   detail::read_pod(is, d) && detail::read_pod(is, stride) &&
                   detail::read_pod(is, precision);
  require(header_ok, Errc::malformed_header, "short feature header: " + path.string());
  require(version == detail::kFeatureVersion, Errc::malformed_header,
          "unsupported feature file version " + std::to_string(version));
  require(t >= 1 && d >= 1 && stride > 0 && (precision == 4 || precision == 8),
          Errc::malformed_header, "invalid feature header fields: " + path.string());
  FeatureSequence seq;
  seq.frame_stride_ms = stride;
  seq.frames = Tensor<float>({static_cast<std::int64_t>(t), static_cast<std::int64_t>(d)});
  if (precision == 4) {
    is.read(reinterpret_cast<char*>(seq.frames.data()),
            static_cast<std::streamsize>(seq.frames.numel() * 4));
    require(static_cast<bool>(is), Errc::truncated_payload, "truncated features: " + path.string());
  } else {
    for (std::int64_t i = 0; i < seq.frames.numel(); ++i) {
      double v;
      require(detail::read_pod(is, v), Errc::truncated_payload,
              "truncated features: " + path.string());
      seq.frames[i] = static_cast<float>(v);
    }
  }
  return seq;
}

}  // namespace bestrq
