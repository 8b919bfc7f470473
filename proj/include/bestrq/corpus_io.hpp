#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bestrq/common.hpp"
#include "bestrq/features.hpp"
#include "bestrq/synth.hpp"

namespace bestrq {

// A corpus on disk is a directory of feature files plus a JSON-lines
// transcript index: {"id": ..., "tokens": [...]}, one utterance per line.
// Line order in the index defines corpus order.

inline void write_corpus(const std::vector<Utterance>& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  std::ofstream index(dir / "transcripts.jsonl");
  require(static_cast<bool>(index), Errc::io_error, "cannot write transcript index in " + dir.string());
  for (const auto& utt : corpus) {
    write_features(utt.features, dir / "features" / (utt.id + ".feat"));
    nlohmann::json line;
    line["id"] = utt.id;
    line["tokens"] = utt.transcript;
    index << line.dump() << "\n";
  }
  require(static_cast<bool>(index), Errc::io_error, "transcript index write failed");
}

inline std::vector<Utterance> read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream index(dir / "transcripts.jsonl");
  require(static_cast<bool>(index), Errc::io_error,
          "cannot open transcript index: " + (dir / "transcripts.jsonl").string());
  std::vector<Utterance> corpus;
  std::string line;
  std::int64_t line_no = 0;
  std::int64_t dim = -1;
  while (std::getline(index, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse_error, "transcripts.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    require(j.contains("id") && j.contains("tokens"), Errc::parse_error,
            "transcripts.jsonl line " + std::to_string(line_no) + ": missing id/tokens");
    Utterance utt;
    utt.id = j["id"].get<std::string>();
    utt.transcript = j["tokens"].get<std::vector<std::int64_t>>();
    require(!utt.transcript.empty(), Errc::invalid_input, "empty transcript for " + utt.id);
    utt.features = read_features(dir / "features" / (utt.id + ".feat"));
    if (dim < 0) dim = utt.features.dim();
    require(utt.features.dim() == dim, Errc::dim_mismatch,
            "feature dim varies across corpus at " + utt.id);
    corpus.push_back(std::move(utt));
  }
  require(!corpus.empty(), Errc::invalid_input, "corpus is empty: " + dir.string());
  return corpus;
}

inline std::vector<FeatureSequence> corpus_features(const std::vector<Utterance>& corpus) {
  std::vector<FeatureSequence> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus) out.push_back(u.features);
  return out;
}

inline void write_stats(const CorpusStats& stats, const std::filesystem::path& path) {
  nlohmann::json j;
  j["mean"] = stats.mean;
  j["std"] = stats.std;
  std::ofstream os(path);
  require(static_cast<bool>(os), Errc::io_error, "cannot write stats: " + path.string());
  os << j.dump(2) << "\n";
}

inline CorpusStats read_stats(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::io_error, "cannot open stats: " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse_error, "stats file " + path.string() + ": " + e.what());
  }
  CorpusStats stats;
  stats.mean = j.at("mean").get<std::vector<double>>();
  stats.std = j.at("std").get<std::vector<double>>();
  require(stats.mean.size() == stats.std.size() && !stats.mean.empty(), Errc::parse_error,
          "stats file has inconsistent mean/std");
  for (double s : stats.std)
    require(s > 0, Errc::invalid_input, "stats std must be positive");
  return stats;
}

}  // namespace bestrq
