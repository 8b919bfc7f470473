#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bestrq/common.hpp"

namespace bestrq {

struct TimedWord {
  std::string text;
  double start_ms = 0.0;
  double end_ms = 0.0;
};

struct TimedHypothesis {
  std::string utterance_id;
  std::vector<TimedWord> words;  // ordered by start_ms, ties by end_ms
};

struct MatchedPair {
  TimedWord base;
  TimedWord comp;
};

struct UtteranceMatches {
  std::string utterance_id;
  std::vector<MatchedPair> pairs;
};

struct MatchedPairSet {
  std::vector<UtteranceMatches> utterances;
  std::int64_t total_matched() const {
    std::int64_t n = 0;
    for (const auto& u : utterances) n += static_cast<std::int64_t>(u.pairs.size());
    return n;
  }
};

/// Minimum-edit-distance alignment over word texts (unit costs). Among
/// minimum-cost alignments the one with the most matched words wins, and the
/// remaining ties resolve greedily from the left preferring
/// match > substitution > deletion > insertion. Matching depends only on the
/// texts, never on the timestamps.
inline std::vector<MatchedPair> align_words(const TimedHypothesis& base,
                                            const TimedHypothesis& comp) {
  require(base.utterance_id == comp.utterance_id, Errc::invalid_input,
          "align_words: utterance ids differ (" + base.utterance_id + " vs " + comp.utterance_id + ")");
  const std::int64_t n = static_cast<std::int64_t>(base.words.size());
  const std::int64_t m = static_cast<std::int64_t>(comp.words.size());

  struct Cell {
    std::int64_t cost;
    std::int64_t matches;
  };
  auto better = [](const Cell& a, const Cell& b) {
    return a.cost < b.cost || (a.cost == b.cost && a.matches > b.matches);
  };
  // suffix table: best (cost, matches) aligning base[i:] with comp[j:]
  std::vector<Cell> table(static_cast<std::size_t>((n + 1) * (m + 1)));
  auto F = [&](std::int64_t i, std::int64_t j) -> Cell& {
    return table[static_cast<std::size_t>(i * (m + 1) + j)];
  };
  F(n, m) = {0, 0};
  for (std::int64_t i = n - 1; i >= 0; --i) F(i, m) = {n - i, 0};
  for (std::int64_t j = m - 1; j >= 0; --j) F(n, j) = {m - j, 0};
  for (std::int64_t i = n - 1; i >= 0; --i) {
    for (std::int64_t j = m - 1; j >= 0; --j) {
      const bool eq = base.words[static_cast<std::size_t>(i)].text ==
                      comp.words[static_cast<std::size_t>(j)].text;
      Cell diag = F(i + 1, j + 1);
      diag.cost += eq ? 0 : 1;
      diag.matches += eq ? 1 : 0;
      Cell del = F(i + 1, j);
      del.cost += 1;
      Cell ins = F(i, j + 1);
      ins.cost += 1;
      Cell best = diag;
      if (better(del, best)) best = del;
      if (better(ins, best)) best = ins;
      F(i, j) = best;
    }
  }
  // greedy walk from the front: the earliest position takes the most
  // preferred move that still achieves the optimum
  std::vector<MatchedPair> pairs;
  std::int64_t i = 0, j = 0;
  while (i < n || j < m) {
    const Cell want = F(i, j);
    if (i < n && j < m) {
      const bool eq = base.words[static_cast<std::size_t>(i)].text ==
                      comp.words[static_cast<std::size_t>(j)].text;
      Cell diag = F(i + 1, j + 1);
      diag.cost += eq ? 0 : 1;
      diag.matches += eq ? 1 : 0;
      if (diag.cost == want.cost && diag.matches == want.matches) {
        if (eq)
          pairs.push_back({base.words[static_cast<std::size_t>(i)],
                           comp.words[static_cast<std::size_t>(j)]});
        ++i;
        ++j;
        continue;
      }
    }
    if (i < n) {
      Cell del = F(i + 1, j);
      del.cost += 1;
      if (del.cost == want.cost && del.matches == want.matches) {
        ++i;
        continue;
      }
    }
    ++j;  // insertion is the only move left
  }
  return pairs;
}

/// Eq.-style relative latency: mean of (start shift + end shift) / 2 over all
/// matched words. Negative means the compared model fires earlier.
inline double relative_latency(const MatchedPairSet& matched) {
  const std::int64_t n = matched.total_matched();
  require(n >= 1, Errc::undefined_metric, "relative_latency: no matched words");
  double acc = 0.0;
  for (const auto& utt : matched.utterances)
    for (const auto& p : utt.pairs)
      acc += (p.comp.start_ms - p.base.start_ms) + (p.comp.end_ms - p.base.end_ms);
  return acc / (2.0 * static_cast<double>(n));
}

/// JSON-lines hypotheses: {"id": str, "words": [{"w": str, "s": ms, "e": ms}]}.
/// Violated word ordering is repaired by sorting, with a warning.
inline std::map<std::string, TimedHypothesis> parse_hypotheses(
    const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::io_error, "cannot open hypotheses: " + path.string());
  std::map<std::string, TimedHypothesis> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::parse_error,
           path.filename().string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    require(j.contains("id") && j.contains("words"), Errc::parse_error,
            path.filename().string() + " line " + std::to_string(line_no) + ": missing id/words");
    TimedHypothesis hyp;
    hyp.utterance_id = j["id"].get<std::string>();
    require(!out.count(hyp.utterance_id), Errc::duplicate_id,
            "duplicate utterance id '" + hyp.utterance_id + "' at line " + std::to_string(line_no));
    for (const auto& wj : j["words"]) {
      require(wj.contains("w") && wj.contains("s") && wj.contains("e"), Errc::parse_error,
              path.filename().string() + " line " + std::to_string(line_no) + ": word needs w/s/e");
      TimedWord w{wj["w"].get<std::string>(), wj["s"].get<double>(), wj["e"].get<double>()};
      require(w.end_ms >= w.start_ms, Errc::invalid_input,
              "word '" + w.text + "' in " + hyp.utterance_id + " ends before it starts");
      hyp.words.push_back(std::move(w));
    }
    auto ordered = [](const TimedWord& a, const TimedWord& b) {
      return a.start_ms < b.start_ms || (a.start_ms == b.start_ms && a.end_ms < b.end_ms);
    };
    if (!std::is_sorted(hyp.words.begin(), hyp.words.end(), ordered)) {
      if (warnings)
        warnings->push_back("words out of order in " + hyp.utterance_id + "; sorted by start time");
      std::stable_sort(hyp.words.begin(), hyp.words.end(), ordered);
    }
    out.emplace(hyp.utterance_id, std::move(hyp));
  }
  return out;
}

struct LatencyResult {
  double relative_latency_ms = 0.0;
  std::int64_t matched_words = 0;
  std::int64_t utterances = 0;
};

/// Aligns two hypothesis sets; utterances present in only one side are
/// skipped with a warning and excluded from the match count.
inline LatencyResult compare_hypotheses(const std::map<std::string, TimedHypothesis>& base,
                                        const std::map<std::string, TimedHypothesis>& comp,
                                        std::vector<std::string>* warnings = nullptr) {
  MatchedPairSet set;
  std::int64_t common = 0;
  for (const auto& [id, base_hyp] : base) {
    auto it = comp.find(id);
    if (it == comp.end()) {
      if (warnings) warnings->push_back("utterance '" + id + "' missing from compared file; skipped");
      continue;
    }
    ++common;
    UtteranceMatches um;
    um.utterance_id = id;
    for (auto& p : align_words(base_hyp, it->second)) um.pairs.push_back(std::move(p));
    set.utterances.push_back(std::move(um));
  }
  if (warnings)
    for (const auto& [id, _] : comp)
      if (!base.count(id)) warnings->push_back("utterance '" + id + "' missing from baseline file; skipped");
  LatencyResult res;
  res.utterances = common;
  res.matched_words = set.total_matched();
  res.relative_latency_ms = relative_latency(set);
  return res;
}

}  // namespace bestrq
