#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "threadsumm/common.hpp"
#include "threadsumm/rouge.hpp"

// Summary assembly from per-sentence scores: visit sentences by descending
// score, keep one while it fits the word budget and says enough new things,
// output in reading order.

namespace threadsumm {

using Bigram = std::pair<std::string, std::string>;

inline std::vector<Bigram> sentence_bigrams(
    const std::vector<std::string>& tokens, bool keep_stopwords = true) {
  std::vector<std::string> norm = score_tokens(tokens, keep_stopwords);
  std::vector<Bigram> out;
  for (std::size_t i = 0; i + 1 < norm.size(); ++i)
    out.push_back({norm[i], norm[i + 1]});
  return out;
}

// Share of a candidate's bigrams not already covered. A sentence with no
// bigrams at all counts as fully novel.
inline double novelty_ratio(const std::vector<std::string>& tokens,
                            const std::set<Bigram>& covered,
                            bool keep_stopwords = true) {
  std::vector<Bigram> grams = sentence_bigrams(tokens, keep_stopwords);
  if (grams.empty()) return 1.0;
  std::size_t fresh = 0;
  for (const auto& g : grams)
    if (!covered.count(g)) ++fresh;
  return static_cast<double>(fresh) / static_cast<double>(grams.size());
}

struct ExtractConfig {
  double ratio = 0.2;           // word budget as share of thread words
  double novelty = 0.5;         // minimum share of new bigrams to admit
  bool stop_on_first_overflow = false;
  bool keep_stopwords = true;
};

struct ExtractResult {
  std::vector<std::size_t> selected;  // ascending sentence indices
  std::size_t budget_words = 0;
  std::size_t used_words = 0;
  std::vector<std::size_t> rejected_budget;
  std::vector<std::size_t> rejected_novelty;
  // set when nothing fit the budget and the top-scored sentence was taken
  bool guaranteed_pick = false;
};

inline ExtractResult extract_summary(
    const std::vector<std::vector<std::string>>& sentences,
    const std::vector<double>& scores, const ExtractConfig& cfg = {}) {
  if (sentences.size() != scores.size())
    throw DataError("extract_summary: " + std::to_string(sentences.size()) +
                    " sentences vs " + std::to_string(scores.size()) +
                    " scores");
  if (cfg.ratio <= 0.0 || cfg.ratio > 1.0)
    throw ConfigError("extract_summary: ratio must be in (0, 1], got " +
                      std::to_string(cfg.ratio));
  ExtractResult res;
  if (sentences.empty()) return res;

  std::size_t total = 0;
  std::vector<std::size_t> words(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    words[i] = word_count(sentences[i]);
    total += words[i];
  }
  res.budget_words = static_cast<std::size_t>(
      std::floor(cfg.ratio * static_cast<double>(total)));

  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (scores[a] != scores[b]) return scores[a] > scores[b];
                     return a < b;
                   });

  std::set<Bigram> covered;
  for (std::size_t idx : order) {
    if (res.used_words + words[idx] > res.budget_words) {
      res.rejected_budget.push_back(idx);
      if (cfg.stop_on_first_overflow) break;
      continue;
    }
    if (novelty_ratio(sentences[idx], covered, cfg.keep_stopwords) <
        cfg.novelty) {
      res.rejected_novelty.push_back(idx);
      continue;
    }
    res.selected.push_back(idx);
    res.used_words += words[idx];
    for (const auto& g : sentence_bigrams(sentences[idx], cfg.keep_stopwords))
      covered.insert(g);
  }

  if (res.selected.empty()) {
    // budget too tight for anything: keep the best-scored sentence anyway
    res.guaranteed_pick = true;
    res.selected.push_back(order[0]);
    res.used_words = words[order[0]];
  }
  std::sort(res.selected.begin(), res.selected.end());
  return res;
}

}  // namespace threadsumm
