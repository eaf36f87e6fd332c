#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "threadsumm/common.hpp"
#include "threadsumm/rouge.hpp"

// Greedy construction of extractive training labels: grow the selected set
// one sentence at a time, always taking the candidate that lifts the
// unigram overlap with the reference summaries the most, until the word
// budget is hit or no candidate strictly improves.

namespace threadsumm {

enum class OracleMetric { f1, recall };

struct OracleConfig {
  double ratio = 0.2;  // budget share of the thread's words, ceil-rounded
  OracleMetric metric = OracleMetric::f1;
  bool keep_stopwords = true;
};

struct OracleResult {
  std::vector<int> labels;               // one per sentence
  std::vector<std::size_t> picked;       // greedy order
  std::vector<double> trace;             // metric after each pick
  double score = 0.0;
  std::size_t budget_words = 0;
  std::size_t used_words = 0;
  bool empty_reference = false;
};

inline OracleResult greedy_label(
    const std::vector<std::vector<std::string>>& sentences,
    const std::vector<std::vector<std::string>>& golds,
    const OracleConfig& cfg = {}) {
  if (cfg.ratio <= 0.0 || cfg.ratio > 1.0)
    throw ConfigError("greedy_label: ratio must be in (0, 1], got " +
                      std::to_string(cfg.ratio));
  OracleResult res;
  res.labels.assign(sentences.size(), 0);
  if (sentences.empty()) return res;

  std::vector<std::vector<std::string>> refs;
  for (const auto& g : golds) {
    auto norm = score_tokens(g, cfg.keep_stopwords);
    if (!norm.empty()) refs.push_back(std::move(norm));
  }
  if (refs.empty()) {
    res.empty_reference = true;
    return res;
  }

  std::size_t total = 0;
  std::vector<std::size_t> words(sentences.size());
  std::vector<std::vector<std::string>> norm(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    words[i] = word_count(sentences[i]);
    total += words[i];
    norm[i] = score_tokens(sentences[i], cfg.keep_stopwords);
  }
  res.budget_words = static_cast<std::size_t>(
      std::ceil(cfg.ratio * static_cast<double>(total)));

  auto metric_of = [&](const std::vector<std::string>& sys) {
    Score s = rouge_n(sys, refs, 1);
    return cfg.metric == OracleMetric::f1 ? s.f1 : s.recall;
  };

  double current_score = 0.0;
  while (res.used_words < res.budget_words) {
    double best = current_score;
    std::size_t best_idx = sentences.size();
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (res.labels[i]) continue;
      // candidate system = selected set plus sentence i, reading order
      std::vector<std::string> sys;
      for (std::size_t k = 0; k < sentences.size(); ++k) {
        if (!res.labels[k] && k != i) continue;
        sys.insert(sys.end(), norm[k].begin(), norm[k].end());
      }
      double m = metric_of(sys);
      if (m > best) {
        best = m;
        best_idx = i;
      }
    }
    if (best_idx == sentences.size()) break;  // no strict improvement left
    res.labels[best_idx] = 1;
    res.picked.push_back(best_idx);
    res.trace.push_back(best);
    res.used_words += words[best_idx];
    current_score = best;
  }
  res.score = current_score;
  return res;
}

}  // namespace threadsumm
