#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "threadsumm/common.hpp"

// Overlap scoring between token sequences: clipped n-gram precision/recall,
// longest-common-subsequence variants, and the binary confusion metrics used
// for sentence selection quality. Multi-reference scores are arithmetic
// means over references.

namespace threadsumm {

struct Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline bool is_word_token(const std::string& tok) {
  for (unsigned char c : tok)
    if (std::isalnum(c)) return true;
  return false;
}

inline std::size_t word_count(const std::vector<std::string>& tokens) {
  std::size_t n = 0;
  for (const auto& t : tokens)
    if (is_word_token(t)) ++n;
  return n;
}

inline const std::unordered_set<std::string>& stopword_set() {
  static const std::unordered_set<std::string> words = {
      "a",    "an",    "the",  "and",   "or",    "but",  "if",    "then",
      "is",   "are",   "was",  "were",  "be",    "been", "being", "am",
      "to",   "of",    "in",   "on",    "at",    "for",  "with",  "by",
      "from", "as",    "that", "this",  "these", "those", "it",   "its",
      "i",    "you",   "he",   "she",   "we",    "they", "them",  "his",
      "her",  "their", "our",  "your",  "my",    "me",   "us",    "him",
      "not",  "no",    "do",   "does",  "did",   "have", "has",   "had",
      "will", "would", "can",  "could", "should", "so",  "than",  "too",
      "very", "just",  "there", "here", "when",  "where", "what", "which",
      "who",  "how",   "s",    "t"};
  return words;
}

// Normalization applied before any overlap scoring: lowercase and drop
// tokens that carry no alphanumeric character. Stopwords stay by default.
inline std::vector<std::string> score_tokens(
    const std::vector<std::string>& raw, bool keep_stopwords = true) {
  std::vector<std::string> out;
  out.reserve(raw.size());
  for (const auto& tok : raw) {
    if (!is_word_token(tok)) continue;
    std::string low = tok;
    for (auto& c : low)
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!keep_stopwords && stopword_set().count(low)) continue;
    out.push_back(std::move(low));
  }
  return out;
}

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n || n == 0) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i,
                                      tokens.begin() + i + n)];
  return counts;
}

inline double f1_of(double p, double r) {
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace detail

// Clipped n-gram overlap against one reference.
inline Score rouge_n_single(const std::vector<std::string>& system,
                            const std::vector<std::string>& reference,
                            std::size_t n) {
  if (n == 0) throw ConfigError("rouge_n: order must be positive");
  auto sys = detail::ngram_counts(system, n);
  auto ref = detail::ngram_counts(reference, n);
  std::size_t sys_total = system.size() + 1 > n ? system.size() + 1 - n : 0;
  std::size_t ref_total = reference.size() + 1 > n ? reference.size() + 1 - n : 0;
  if (sys_total == 0 || ref_total == 0) return {};
  std::size_t overlap = 0;
  for (const auto& [gram, c] : sys) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  Score s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(sys_total);
  s.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  s.f1 = detail::f1_of(s.precision, s.recall);
  return s;
}

inline Score rouge_n(const std::vector<std::string>& system,
                     const std::vector<std::vector<std::string>>& references,
                     std::size_t n) {
  if (references.empty()) return {};
  Score acc;
  for (const auto& ref : references) {
    Score s = rouge_n_single(system, ref, n);
    acc.precision += s.precision;
    acc.recall += s.recall;
    acc.f1 += s.f1;
  }
  const double k = static_cast<double>(references.size());
  return {acc.precision / k, acc.recall / k, acc.f1 / k};
}

inline std::size_t lcs_length(const std::vector<std::string>& a,
                              const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline Score rouge_l_single(const std::vector<std::string>& system,
                            const std::vector<std::string>& reference) {
  if (system.empty() || reference.empty()) return {};
  const double l = static_cast<double>(lcs_length(system, reference));
  Score s;
  s.precision = l / static_cast<double>(system.size());
  s.recall = l / static_cast<double>(reference.size());
  s.f1 = detail::f1_of(s.precision, s.recall);
  return s;
}

inline Score rouge_l(const std::vector<std::string>& system,
                     const std::vector<std::vector<std::string>>& references) {
  if (references.empty()) return {};
  Score acc;
  for (const auto& ref : references) {
    Score s = rouge_l_single(system, ref);
    acc.precision += s.precision;
    acc.recall += s.recall;
    acc.f1 += s.f1;
  }
  const double k = static_cast<double>(references.size());
  return {acc.precision / k, acc.recall / k, acc.f1 / k};
}

struct SentenceMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline SentenceMetrics sentence_metrics(const std::vector<int>& predicted,
                                        const std::vector<int>& actual) {
  if (predicted.size() != actual.size())
    throw DataError("sentence_metrics: " + std::to_string(predicted.size()) +
                    " predictions vs " + std::to_string(actual.size()) +
                    " labels");
  SentenceMetrics m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0, a = actual[i] != 0;
    if (p && a)
      ++m.tp;
    else if (p && !a)
      ++m.fp;
    else if (!p && a)
      ++m.fn;
    else
      ++m.tn;
  }
  m.precision = m.tp + m.fp > 0
                    ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp)
                    : 0.0;
  m.recall = m.tp + m.fn > 0
                 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn)
                 : 0.0;
  m.f1 = detail::f1_of(m.precision, m.recall);
  return m;
}

}  // namespace threadsumm
