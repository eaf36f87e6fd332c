#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "threadsumm/common.hpp"
#include "threadsumm/tensor.hpp"

// Corpus input: tokenization, thread records as JSON lines, pretrained
// word vectors in the classic text format, and optional contextual vector
// companions keyed by thread and sentence.

namespace threadsumm {

struct Sentence {
  std::vector<std::string> tokens;
  int post = -1;  // author turn, -1 when unknown
};

struct Thread {
  std::string id;
  std::vector<Sentence> sentences;
  std::vector<std::vector<std::string>> golds;
  std::string source = "forum";

  std::vector<std::vector<std::string>> sentence_tokens() const {
    std::vector<std::vector<std::string>> out;
    out.reserve(sentences.size());
    for (const auto& s : sentences) out.push_back(s.tokens);
    return out;
  }
};

// Lowercase, split on whitespace, then peel leading and trailing
// punctuation into their own tokens. Interior punctuation (it's, co-op)
// stays put.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string raw = text.substr(i, j - i);
    for (auto& c : raw)
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    i = j;

    std::size_t b = 0, e = raw.size();
    std::vector<std::string> lead;
    while (b < e && std::ispunct(static_cast<unsigned char>(raw[b])))
      lead.push_back(std::string(1, raw[b++]));
    std::vector<std::string> trail;
    while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1])))
      trail.insert(trail.begin(), std::string(1, raw[--e]));
    for (auto& t : lead) out.push_back(std::move(t));
    if (e > b) out.push_back(raw.substr(b, e - b));
    for (auto& t : trail) out.push_back(std::move(t));
  }
  return out;
}

// Sentence boundary: a run of ./!/? followed by whitespace (or end of text).
inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  const std::size_t n = text.size();
  std::size_t i = 0;
  auto flush = [&] {
    std::size_t a = 0, b = cur.size();
    while (a < b && std::isspace(static_cast<unsigned char>(cur[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(cur[b - 1]))) --b;
    if (b > a) out.push_back(cur.substr(a, b - a));
    cur.clear();
  };
  while (i < n) {
    char c = text[i];
    cur.push_back(c);
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i + 1;
      while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) {
        cur.push_back(text[j]);
        ++j;
      }
      if (j >= n || std::isspace(static_cast<unsigned char>(text[j]))) {
        flush();
      }
      i = j;
      continue;
    }
    ++i;
  }
  flush();
  return out;
}

namespace detail {

inline std::vector<std::string> tokens_from_json(const nlohmann::json& v) {
  std::vector<std::string> out;
  if (v.is_string()) return tokenize(v.get<std::string>());
  if (!v.is_array()) throw DataError("expected a token array or string");
  for (const auto& t : v) {
    if (!t.is_string()) throw DataError("token entries must be strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

inline Thread thread_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("record is not a JSON object");
  Thread t;
  if (!j.contains("id"))
    throw DataError("record is missing its \"id\"");
  if (j["id"].is_string())
    t.id = j["id"].get<std::string>();
  else if (j["id"].is_number_integer())
    t.id = std::to_string(j["id"].get<long long>());
  else
    throw DataError("\"id\" must be a string or integer");
  if (j.contains("source") && j["source"].is_string())
    t.source = j["source"].get<std::string>();

  if (j.contains("sentences")) {
    if (!j["sentences"].is_array())
      throw DataError("\"sentences\" must be an array in thread " + t.id);
    for (const auto& sj : j["sentences"]) {
      Sentence s;
      if (sj.is_object()) {
        if (!sj.contains("tokens"))
          throw DataError("sentence without \"tokens\" in thread " + t.id);
        s.tokens = tokens_from_json(sj["tokens"]);
        if (sj.contains("post")) {
          if (!sj["post"].is_number_integer())
            throw DataError("\"post\" must be an integer in thread " + t.id);
          s.post = sj["post"].get<int>();
        }
      } else {
        s.tokens = tokens_from_json(sj);
      }
      if (s.tokens.empty())
        throw DataError("empty sentence in thread " + t.id);
      t.sentences.push_back(std::move(s));
    }
    if (j.contains("golds")) {
      if (!j["golds"].is_array())
        throw DataError("\"golds\" must be an array in thread " + t.id);
      for (const auto& g : j["golds"])
        t.golds.push_back(tokens_from_json(g));
    }
  } else if (j.contains("text")) {
    // raw record: split into sentences, tokenize everything
    if (!j["text"].is_string())
      throw DataError("\"text\" must be a string in thread " + t.id);
    for (const auto& raw : split_sentences(j["text"].get<std::string>())) {
      Sentence s;
      s.tokens = tokenize(raw);
      if (!s.tokens.empty()) t.sentences.push_back(std::move(s));
    }
    if (j.contains("summary")) {
      const auto& sm = j["summary"];
      if (sm.is_string()) {
        for (const auto& raw : split_sentences(sm.get<std::string>())) {
          auto toks = tokenize(raw);
          if (!toks.empty()) t.golds.push_back(std::move(toks));
        }
        if (t.golds.empty() && !sm.get<std::string>().empty())
          t.golds.push_back(tokenize(sm.get<std::string>()));
      } else if (sm.is_array()) {
        for (const auto& g : sm) t.golds.push_back(tokens_from_json(g));
      } else {
        throw DataError("\"summary\" must be a string or array in thread " +
                        t.id);
      }
    }
  } else {
    throw DataError("record has neither \"sentences\" nor \"text\" (thread " +
                    t.id + ")");
  }
  if (t.sentences.empty())
    throw DataError("thread " + t.id + " has no sentences");
  return t;
}

}  // namespace detail

struct LoadStats {
  std::size_t loaded = 0;
  std::size_t skipped = 0;
};

// Line-by-line JSONL reader, one thread per line.
class ThreadReader {
 public:
  explicit ThreadReader(const std::string& path, bool skip_malformed = false)
      : in_(path), path_(path), skip_(skip_malformed) {
    if (!in_) throw DataError("cannot open threads file " + path);
  }

  std::optional<Thread> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      bool blank = true;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      if (blank) continue;
      try {
        nlohmann::json j = nlohmann::json::parse(line);
        Thread t = detail::thread_from_json(j);
        ++stats_.loaded;
        return t;
      } catch (const std::exception& e) {
        if (!skip_) {
          throw DataError(path_ + ":" + std::to_string(line_no_) + ": " +
                          e.what());
        }
        ++stats_.skipped;
      }
    }
    return std::nullopt;
  }

  const LoadStats& stats() const { return stats_; }

 private:
  std::ifstream in_;
  std::string path_;
  bool skip_;
  std::size_t line_no_ = 0;
  LoadStats stats_;
};

inline std::vector<Thread> load_threads(const std::string& path,
                                        bool skip_malformed = false,
                                        LoadStats* stats = nullptr) {
  ThreadReader reader(path, skip_malformed);
  std::vector<Thread> out;
  while (auto t = reader.next()) out.push_back(std::move(*t));
  if (stats) *stats = reader.stats();
  return out;
}

// Text-format pretrained vectors: header "count dim", then one word and
// dim doubles per line. Duplicate words keep the last row.
class EmbeddingTable {
 public:
  static EmbeddingTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open embeddings file " + path);
    EmbeddingTable t;
    std::string header;
    if (!std::getline(in, header))
      throw DataError("embeddings file " + path + " is empty");
    {
      std::istringstream hs(header);
      long long count = 0, dim = 0;
      if (!(hs >> count >> dim) || count < 0 || dim <= 0)
        throw DataError("embeddings header must be \"count dim\", got \"" +
                        header + "\"");
      t.dim_ = static_cast<std::size_t>(dim);
    }
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string word;
      ls >> word;
      if (word.empty()) continue;
      std::vector<double> vec(t.dim_);
      for (std::size_t k = 0; k < t.dim_; ++k) {
        if (!(ls >> vec[k]))
          throw DataError(path + ":" + std::to_string(line_no) + ": word \"" +
                          word + "\" has fewer than " +
                          std::to_string(t.dim_) + " values");
      }
      double extra;
      if (ls >> extra)
        throw DataError(path + ":" + std::to_string(line_no) + ": word \"" +
                        word + "\" has more than " + std::to_string(t.dim_) +
                        " values");
      auto [it, fresh] = t.table_.insert_or_assign(std::move(word), std::move(vec));
      (void)it;
      if (!fresh) ++t.duplicates_;
    }
    return t;
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  std::size_t duplicates() const { return duplicates_; }

  const std::vector<double>* find(const std::string& word) const {
    auto it = table_.find(word);
    return it == table_.end() ? nullptr : &it->second;
  }

  // Out-of-vocabulary words draw a deterministic vector from the word's
  // hash mixed with the run seed, so reruns agree byte for byte.
  std::vector<double> lookup(const std::string& word,
                             std::uint64_t seed) const {
    if (const auto* v = find(word)) return *v;
    Rng rng(fnv1a64(word) ^ (seed * 0x9e3779b97f4a7c15ull + 0x12345678ull));
    std::vector<double> out(dim_);
    for (auto& x : out) x = rng.uniform(kInitLoOov, kInitHiOov);
    return out;
  }

  static constexpr double kInitLoOov = -0.05;
  static constexpr double kInitHiOov = 0.05;

 private:
  std::unordered_map<std::string, std::vector<double>> table_;
  std::size_t dim_ = 0;
  std::size_t duplicates_ = 0;
};

struct TokenMatrix {
  Tensor matrix;           // [T x dim], zero rows past the real tokens
  std::vector<bool> mask;  // true on real rows
  std::size_t real = 0;
};

inline TokenMatrix embed_sentence(const EmbeddingTable& table,
                                  const std::vector<std::string>& tokens,
                                  std::uint64_t seed, std::size_t pad_to = 0) {
  if (tokens.empty()) throw DataError("embed_sentence: no tokens");
  const std::size_t T = std::max(tokens.size(), pad_to);
  std::vector<double> data(T * table.dim(), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::vector<double> v = table.lookup(tokens[i], seed);
    std::copy(v.begin(), v.end(), data.begin() + i * table.dim());
  }
  TokenMatrix out;
  out.matrix = Tensor::from({T, table.dim()}, std::move(data));
  out.mask.assign(T, false);
  for (std::size_t i = 0; i < tokens.size(); ++i) out.mask[i] = true;
  out.real = tokens.size();
  return out;
}

// Precomputed contextual vectors, one JSONL record per sentence:
//   {"id": "...", "sentence": 3, "vector": [...]}          sentence level
//   {"id": "...", "sentence": 3, "vectors": [[...], ...]}  token level
enum class ContextualLevel { token, sentence };

class ContextualStore {
 public:
  static ContextualStore load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open contextual vectors file " + path);
    ContextualStore store;
    std::string line;
    std::size_t line_no = 0;
    bool level_known = false;
    while (std::getline(in, line)) {
      ++line_no;
      bool blank = true;
      for (char c : line)
        if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
      if (blank) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const std::exception& e) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " +
                        e.what());
      }
      if (!j.is_object() || !j.contains("id") || !j.contains("sentence"))
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": need \"id\" and \"sentence\"");
      const std::string id = j["id"].get<std::string>();
      const std::size_t sent = j["sentence"].get<std::size_t>();
      const bool has_vec = j.contains("vector");
      const bool has_mat = j.contains("vectors");
      if (has_vec == has_mat)
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": need exactly one of \"vector\" or \"vectors\"");
      ContextualLevel level =
          has_vec ? ContextualLevel::sentence : ContextualLevel::token;
      if (!level_known) {
        store.level_ = level;
        level_known = true;
      } else if (store.level_ != level) {
        throw DataError(path + ":" + std::to_string(line_no) +
                        ": mixed sentence-level and token-level records");
      }
      std::vector<std::vector<double>> rows;
      if (has_vec) {
        rows.push_back(j["vector"].get<std::vector<double>>());
      } else {
        for (const auto& r : j["vectors"])
          rows.push_back(r.get<std::vector<double>>());
        if (rows.empty())
          throw DataError(path + ":" + std::to_string(line_no) +
                          ": empty \"vectors\"");
      }
      for (const auto& r : rows) {
        if (store.dim_ == 0) store.dim_ = r.size();
        if (r.size() != store.dim_ || store.dim_ == 0)
          throw DataError(path + ":" + std::to_string(line_no) +
                          ": vector width " + std::to_string(r.size()) +
                          " disagrees with " + std::to_string(store.dim_));
      }
      store.map_[key(id, sent)] = std::move(rows);
    }
    return store;
  }

  ContextualLevel level() const { return level_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return map_.size(); }

  // token level: one row per token; sentence level: a single row
  const std::vector<std::vector<double>>& rows(const std::string& id,
                                               std::size_t sentence) const {
    auto it = map_.find(key(id, sentence));
    if (it == map_.end())
      throw DataError("no contextual vectors for thread " + id +
                      " sentence " + std::to_string(sentence));
    return it->second;
  }

  bool has(const std::string& id, std::size_t sentence) const {
    return map_.count(key(id, sentence)) > 0;
  }

 private:
  static std::string key(const std::string& id, std::size_t s) {
    return id + "\x1f" + std::to_string(s);
  }
  std::unordered_map<std::string, std::vector<std::vector<double>>> map_;
  ContextualLevel level_ = ContextualLevel::sentence;
  std::size_t dim_ = 0;
};

}  // namespace threadsumm
