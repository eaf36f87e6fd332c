#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "threadsumm/common.hpp"
#include "threadsumm/data.hpp"
#include "threadsumm/layers.hpp"
#include "threadsumm/tensor.hpp"

// The full scorer: a word-level encoder turns each sentence into a vector,
// a thread-level encoder turns the sentence vectors into one thread vector,
// and a sigmoid head scores every sentence from [sentence; thread].

namespace threadsumm {

enum class ContextualMode { none, concat, replace };

struct ModelConfig {
  std::size_t embedding_dim = 0;
  std::size_t word_hidden = 200;
  std::size_t sentence_hidden = 100;
  std::size_t filters = 100;
  std::vector<std::size_t> fields = {2};
  std::size_t conv_depth = 1;
  std::size_t conv_stride = 1;
  double dropout = 0.3;
  bool use_attention = true;
  AttendOver attend_over = AttendOver::positions;
  ContextualMode contextual = ContextualMode::none;
  ContextualLevel contextual_level = ContextualLevel::sentence;
  std::size_t contextual_dim = 0;
  std::uint64_t oov_seed = 0;
};

// width of the token rows the word encoder consumes
inline std::size_t word_input_width(const ModelConfig& c) {
  if (c.contextual != ContextualMode::none &&
      c.contextual_level == ContextualLevel::token) {
    return c.contextual == ContextualMode::replace
               ? c.contextual_dim
               : c.embedding_dim + c.contextual_dim;
  }
  return c.embedding_dim;
}

// width of a sentence vector after any sentence-level merge
inline std::size_t sentence_vec_width(const ModelConfig& c) {
  if (c.contextual != ContextualMode::none &&
      c.contextual_level == ContextualLevel::sentence) {
    return c.contextual == ContextualMode::replace
               ? c.contextual_dim
               : c.filters + c.contextual_dim;
  }
  return c.filters;
}

struct ModelParams {
  LstmParams word_fwd, word_bwd;
  ConvParams word_conv;
  AttnParams word_attn;
  LstmParams sent_fwd, sent_bwd;
  ConvParams sent_conv;
  AttnParams sent_attn;
  DenseParams head;
};

namespace detail {

template <class L, class F>
void visit_lstm(const std::string& prefix, L& p, F&& f) {
  f(prefix + ".w_xi", p.w_xi);
  f(prefix + ".w_hi", p.w_hi);
  f(prefix + ".b_i", p.b_i);
  f(prefix + ".w_xf", p.w_xf);
  f(prefix + ".w_hf", p.w_hf);
  f(prefix + ".b_f", p.b_f);
  f(prefix + ".w_xo", p.w_xo);
  f(prefix + ".w_ho", p.w_ho);
  f(prefix + ".b_o", p.b_o);
  f(prefix + ".w_xg", p.w_xg);
  f(prefix + ".w_hg", p.w_hg);
  f(prefix + ".b_g", p.b_g);
}

template <class C, class F>
void visit_conv(const std::string& prefix, C& p, F&& f) {
  for (std::size_t t = 0; t < p.towers.size(); ++t) {
    auto& tower = p.towers[t];
    for (std::size_t l = 0; l < tower.layers.size(); ++l) {
      auto& layer = tower.layers[l];
      for (std::size_t k = 0; k < layer.filters.size(); ++k) {
        const std::string base = prefix + ".t" + std::to_string(t) + ".l" +
                                 std::to_string(l) + ".f" + std::to_string(k);
        f(base + ".w", layer.filters[k]);
        f(base + ".b", layer.biases[k]);
      }
    }
  }
}

template <class A, class F>
void visit_attn(const std::string& prefix, A& p, F&& f) {
  f(prefix + ".w", p.w);
  f(prefix + ".b", p.b);
  f(prefix + ".u", p.u);
}

}  // namespace detail

// Every learnable tensor in one fixed order. Checkpoints and optimizer
// state both lean on this order staying put.
template <class P, class F>
void visit_params(P& params, F&& f) {
  detail::visit_lstm("word_fwd", params.word_fwd, f);
  detail::visit_lstm("word_bwd", params.word_bwd, f);
  detail::visit_conv("word_conv", params.word_conv, f);
  detail::visit_attn("word_attn", params.word_attn, f);
  detail::visit_lstm("sent_fwd", params.sent_fwd, f);
  detail::visit_lstm("sent_bwd", params.sent_bwd, f);
  detail::visit_conv("sent_conv", params.sent_conv, f);
  detail::visit_attn("sent_attn", params.sent_attn, f);
  f("head.w", params.head.w);
  f("head.b", params.head.b);
}

inline std::vector<std::pair<std::string, Tensor*>> param_list(
    ModelParams& p) {
  std::vector<std::pair<std::string, Tensor*>> out;
  visit_params(p, [&](const std::string& name, Tensor& t) {
    out.emplace_back(name, &t);
  });
  return out;
}

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  visit_params(p, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

inline void validate_config(const ModelConfig& c) {
  if (c.attend_over == AttendOver::filters)
    throw ConfigError(
        "attention over the filter axis yields a vector whose width tracks "
        "the sentence length, which cannot feed the fixed-width scoring "
        "head; use attend_over=positions");
  if (c.word_hidden == 0 || c.sentence_hidden == 0)
    throw ConfigError("recurrent sizes must be positive");
  if (c.filters == 0) throw ConfigError("need at least one filter");
  if (c.fields.empty()) throw ConfigError("need at least one field size");
  for (std::size_t f : c.fields)
    if (f == 0) throw ConfigError("field sizes must be positive");
  if (c.conv_depth == 0) throw ConfigError("conv_depth must be positive");
  if (c.conv_stride == 0) throw ConfigError("conv_stride must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0)
    throw ConfigError("dropout must lie in [0, 1)");
  if (c.contextual != ContextualMode::none && c.contextual_dim == 0)
    throw ConfigError("contextual_dim must be positive when contextual "
                      "vectors are in use");
  if (word_input_width(c) == 0)
    throw ConfigError("token input width works out to zero; set "
                      "embedding_dim (or contextual_dim)");
}

inline ModelParams model_init(const ModelConfig& c, Rng& rng) {
  validate_config(c);
  ModelParams p;
  p.word_fwd = lstm_init(word_input_width(c), c.word_hidden, rng);
  p.word_bwd = lstm_init(word_input_width(c), c.word_hidden, rng);
  p.word_conv = conv_init(2 * c.word_hidden, c.filters, c.fields,
                          c.conv_depth, c.conv_stride, rng);
  p.word_attn = attn_init(c.filters, rng);
  p.sent_fwd = lstm_init(sentence_vec_width(c), c.sentence_hidden, rng);
  p.sent_bwd = lstm_init(sentence_vec_width(c), c.sentence_hidden, rng);
  p.sent_conv = conv_init(2 * c.sentence_hidden, c.filters, c.fields,
                          c.conv_depth, c.conv_stride, rng);
  p.sent_attn = attn_init(c.filters, rng);
  p.head = dense_init(sentence_vec_width(c) + c.filters, rng);
  return p;
}

// One pooled unit as the report sees it: which input rows it covers, which
// window won the pooling vote, and its attention weight.
struct UnitReport {
  std::size_t begin = 0, end = 0;
  std::size_t dom_begin = 0, dom_end = 0;
  double weight = 0.0;
};

struct SentenceEncoding {
  Tensor vec;
  std::vector<UnitReport> units;
};

namespace detail {

inline std::vector<UnitReport> unit_reports(const PooledUnits& pu,
                                            const std::vector<double>& w) {
  std::vector<UnitReport> out;
  for (std::size_t r = 0; r < pu.span.size(); ++r) {
    UnitReport u;
    u.begin = pu.span[r].first;
    u.end = pu.span[r].second;
    u.dom_begin = pu.dominant[r].first;
    u.dom_end = pu.dominant[r].second;
    u.weight = r < w.size() ? w[r] : 0.0;
    out.push_back(u);
  }
  return out;
}

// rows of a plain (untracked) matrix as rank-1 tensors, padded with zero
// rows up to min_rows
inline void matrix_rows(const Tensor& m, const std::vector<bool>& mask,
                        std::size_t min_rows, std::vector<Tensor>* rows,
                        std::vector<bool>* out_mask) {
  const std::size_t T = m.shape()[0];
  const std::size_t w = m.shape()[1];
  const auto& v = m.values();
  const std::size_t R = std::max(T, min_rows);
  rows->clear();
  out_mask->clear();
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> row(v.begin() + t * w, v.begin() + (t + 1) * w);
    rows->push_back(Tensor::from({w}, std::move(row)));
    out_mask->push_back(t < mask.size() ? mask[t] : true);
  }
  for (std::size_t t = T; t < R; ++t) {
    rows->push_back(Tensor({w}, 0.0));
    out_mask->push_back(false);
  }
}

}  // namespace detail

inline SentenceEncoding encode_sentence(const ModelParams& p,
                                        const ModelConfig& cfg,
                                        const TokenMatrix& tm, Rng& rng,
                                        bool training) {
  std::vector<Tensor> rows;
  std::vector<bool> mask;
  detail::matrix_rows(tm.matrix, tm.mask, p.word_conv.min_rows(), &rows,
                      &mask);
  Tensor h = bilstm_encode(p.word_fwd, p.word_bwd, rows, mask);
  h = dropout(h, cfg.dropout, rng, training);
  PooledUnits pu = conv_pool_units(p.word_conv, h, tm.real);
  AttnPooled ap = attention_pool(p.word_attn, pu.units, pu.real,
                                 cfg.use_attention, AttendOver::positions);
  SentenceEncoding enc;
  enc.vec = ap.vec;
  enc.units = detail::unit_reports(pu, ap.weights);
  return enc;
}

struct ThreadEncodingResult {
  Tensor vec;
  std::vector<UnitReport> units;  // spans index into the sentence list
};

inline ThreadEncodingResult encode_thread(const ModelParams& p,
                                          const ModelConfig& cfg,
                                          const std::vector<Tensor>& svecs,
                                          Rng& rng, bool training) {
  if (svecs.empty()) throw ShapeError("encode_thread: no sentence vectors");
  const std::size_t N = svecs.size();
  const std::size_t w = svecs[0].numel();
  std::vector<Tensor> rows = svecs;
  std::vector<bool> mask(N, true);
  while (rows.size() < p.sent_conv.min_rows()) {
    rows.push_back(Tensor({w}, 0.0));
    mask.push_back(false);
  }
  Tensor h = bilstm_encode(p.sent_fwd, p.sent_bwd, rows, mask);
  h = dropout(h, cfg.dropout, rng, training);
  PooledUnits pu = conv_pool_units(p.sent_conv, h, N);
  AttnPooled ap = attention_pool(p.sent_attn, pu.units, pu.real,
                                 cfg.use_attention, AttendOver::positions);
  ThreadEncodingResult enc;
  enc.vec = ap.vec;
  enc.units = detail::unit_reports(pu, ap.weights);
  return enc;
}

struct AttentionReport {
  std::vector<std::vector<UnitReport>> word_units;  // one list per sentence
  std::vector<UnitReport> sentence_units;
};

struct ForwardResult {
  Tensor probs;  // [N], one score per sentence
  AttentionReport attention;
};

namespace detail {

inline void check_contextual(const ModelConfig& cfg,
                             const ContextualStore* ctx) {
  if (cfg.contextual == ContextualMode::none) {
    if (ctx)
      throw ConfigError("contextual vectors were supplied but the config "
                        "does not use them");
    return;
  }
  if (!ctx)
    throw ConfigError("config asks for contextual vectors but none were "
                      "supplied");
  if (ctx->level() != cfg.contextual_level)
    throw ConfigError("contextual vector level does not match the config");
  if (ctx->dim() != cfg.contextual_dim)
    throw ConfigError("contextual vector width " + std::to_string(ctx->dim()) +
                      " does not match configured " +
                      std::to_string(cfg.contextual_dim));
}

// token rows for one sentence, with any token-level contextual merge
inline TokenMatrix token_matrix(const ModelConfig& cfg,
                                const EmbeddingTable& emb, const Thread& th,
                                std::size_t si, const ContextualStore* ctx) {
  const auto& toks = th.sentences[si].tokens;
  const bool tok_ctx = cfg.contextual != ContextualMode::none &&
                       cfg.contextual_level == ContextualLevel::token;
  if (!tok_ctx) return embed_sentence(emb, toks, cfg.oov_seed);

  const auto& rows = ctx->rows(th.id, si);
  if (rows.size() != toks.size())
    throw DataError("thread " + th.id + " sentence " + std::to_string(si) +
                    ": " + std::to_string(rows.size()) +
                    " contextual rows for " + std::to_string(toks.size()) +
                    " tokens");
  const std::size_t w = word_input_width(cfg);
  std::vector<double> data(toks.size() * w, 0.0);
  for (std::size_t t = 0; t < toks.size(); ++t) {
    double* dst = data.data() + t * w;
    std::size_t off = 0;
    if (cfg.contextual == ContextualMode::concat) {
      std::vector<double> e = emb.lookup(toks[t], cfg.oov_seed);
      std::copy(e.begin(), e.end(), dst);
      off = e.size();
    }
    std::copy(rows[t].begin(), rows[t].end(), dst + off);
  }
  TokenMatrix tm;
  tm.matrix = Tensor::from({toks.size(), w}, std::move(data));
  tm.mask.assign(toks.size(), true);
  tm.real = toks.size();
  return tm;
}

inline Tensor merge_sentence_ctx(const ModelConfig& cfg, const Thread& th,
                                 std::size_t si, const Tensor& svec,
                                 const ContextualStore* ctx) {
  const bool sent_ctx = cfg.contextual != ContextualMode::none &&
                        cfg.contextual_level == ContextualLevel::sentence;
  if (!sent_ctx) return svec;
  const auto& rows = ctx->rows(th.id, si);
  Tensor cvec = Tensor::from({rows[0].size()}, std::vector<double>(rows[0]));
  if (cfg.contextual == ContextualMode::replace) return cvec;
  return concat({svec, cvec}, 0);
}

}  // namespace detail

inline ForwardResult forward_thread(const ModelParams& p,
                                    const ModelConfig& cfg,
                                    const EmbeddingTable& emb,
                                    const Thread& thread, Rng& rng,
                                    bool training,
                                    const ContextualStore* ctx = nullptr) {
  detail::check_contextual(cfg, ctx);
  if (thread.sentences.empty())
    throw DataError("thread " + thread.id + " has no sentences");

  ForwardResult res;
  std::vector<Tensor> svecs;
  for (std::size_t i = 0; i < thread.sentences.size(); ++i) {
    TokenMatrix tm = detail::token_matrix(cfg, emb, thread, i, ctx);
    SentenceEncoding enc = encode_sentence(p, cfg, tm, rng, training);
    res.attention.word_units.push_back(std::move(enc.units));
    svecs.push_back(
        detail::merge_sentence_ctx(cfg, thread, i, enc.vec, ctx));
  }

  ThreadEncodingResult te = encode_thread(p, cfg, svecs, rng, training);
  res.attention.sentence_units = std::move(te.units);

  std::vector<Tensor> probs;
  for (std::size_t i = 0; i < svecs.size(); ++i) {
    Tensor x = concat({svecs[i], te.vec}, 0);
    x = dropout(x, cfg.dropout, rng, training);
    probs.push_back(dense_sigmoid(p.head, x));
  }
  res.probs = probs.size() == 1 ? probs[0] : concat(probs, 0);
  return res;
}

// ---- config (de)serialization ----

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["embedding_dim"] = c.embedding_dim;
  j["word_hidden"] = c.word_hidden;
  j["sentence_hidden"] = c.sentence_hidden;
  j["filters"] = c.filters;
  j["fields"] = c.fields;
  j["conv_depth"] = c.conv_depth;
  j["conv_stride"] = c.conv_stride;
  j["dropout"] = c.dropout;
  j["use_attention"] = c.use_attention;
  j["attend_over"] =
      c.attend_over == AttendOver::positions ? "positions" : "filters";
  switch (c.contextual) {
    case ContextualMode::none: j["contextual"] = "none"; break;
    case ContextualMode::concat: j["contextual"] = "concat"; break;
    case ContextualMode::replace: j["contextual"] = "replace"; break;
  }
  j["contextual_level"] =
      c.contextual_level == ContextualLevel::token ? "token" : "sentence";
  j["contextual_dim"] = c.contextual_dim;
  j["oov_seed"] = c.oov_seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).template get<std::decay_t<decltype(dst)>>();
  };
  get("embedding_dim", c.embedding_dim);
  get("word_hidden", c.word_hidden);
  get("sentence_hidden", c.sentence_hidden);
  get("filters", c.filters);
  get("fields", c.fields);
  get("conv_depth", c.conv_depth);
  get("conv_stride", c.conv_stride);
  get("dropout", c.dropout);
  get("use_attention", c.use_attention);
  get("contextual_dim", c.contextual_dim);
  get("oov_seed", c.oov_seed);
  if (j.contains("attend_over")) {
    const std::string v = j.at("attend_over").get<std::string>();
    if (v == "positions")
      c.attend_over = AttendOver::positions;
    else if (v == "filters")
      c.attend_over = AttendOver::filters;
    else
      throw ConfigError("attend_over must be \"positions\" or \"filters\", "
                        "got \"" + v + "\"");
  }
  if (j.contains("contextual")) {
    const std::string v = j.at("contextual").get<std::string>();
    if (v == "none")
      c.contextual = ContextualMode::none;
    else if (v == "concat")
      c.contextual = ContextualMode::concat;
    else if (v == "replace")
      c.contextual = ContextualMode::replace;
    else
      throw ConfigError("contextual must be none, concat or replace, got \"" +
                        v + "\"");
  }
  if (j.contains("contextual_level")) {
    const std::string v = j.at("contextual_level").get<std::string>();
    if (v == "token")
      c.contextual_level = ContextualLevel::token;
    else if (v == "sentence")
      c.contextual_level = ContextualLevel::sentence;
    else
      throw ConfigError("contextual_level must be token or sentence, got \"" +
                        v + "\"");
  }
  return c;
}

// ---- checkpoints ----
//
// Layout: "TSUM" magic, u32 format version, u64 header length, header JSON,
// then each tensor's doubles raw in directory order. Exact bytes in, exact
// bytes out.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T* v) {
  is.read(reinterpret_cast<char*>(v), sizeof(T));
}

}  // namespace detail

// Named raw double arrays stored next to the model tensors; the training
// loop parks optimizer slots and such here.
using CheckpointExtras = std::vector<std::pair<std::string, std::vector<double>>>;

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams& params,
                            const nlohmann::json& meta = nlohmann::json::object(),
                            const CheckpointExtras& extras = {}) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = model_config_to_json(cfg);
  header["meta"] = meta;
  nlohmann::json dir = nlohmann::json::array();
  visit_params(params, [&](const std::string& name, const Tensor& t) {
    dir.push_back({{"name", name}, {"shape", t.shape()}});
  });
  header["tensors"] = std::move(dir);
  nlohmann::json xdir = nlohmann::json::array();
  for (const auto& [name, blob] : extras)
    xdir.push_back({{"name", name}, {"count", blob.size()}});
  header["extras"] = std::move(xdir);
  const std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path);
  os.write("TSUM", 4);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<std::uint64_t>(hs.size()));
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  visit_params(params, [&](const std::string&, const Tensor& t) {
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  });
  for (const auto& [name, blob] : extras) {
    (void)name;
    os.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(double)));
  }
  if (!os) throw DataError("short write on checkpoint " + path);
  os.close();

  std::ofstream cs(path + ".config.json", std::ios::trunc);
  cs << model_config_to_json(cfg).dump(2) << "\n";
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  nlohmann::json meta;
  CheckpointExtras extras;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TSUM", 4) != 0)
    throw DataError(path + " is not a checkpoint (bad magic)");
  std::uint32_t ver = 0;
  detail::read_pod(is, &ver);
  if (ver != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(ver));
  std::uint64_t hlen = 0;
  detail::read_pod(is, &hlen);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw DataError(path + ": truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    throw DataError(path + ": corrupt checkpoint header: " + e.what());
  }

  Checkpoint ck;
  ck.config = model_config_from_json(header.at("config"));
  ck.meta = header.value("meta", nlohmann::json::object());
  Rng scratch(0);
  ck.params = model_init(ck.config, scratch);

  const auto& dir = header.at("tensors");
  std::size_t idx = 0;
  visit_params(ck.params, [&](const std::string& name, Tensor& t) {
    if (idx >= dir.size())
      throw DataError(path + ": checkpoint directory too short");
    const auto& entry = dir[idx++];
    if (entry.at("name").get<std::string>() != name)
      throw DataError(path + ": tensor order mismatch at " + name);
    const Shape sh = entry.at("shape").get<Shape>();
    if (sh != t.shape())
      throw DataError(path + ": tensor " + name + " has shape " +
                      shape_str(sh) + ", expected " + shape_str(t.shape()));
    std::vector<double>& dst = t.mutable_data();
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!is) throw DataError(path + ": truncated tensor data at " + name);
  });
  if (idx != dir.size())
    throw DataError(path + ": checkpoint directory too long");

  if (header.contains("extras")) {
    for (const auto& entry : header["extras"]) {
      const std::string name = entry.at("name").get<std::string>();
      const std::size_t count = entry.at("count").get<std::size_t>();
      std::vector<double> blob(count);
      is.read(reinterpret_cast<char*>(blob.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
      if (!is) throw DataError(path + ": truncated extra block " + name);
      ck.extras.emplace_back(name, std::move(blob));
    }
  }
  return ck;
}

inline const std::vector<double>* find_extra(const CheckpointExtras& extras,
                                             const std::string& name) {
  for (const auto& [n, blob] : extras)
    if (n == name) return &blob;
  return nullptr;
}

}  // namespace threadsumm
