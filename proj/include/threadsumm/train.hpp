#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "threadsumm/common.hpp"
#include "threadsumm/data.hpp"
#include "threadsumm/model.hpp"
#include "threadsumm/oracle.hpp"
#include "threadsumm/tensor.hpp"

// Training: the batched loop with gradient clipping, early stopping on
// validation loss, per-epoch loss logging, and a state file that lets a
// stopped run pick up exactly where it left off.

namespace threadsumm {

// Mean binary cross entropy over the sentence scores. Probabilities are
// clamped away from 0 and 1; inside the clamp the gradient is zero.
// pos_weight scales the positive-label term.
inline Tensor bce_loss(const Tensor& probs, const std::vector<double>& labels,
                       double pos_weight = 1.0) {
  if (probs.rank() != 1)
    throw ShapeError("bce_loss: scores must be a vector, got " +
                     shape_str(probs.shape()));
  if (probs.numel() != labels.size())
    throw ShapeError("bce_loss: " + std::to_string(probs.numel()) +
                     " scores for " + std::to_string(labels.size()) +
                     " labels");
  if (labels.empty()) throw ShapeError("bce_loss: nothing to score");
  if (pos_weight <= 0.0) throw ConfigError("bce_loss: pos_weight must be > 0");

  constexpr double kLo = 1e-12;
  constexpr double kHi = 1.0 - 1e-12;
  const auto& p = probs.values();
  const std::size_t n = p.size();
  double total = 0.0;
  std::vector<double> dl(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = labels[i];
    if (y < 0.0 || y > 1.0)
      throw DataError("bce_loss: label " + std::to_string(y) +
                      " outside [0, 1]");
    const double pc = std::min(std::max(p[i], kLo), kHi);
    total += -(pos_weight * y * std::log(pc) +
               (1.0 - y) * std::log(1.0 - pc));
    if (p[i] >= kLo && p[i] <= kHi)
      dl[i] = -(pos_weight * y / pc - (1.0 - y) / (1.0 - pc)) /
              static_cast<double>(n);
  }
  total /= static_cast<double>(n);

  bool tracked = detail::track({&probs});
  Tensor out = detail::finish("bce_loss", {1}, {total}, tracked);
  if (tracked) {
    Tape::active()->record(
        out.id(), [probs, dl](const std::vector<double>& g, Tape& tape) {
          std::vector<double> gp(dl.size());
          for (std::size_t i = 0; i < dl.size(); ++i) gp[i] = g[0] * dl[i];
          tape.accumulate(probs.id(), gp);
        });
  }
  return out;
}

// Scales every gradient by clip/norm when the global norm exceeds clip.
// Returns the pre-clip norm. clip <= 0 disables clipping.
inline double clip_global_norm(std::vector<std::vector<double>>* grads,
                               double clip) {
  double sq = 0.0;
  for (const auto& g : *grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const double s = clip / norm;
    for (auto& g : *grads)
      for (double& v : g) v *= s;
  }
  return norm;
}

enum class OptimizerKind { sgd, rmsprop, adam };

inline std::string optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
  }
  return "rmsprop";
}

inline OptimizerKind optimizer_from_name(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer must be sgd, rmsprop or adam, got \"" + s +
                    "\"");
}

// Parameter updates over the flat (visitor-ordered) parameter list. Slot
// vectors live at fixed offsets so state survives checkpointing.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<std::vector<double>>& grads) {
    if (params.size() != grads.size())
      throw ShapeError("optimizer step: gradient list does not match the "
                       "parameter list");
    ensure_slots(params);
    if (kind_ == OptimizerKind::adam) t_ += 1.0;
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor* t = params[pi].second;
      const auto& g = grads[pi];
      if (g.size() != t->numel())
        throw ShapeError("optimizer step: gradient size mismatch at " +
                         params[pi].first);
      std::vector<double>& v = t->mutable_data();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double gi = g[i];
        switch (kind_) {
          case OptimizerKind::sgd:
            v[i] -= lr_ * gi;
            break;
          case OptimizerKind::rmsprop: {
            double& a = sq_[off + i];
            a = 0.9 * a + 0.1 * gi * gi;
            v[i] -= lr_ * gi / (std::sqrt(a) + kEps);
            break;
          }
          case OptimizerKind::adam: {
            double& m = m_[off + i];
            double& s = sq_[off + i];
            m = 0.9 * m + 0.1 * gi;
            s = 0.999 * s + 0.001 * gi * gi;
            const double mh = m / (1.0 - std::pow(0.9, t_));
            const double sh = s / (1.0 - std::pow(0.999, t_));
            v[i] -= lr_ * mh / (std::sqrt(sh) + kEps);
            break;
          }
        }
      }
      off += v.size();
    }
  }

  CheckpointExtras state() const {
    CheckpointExtras x;
    x.emplace_back("opt.sq", sq_);
    x.emplace_back("opt.m", m_);
    x.emplace_back("opt.t", std::vector<double>{t_});
    return x;
  }

  void restore(const CheckpointExtras& extras) {
    if (const auto* b = find_extra(extras, "opt.sq")) sq_ = *b;
    if (const auto* b = find_extra(extras, "opt.m")) m_ = *b;
    if (const auto* b = find_extra(extras, "opt.t"); b && !b->empty())
      t_ = (*b)[0];
  }

  OptimizerKind kind() const { return kind_; }

 private:
  static constexpr double kEps = 1e-8;

  void ensure_slots(
      const std::vector<std::pair<std::string, Tensor*>>& params) {
    std::size_t total = 0;
    for (const auto& [n, t] : params) total += t->numel();
    if (sq_.size() != total) sq_.assign(total, 0.0);
    if (m_.size() != total) m_.assign(total, 0.0);
  }

  OptimizerKind kind_;
  double lr_;
  double t_ = 0.0;
  std::vector<double> sq_;
  std::vector<double> m_;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  ModelConfig model;
  double lr = 0.001;
  std::size_t batch = 16;
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  std::size_t max_epochs = 500;
  std::size_t patience = 3;
  std::vector<double> split = {0.8, 0.1, 0.1};
  std::size_t folds = 6;
  double ratio = 0.2;
  double novelty = 0.5;
  double clip_norm = 5.0;
  OracleMetric oracle_metric = OracleMetric::f1;
  bool keep_stopwords = true;
  bool stop_on_first_overflow = false;
  double pos_weight = 1.0;
  bool retrain_with_dev = false;
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["word_hidden"] = c.model.word_hidden;
  j["sentence_hidden"] = c.model.sentence_hidden;
  j["filters"] = c.model.filters;
  j["fields"] = c.model.fields;
  j["conv_depth"] = c.model.conv_depth;
  j["conv_stride"] = c.model.conv_stride;
  j["dropout"] = c.model.dropout;
  j["use_attention"] = c.model.use_attention;
  j["attend_over"] =
      c.model.attend_over == AttendOver::positions ? "positions" : "filters";
  switch (c.model.contextual) {
    case ContextualMode::none: j["contextual"] = "none"; break;
    case ContextualMode::concat: j["contextual"] = "concat"; break;
    case ContextualMode::replace: j["contextual"] = "replace"; break;
  }
  j["contextual_level"] = c.model.contextual_level == ContextualLevel::token
                              ? "token"
                              : "sentence";
  j["contextual_dim"] = c.model.contextual_dim;
  j["lr"] = c.lr;
  j["batch"] = c.batch;
  j["optimizer"] = optimizer_name(c.optimizer);
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["split"] = c.split;
  j["folds"] = c.folds;
  j["ratio"] = c.ratio;
  j["novelty"] = c.novelty;
  j["clip_norm"] = c.clip_norm;
  j["oracle_metric"] =
      c.oracle_metric == OracleMetric::f1 ? "f1" : "recall";
  j["keep_stopwords"] = c.keep_stopwords;
  j["stop_on_first_overflow"] = c.stop_on_first_overflow;
  j["pos_weight"] = c.pos_weight;
  j["retrain_with_dev"] = c.retrain_with_dev;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "seed", "word_hidden", "sentence_hidden", "filters", "fields",
      "conv_depth", "conv_stride", "dropout", "use_attention", "attend_over",
      "contextual", "contextual_level", "contextual_dim", "lr", "batch",
      "optimizer", "max_epochs", "patience", "split", "folds", "ratio",
      "novelty", "clip_norm", "oracle_metric", "keep_stopwords",
      "stop_on_first_overflow", "pos_weight", "retrain_with_dev"};
  std::vector<std::string> unknown;
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }

  TrainConfig c;
  nlohmann::json mj;
  for (const char* key :
       {"word_hidden", "sentence_hidden", "filters", "fields", "conv_depth",
        "conv_stride", "dropout", "use_attention", "attend_over",
        "contextual", "contextual_level", "contextual_dim"})
    if (j.contains(key)) mj[key] = j.at(key);
  c.model = model_config_from_json(mj);

  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key))
      dst = j.at(key).template get<std::decay_t<decltype(dst)>>();
  };
  get("seed", c.seed);
  get("lr", c.lr);
  get("batch", c.batch);
  get("max_epochs", c.max_epochs);
  get("patience", c.patience);
  get("split", c.split);
  get("folds", c.folds);
  get("ratio", c.ratio);
  get("novelty", c.novelty);
  get("clip_norm", c.clip_norm);
  get("keep_stopwords", c.keep_stopwords);
  get("stop_on_first_overflow", c.stop_on_first_overflow);
  get("pos_weight", c.pos_weight);
  get("retrain_with_dev", c.retrain_with_dev);
  if (j.contains("optimizer"))
    c.optimizer = optimizer_from_name(j.at("optimizer").get<std::string>());
  if (j.contains("oracle_metric")) {
    const std::string m = j.at("oracle_metric").get<std::string>();
    if (m == "f1")
      c.oracle_metric = OracleMetric::f1;
    else if (m == "recall")
      c.oracle_metric = OracleMetric::recall;
    else
      throw ConfigError("oracle_metric must be f1 or recall, got \"" + m +
                        "\"");
  }

  if (c.lr <= 0.0) throw ConfigError("lr must be positive");
  if (c.batch == 0) throw ConfigError("batch must be positive");
  if (c.max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (c.patience == 0) throw ConfigError("patience must be positive");
  if (c.split.size() != 3)
    throw ConfigError("split needs three fractions (train, val, test)");
  double s = 0.0;
  for (double v : c.split) {
    if (v < 0.0) throw ConfigError("split fractions cannot be negative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6)
    throw ConfigError("split fractions must sum to 1");
  if (c.folds < 2) throw ConfigError("folds must be at least 2");
  if (c.ratio <= 0.0 || c.ratio > 1.0)
    throw ConfigError("ratio must lie in (0, 1]");
  if (c.novelty < 0.0 || c.novelty > 1.0)
    throw ConfigError("novelty must lie in [0, 1]");
  if (c.pos_weight <= 0.0) throw ConfigError("pos_weight must be positive");
  c.model.oov_seed = c.seed;
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " +
                      e.what());
  }
  return train_config_from_json(j);
}

// Stable fingerprint of the effective configuration.
inline std::string config_hash(const TrainConfig& c) {
  return hex64(fnv1a64(train_config_to_json(c).dump()));
}

struct LabeledThread {
  Thread thread;
  std::vector<double> labels;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

inline SplitIndices split_threads(std::size_t n,
                                  const std::vector<double>& split,
                                  std::uint64_t seed) {
  if (split.size() != 3) throw ConfigError("split needs three fractions");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.next_index(i)]);
  const std::size_t n_train =
      static_cast<std::size_t>(std::floor(split[0] * static_cast<double>(n)));
  const std::size_t n_val =
      static_cast<std::size_t>(std::floor(split[1] * static_cast<double>(n)));
  SplitIndices out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      out.train.push_back(order[i]);
    else if (i < n_train + n_val)
      out.val.push_back(order[i]);
    else
      out.test.push_back(order[i]);
  }
  return out;
}

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainOutcome {
  ModelConfig config;
  ModelParams params;       // after the last epoch run
  ModelParams best_params;  // lowest validation loss
  std::vector<EpochStats> history;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
};

struct TrainPaths {
  std::string checkpoint;  // best-validation model ("" skips)
  std::string state;       // resumable training state ("" skips)
  std::string loss_csv;    // per-epoch loss table ("" skips)
};

// Mean objective over a set without dropout or updates.
inline double eval_loss(const ModelParams& params, const ModelConfig& mc,
                        const std::vector<LabeledThread>& set,
                        const EmbeddingTable& emb, double pos_weight,
                        const ContextualStore* ctx = nullptr) {
  if (set.empty()) throw DataError("eval_loss: empty thread set");
  Rng idle(0);
  double total = 0.0;
  for (const auto& lt : set) {
    auto fwd = forward_thread(params, mc, emb, lt.thread, idle, false, ctx);
    total += bce_loss(fwd.probs, lt.labels, pos_weight).values()[0];
  }
  return total / static_cast<double>(set.size());
}

namespace detail {

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng.engine();
  return os.str();
}

inline void restore_rng_state(Rng* rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng->engine();
  if (!is) throw DataError("corrupt random generator state");
}

inline void format_csv_row(std::ostream& os, const EpochStats& e) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e.epoch, e.train_loss,
                e.val_loss);
  os << buf;
}

}  // namespace detail

// Runs the batched training loop. With resume=true the state file written
// by a previous call is loaded first and the run continues from the next
// epoch; everything (parameters, optimizer slots, generator stream, early
// stop counters) picks up exactly where it stopped.
inline TrainOutcome train_model(const TrainConfig& tc,
                                const std::vector<LabeledThread>& train_in,
                                const std::vector<LabeledThread>& val_in,
                                const EmbeddingTable& emb,
                                const TrainPaths& paths = {},
                                const ContextualStore* ctx = nullptr,
                                bool resume = false) {
  std::vector<LabeledThread> train_set = train_in;
  std::vector<LabeledThread> val_set = val_in;
  bool early_stop_enabled = true;
  if (tc.retrain_with_dev) {
    for (auto& lt : val_set) train_set.push_back(lt);
    val_set.clear();
    early_stop_enabled = false;
  }
  if (train_set.empty()) throw DataError("train_model: no training threads");
  for (const auto& lt : train_set)
    if (lt.labels.size() != lt.thread.sentences.size())
      throw DataError("thread " + lt.thread.id + ": " +
                      std::to_string(lt.labels.size()) + " labels for " +
                      std::to_string(lt.thread.sentences.size()) +
                      " sentences");

  ModelConfig mc = tc.model;
  mc.embedding_dim = emb.dim();
  mc.oov_seed = tc.seed;

  TrainOutcome out;
  Rng rng(tc.seed);
  ModelParams params = model_init(mc, rng);
  Optimizer opt(tc.optimizer, tc.lr);

  std::size_t start_epoch = 1;
  double prev_val = std::numeric_limits<double>::infinity();
  std::size_t streak = 0;

  if (resume) {
    if (paths.state.empty())
      throw ConfigError("resume requested but no state path is set");
    Checkpoint st = load_checkpoint(paths.state);
    mc = st.config;
    params = std::move(st.params);
    opt.restore(st.extras);
    start_epoch = st.meta.at("epoch").get<std::size_t>() + 1;
    out.best_val = st.meta.at("best_val").get<double>();
    out.best_epoch = st.meta.at("best_epoch").get<std::size_t>();
    prev_val = st.meta.at("prev_val").get<double>();
    streak = st.meta.at("streak").get<std::size_t>();
    detail::restore_rng_state(&rng, st.meta.at("rng").get<std::string>());
    if (st.meta.contains("history"))
      for (const auto& h : st.meta.at("history"))
        out.history.push_back({h.at("epoch").get<std::size_t>(),
                               h.at("train").get<double>(),
                               h.at("val").get<double>()});
  }

  auto plist = param_list(params);
  for (auto& [name, t] : plist) {
    (void)name;
    t->set_requires_grad(true);
  }

  out.config = mc;
  out.best_params = params;
  if (resume && !paths.checkpoint.empty() &&
      std::filesystem::exists(paths.checkpoint))
    out.best_params = load_checkpoint(paths.checkpoint).params;

  std::ofstream csv;
  if (!paths.loss_csv.empty()) {
    const bool append = resume && std::filesystem::exists(paths.loss_csv);
    csv.open(paths.loss_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw DataError("cannot write loss log " + paths.loss_csv);
    if (!append) csv << "epoch,train_loss,val_loss\n";
  }

  const std::vector<LabeledThread>& monitor =
      val_set.empty() ? train_set : val_set;

  for (std::size_t epoch = start_epoch; epoch <= tc.max_epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_index(i)]);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch) {
      const std::size_t hi = std::min(b + tc.batch, order.size());
      const std::size_t count = hi - b;
      std::vector<std::vector<double>> acc(plist.size());
      for (std::size_t pi = 0; pi < plist.size(); ++pi)
        acc[pi].assign(plist[pi].second->numel(), 0.0);

      double batch_loss = 0.0;
      for (std::size_t k = b; k < hi; ++k) {
        const auto& lt = train_set[order[k]];
        Tape tape;
        auto fwd = forward_thread(params, mc, emb, lt.thread, rng, true, ctx);
        Tensor loss = bce_loss(fwd.probs, lt.labels, tc.pos_weight);
        batch_loss += loss.values()[0];
        tape.backward(loss);
        for (std::size_t pi = 0; pi < plist.size(); ++pi) {
          if (!tape.has_grad(*plist[pi].second)) continue;
          // keep the gradient tensor alive while its buffer is read
          const Tensor gt = tape.grad(*plist[pi].second);
          const auto& g = gt.values();
          for (std::size_t i = 0; i < g.size(); ++i) acc[pi][i] += g[i];
        }
      }
      batch_loss /= static_cast<double>(count);
      for (auto& g : acc)
        for (double& v : g) v /= static_cast<double>(count);
      clip_global_norm(&acc, tc.clip_norm);
      opt.step(plist, acc);
      epoch_loss += batch_loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);

    const double val_loss =
        eval_loss(params, mc, monitor, emb, tc.pos_weight, ctx);
    EpochStats es{epoch, epoch_loss, val_loss};
    out.history.push_back(es);
    out.epochs_run = epoch;
    if (csv.is_open()) {
      detail::format_csv_row(csv, es);
      csv.flush();
    }

    if (val_loss < out.best_val) {
      out.best_val = val_loss;
      out.best_epoch = epoch;
      out.best_params = params;
      if (!paths.checkpoint.empty()) {
        nlohmann::json meta = {{"epoch", epoch}, {"best_val", val_loss}};
        save_checkpoint(paths.checkpoint, mc, params, meta);
      }
    }

    if (val_loss > prev_val)
      ++streak;
    else
      streak = 0;
    prev_val = val_loss;

    if (!paths.state.empty()) {
      nlohmann::json meta;
      meta["epoch"] = epoch;
      meta["best_val"] = out.best_val;
      meta["best_epoch"] = out.best_epoch;
      meta["prev_val"] = prev_val;
      meta["streak"] = streak;
      meta["rng"] = detail::rng_state_string(rng);
      nlohmann::json hist = nlohmann::json::array();
      for (const auto& h : out.history)
        hist.push_back({{"epoch", h.epoch},
                        {"train", h.train_loss},
                        {"val", h.val_loss}});
      meta["history"] = std::move(hist);
      save_checkpoint(paths.state, mc, params, meta, opt.state());
    }

    if (early_stop_enabled && streak >= tc.patience) {
      out.stopped_early = true;
      break;
    }
  }

  out.params = std::move(params);
  if (out.best_epoch == 0) out.best_params = out.params;
  return out;
}

// ---- k-fold splitting ----

struct KFold {
  std::vector<std::size_t> train, test;
};

// Seeded shuffle, then contiguous folds whose sizes differ by at most one.
inline std::vector<KFold> kfold_split(std::size_t n, std::size_t folds,
                                      std::uint64_t seed) {
  if (folds < 2) throw ConfigError("kfold_split: need at least 2 folds");
  if (folds > n)
    throw ConfigError("kfold_split: " + std::to_string(folds) +
                      " folds for " + std::to_string(n) + " items");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.next_index(i)]);

  const std::size_t base = n / folds;
  const std::size_t rem = n % folds;
  std::vector<KFold> out(folds);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t sz = base + (f < rem ? 1 : 0);
    for (std::size_t i = 0; i < sz; ++i) out[f].test.push_back(order[pos + i]);
    pos += sz;
  }
  for (std::size_t f = 0; f < folds; ++f)
    for (std::size_t g = 0; g < folds; ++g)
      if (g != f)
        out[f].train.insert(out[f].train.end(), out[g].test.begin(),
                            out[g].test.end());
  return out;
}

// ---- hyperparameter sweep ----

struct HyperChoice {
  std::size_t word_hidden = 0;
  std::size_t sentence_hidden = 0;
  std::size_t conv_depth = 1;
  std::size_t filters = 0;
  std::vector<std::size_t> fields;
  double dropout = 0.0;
  double lr = 0.0;
  std::size_t batch = 0;
  OptimizerKind optimizer = OptimizerKind::rmsprop;
};

namespace hyper {

inline const std::vector<std::size_t>& word_hidden_axis() {
  static const std::vector<std::size_t> v = {25, 50, 100, 200};
  return v;
}
inline const std::vector<std::size_t>& sentence_hidden_axis() {
  static const std::vector<std::size_t> v = {25, 50, 100, 200};
  return v;
}
inline const std::vector<std::size_t>& depth_axis() {
  static const std::vector<std::size_t> v = {1, 2, 3, 4, 5};
  return v;
}
inline const std::vector<std::size_t>& filters_axis() {
  static const std::vector<std::size_t> v = {100, 200, 400, 600};
  return v;
}
inline const std::vector<std::vector<std::size_t>>& fields_axis() {
  static const std::vector<std::vector<std::size_t>> v = {
      {1}, {2}, {3}, {4}, {5}, {2, 3}, {2, 3, 4}, {2, 3, 4, 5}};
  return v;
}
inline const std::vector<double>& dropout_axis() {
  static const std::vector<double> v = {0.0, 0.1, 0.3, 0.5};
  return v;
}
inline const std::vector<double>& lr_axis() {
  static const std::vector<double> v = {0.001, 0.01, 0.1};
  return v;
}
inline const std::vector<std::size_t>& batch_axis() {
  static const std::vector<std::size_t> v = {16, 32, 64, 128};
  return v;
}
inline const std::vector<OptimizerKind>& optimizer_axis() {
  static const std::vector<OptimizerKind> v = {
      OptimizerKind::sgd, OptimizerKind::rmsprop, OptimizerKind::adam};
  return v;
}

}  // namespace hyper

inline std::size_t hyper_space_size() {
  return hyper::word_hidden_axis().size() *
         hyper::sentence_hidden_axis().size() * hyper::depth_axis().size() *
         hyper::filters_axis().size() * hyper::fields_axis().size() *
         hyper::dropout_axis().size() * hyper::lr_axis().size() *
         hyper::batch_axis().size() * hyper::optimizer_axis().size();
}

inline HyperChoice hyper_decode(std::size_t idx) {
  if (idx >= hyper_space_size())
    throw ConfigError("hyper_decode: index out of range");
  HyperChoice h;
  auto take = [&](std::size_t n) {
    std::size_t d = idx % n;
    idx /= n;
    return d;
  };
  h.word_hidden = hyper::word_hidden_axis()[take(4)];
  h.sentence_hidden = hyper::sentence_hidden_axis()[take(4)];
  h.conv_depth = hyper::depth_axis()[take(5)];
  h.filters = hyper::filters_axis()[take(4)];
  h.fields = hyper::fields_axis()[take(8)];
  h.dropout = hyper::dropout_axis()[take(4)];
  h.lr = hyper::lr_axis()[take(3)];
  h.batch = hyper::batch_axis()[take(4)];
  h.optimizer = hyper::optimizer_axis()[take(3)];
  return h;
}

// Draws ceil(coverage * |space|) distinct configurations via a seeded
// shuffle of the whole index space.
inline std::vector<HyperChoice> random_search(double coverage,
                                              std::uint64_t seed) {
  if (coverage <= 0.0 || coverage > 1.0)
    throw ConfigError("random_search: coverage must lie in (0, 1]");
  const std::size_t size = hyper_space_size();
  const std::size_t want = static_cast<std::size_t>(
      std::ceil(coverage * static_cast<double>(size)));
  std::vector<std::uint32_t> order(size);
  for (std::size_t i = 0; i < size; ++i)
    order[i] = static_cast<std::uint32_t>(i);
  Rng rng(seed);
  for (std::size_t i = size; i > 1; --i)
    std::swap(order[i - 1], order[rng.next_index(i)]);
  std::vector<HyperChoice> out;
  out.reserve(want);
  for (std::size_t i = 0; i < want; ++i) out.push_back(hyper_decode(order[i]));
  return out;
}

inline TrainConfig apply_hyper(const HyperChoice& h, TrainConfig base) {
  base.model.word_hidden = h.word_hidden;
  base.model.sentence_hidden = h.sentence_hidden;
  base.model.conv_depth = h.conv_depth;
  base.model.filters = h.filters;
  base.model.fields = h.fields;
  base.model.dropout = h.dropout;
  base.lr = h.lr;
  base.batch = h.batch;
  base.optimizer = h.optimizer;
  return base;
}

}  // namespace threadsumm
