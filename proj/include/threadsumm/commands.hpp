#pragma once

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "threadsumm/common.hpp"
#include "threadsumm/data.hpp"
#include "threadsumm/extract.hpp"
#include "threadsumm/model.hpp"
#include "threadsumm/oracle.hpp"
#include "threadsumm/rouge.hpp"
#include "threadsumm/train.hpp"

// The commands behind the command line: label, train, summarize, evaluate,
// and the whole pipeline. Everything is callable in-process; the CLI is a
// thin shell around these.

namespace threadsumm {

// Bad invocations (unreadable inputs, malformed flags) as opposed to
// failures while working.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace cmd {

inline std::string now_iso8601() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline void require_readable(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f)
    throw UsageError(std::string("cannot open ") + what + " file " + path);
}

// Effective run configuration: file config, then the seed override from
// the environment, then any explicit seed argument.
inline TrainConfig effective_config(const std::string& config_path,
                                    std::optional<std::uint64_t> seed_arg) {
  TrainConfig cfg;
  if (!config_path.empty()) {
    require_readable(config_path, "config");
    try {
      cfg = load_train_config(config_path);
    } catch (const ConfigError&) {
      throw;
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  if (const char* env = std::getenv("THREADSUMM_SEED")) {
    try {
      std::size_t pos = 0;
      const std::string s(env);
      const unsigned long long v = std::stoull(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing junk");
      cfg.seed = v;
    } catch (const std::exception&) {
      throw UsageError("THREADSUMM_SEED must be an unsigned integer, got \"" +
                       std::string(env) + "\"");
    }
  }
  if (seed_arg) cfg.seed = *seed_arg;
  cfg.model.oov_seed = cfg.seed;
  return cfg;
}

inline void write_manifest(const std::string& out_path,
                           const std::string& command, const TrainConfig& cfg,
                           const std::vector<std::string>& inputs,
                           const std::string& started,
                           const std::string& finished) {
  nlohmann::json m;
  m["command"] = command;
  m["config_hash"] = config_hash(cfg);
  m["inputs"] = inputs;
  m["seed"] = cfg.seed;
  m["version"] = kVersion;
  m["started_at"] = started;
  m["finished_at"] = finished;
  std::ofstream os(out_path + ".manifest.json", std::ios::trunc);
  if (!os) throw DataError("cannot write manifest for " + out_path);
  os << m.dump(2) << "\n";
}

inline std::vector<Thread> read_threads(const std::string& path,
                                        bool skip_malformed) {
  require_readable(path, "threads");
  return load_threads(path, skip_malformed);
}

}  // namespace cmd

// ---- label ----

struct LabelOptions {
  std::string threads_path;
  std::string out_path;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool skip_malformed = false;
};

struct LabelSummary {
  std::size_t threads = 0;
  std::size_t empty_reference = 0;
};

inline LabelSummary run_label(const LabelOptions& opt) {
  const std::string started = cmd::now_iso8601();
  TrainConfig cfg = cmd::effective_config(opt.config_path, opt.seed);
  auto threads = cmd::read_threads(opt.threads_path, opt.skip_malformed);

  OracleConfig oc;
  oc.ratio = cfg.ratio;
  oc.metric = cfg.oracle_metric;
  oc.keep_stopwords = cfg.keep_stopwords;

  std::ofstream os(opt.out_path, std::ios::trunc);
  if (!os) throw DataError("cannot write labels file " + opt.out_path);
  LabelSummary sum;
  for (const auto& t : threads) {
    OracleResult r = greedy_label(t.sentence_tokens(), t.golds, oc);
    nlohmann::json j;
    j["id"] = t.id;
    j["labels"] = r.labels;
    j["picked"] = r.picked;
    j["score"] = r.score;
    j["budget_words"] = r.budget_words;
    j["used_words"] = r.used_words;
    j["empty_reference"] = r.empty_reference;
    os << j.dump() << "\n";
    ++sum.threads;
    if (r.empty_reference) ++sum.empty_reference;
  }
  os.close();
  cmd::write_manifest(opt.out_path, "label", cfg, {opt.threads_path}, started,
                      cmd::now_iso8601());
  return sum;
}

// ---- shared loading for train/pipeline ----

namespace cmd {

inline std::map<std::string, std::vector<double>> read_labels_file(
    const std::string& path) {
  require_readable(path, "labels");
  std::ifstream in(path);
  std::map<std::string, std::vector<double>> out;
  std::string line;
  std::size_t line_no = 0;
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
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("id") || !j.contains("labels"))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": need \"id\" and \"labels\"");
    std::vector<double> labels;
    for (const auto& v : j["labels"]) labels.push_back(v.get<double>());
    out[j["id"].get<std::string>()] = std::move(labels);
  }
  return out;
}

inline std::vector<LabeledThread> join_labels(
    const std::vector<Thread>& threads,
    const std::map<std::string, std::vector<double>>& labels) {
  std::vector<LabeledThread> out;
  std::vector<std::string> missing;
  for (const auto& t : threads) {
    auto it = labels.find(t.id);
    if (it == labels.end()) {
      missing.push_back(t.id);
      continue;
    }
    if (it->second.size() != t.sentences.size())
      throw DataError("thread " + t.id + ": " +
                      std::to_string(it->second.size()) + " labels for " +
                      std::to_string(t.sentences.size()) + " sentences");
    out.push_back({t, it->second});
  }
  if (!missing.empty()) {
    std::string msg = "threads without labels:";
    for (const auto& id : missing) msg += " " + id;
    throw DataError(msg);
  }
  return out;
}

inline EmbeddingTable read_embeddings(const std::string& path) {
  require_readable(path, "embeddings");
  return EmbeddingTable::load(path);
}

inline std::optional<ContextualStore> read_contextual(
    const std::string& path) {
  if (path.empty()) return std::nullopt;
  require_readable(path, "contextual vectors");
  return ContextualStore::load(path);
}

}  // namespace cmd

// ---- train ----

struct TrainOptions {
  std::string threads_path;
  std::string labels_path;      // empty: label in memory first
  std::string embeddings_path;
  std::string contextual_path;  // optional
  std::string out_path;         // checkpoint
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool skip_malformed = false;
};

struct TrainSummary {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  bool stopped_early = false;
  std::size_t train_threads = 0;
  std::size_t val_threads = 0;
  std::size_t test_threads = 0;
};

inline TrainSummary run_train(const TrainOptions& opt) {
  const std::string started = cmd::now_iso8601();
  TrainConfig cfg = cmd::effective_config(opt.config_path, opt.seed);
  auto threads = cmd::read_threads(opt.threads_path, opt.skip_malformed);
  auto emb = cmd::read_embeddings(opt.embeddings_path);
  auto ctx = cmd::read_contextual(opt.contextual_path);

  std::vector<LabeledThread> labeled;
  std::vector<std::string> inputs = {opt.threads_path, opt.embeddings_path};
  if (!opt.labels_path.empty()) {
    labeled = cmd::join_labels(threads, cmd::read_labels_file(opt.labels_path));
    inputs.push_back(opt.labels_path);
  } else {
    OracleConfig oc{cfg.ratio, cfg.oracle_metric, cfg.keep_stopwords};
    for (const auto& t : threads) {
      OracleResult r = greedy_label(t.sentence_tokens(), t.golds, oc);
      std::vector<double> y(r.labels.begin(), r.labels.end());
      labeled.push_back({t, std::move(y)});
    }
  }
  if (!opt.contextual_path.empty()) inputs.push_back(opt.contextual_path);

  SplitIndices si = split_threads(labeled.size(), cfg.split, cfg.seed);
  std::vector<LabeledThread> train_set, val_set;
  for (auto i : si.train) train_set.push_back(labeled[i]);
  for (auto i : si.val) val_set.push_back(labeled[i]);

  TrainPaths paths;
  paths.checkpoint = opt.out_path;
  paths.state = opt.out_path + ".state";
  paths.loss_csv = opt.out_path + ".loss.csv";

  auto out = train_model(cfg, train_set, val_set, emb, paths,
                         ctx ? &*ctx : nullptr, opt.resume);
  // make sure a best checkpoint exists even if validation never improved
  if (!std::filesystem::exists(opt.out_path)) {
    nlohmann::json meta = {{"epoch", out.best_epoch},
                           {"best_val", out.best_val}};
    save_checkpoint(opt.out_path, out.config, out.best_params, meta);
  }

  cmd::write_manifest(opt.out_path, "train", cfg, inputs, started,
                      cmd::now_iso8601());
  TrainSummary s;
  s.epochs_run = out.epochs_run;
  s.best_epoch = out.best_epoch;
  s.best_val = out.best_val;
  s.stopped_early = out.stopped_early;
  s.train_threads = train_set.size();
  s.val_threads = val_set.size();
  s.test_threads = si.test.size();
  return s;
}

// ---- summarize ----

struct SummarizeOptions {
  std::string threads_path;
  std::string checkpoint_path;
  std::string embeddings_path;
  std::string contextual_path;  // optional
  std::string out_path;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool attention = false;
  bool skip_malformed = false;
};

struct SummarizeSummary {
  std::size_t threads = 0;
};

namespace cmd {

inline nlohmann::json attention_group(
    const std::vector<UnitReport>& units,
    const std::vector<std::string>* tokens) {
  std::vector<UnitReport> sorted;
  for (const auto& u : units)
    if (u.weight != 0.0) sorted.push_back(u);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const UnitReport& a, const UnitReport& b) {
                     return a.weight > b.weight;
                   });
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& u : sorted) {
    nlohmann::json ju;
    ju["begin"] = u.begin;
    ju["end"] = u.end;
    ju["dominant_begin"] = u.dom_begin;
    ju["dominant_end"] = u.dom_end;
    ju["weight"] = u.weight;
    if (tokens) {
      std::string text;
      for (std::size_t k = u.dom_begin;
           k < u.dom_end && k < tokens->size(); ++k) {
        if (!text.empty()) text += " ";
        text += (*tokens)[k];
      }
      ju["text"] = text;
    }
    arr.push_back(std::move(ju));
  }
  return arr;
}

}  // namespace cmd

inline SummarizeSummary run_summarize(const SummarizeOptions& opt) {
  const std::string started = cmd::now_iso8601();
  TrainConfig cfg = cmd::effective_config(opt.config_path, opt.seed);
  auto threads = cmd::read_threads(opt.threads_path, opt.skip_malformed);
  cmd::require_readable(opt.checkpoint_path, "checkpoint");
  Checkpoint ck = load_checkpoint(opt.checkpoint_path);
  auto emb = cmd::read_embeddings(opt.embeddings_path);
  auto ctx = cmd::read_contextual(opt.contextual_path);
  if (emb.dim() != ck.config.embedding_dim)
    throw DataError("embeddings are " + std::to_string(emb.dim()) +
                    "-wide but the checkpoint expects " +
                    std::to_string(ck.config.embedding_dim));

  ExtractConfig ec;
  ec.ratio = cfg.ratio;
  ec.novelty = cfg.novelty;
  ec.stop_on_first_overflow = cfg.stop_on_first_overflow;
  ec.keep_stopwords = cfg.keep_stopwords;

  std::ofstream os(opt.out_path, std::ios::trunc);
  if (!os) throw DataError("cannot write summaries file " + opt.out_path);
  std::ofstream attn;
  if (opt.attention) {
    attn.open(opt.out_path + ".attention.jsonl", std::ios::trunc);
    if (!attn)
      throw DataError("cannot write attention file " + opt.out_path +
                      ".attention.jsonl");
  }

  Rng idle(0);
  SummarizeSummary sum;
  for (const auto& t : threads) {
    auto fwd = forward_thread(ck.params, ck.config, emb, t, idle, false,
                              ctx ? &*ctx : nullptr);
    const auto& scores = fwd.probs.values();
    ExtractResult ex =
        extract_summary(t.sentence_tokens(), scores, ec);

    nlohmann::json j;
    j["id"] = t.id;
    j["selected"] = ex.selected;
    j["scores"] = scores;
    nlohmann::json texts = nlohmann::json::array();
    for (auto idx : ex.selected) {
      std::string text;
      for (const auto& tok : t.sentences[idx].tokens) {
        if (!text.empty()) text += " ";
        text += tok;
      }
      texts.push_back(std::move(text));
    }
    j["summary"] = std::move(texts);
    j["budget_words"] = ex.budget_words;
    j["used_words"] = ex.used_words;
    j["guaranteed_pick"] = ex.guaranteed_pick;
    os << j.dump() << "\n";

    if (opt.attention) {
      nlohmann::json ja;
      ja["id"] = t.id;
      nlohmann::json words = nlohmann::json::array();
      for (std::size_t si = 0; si < t.sentences.size(); ++si)
        words.push_back(cmd::attention_group(fwd.attention.word_units[si],
                                             &t.sentences[si].tokens));
      ja["word_attention"] = std::move(words);
      ja["sentence_attention"] =
          cmd::attention_group(fwd.attention.sentence_units, nullptr);
      attn << ja.dump() << "\n";
    }
    ++sum.threads;
  }
  os.close();

  std::vector<std::string> inputs = {opt.threads_path, opt.checkpoint_path,
                                     opt.embeddings_path};
  if (!opt.contextual_path.empty()) inputs.push_back(opt.contextual_path);
  cmd::write_manifest(opt.out_path, "summarize", cfg, inputs, started,
                      cmd::now_iso8601());
  return sum;
}

// ---- evaluate ----

struct EvaluateOptions {
  std::string threads_path;    // reference threads with golds
  std::string summaries_path;  // output of summarize
  std::string labels_path;     // optional reference labels
  std::string out_path;        // optional report file
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool skip_malformed = false;
};

struct EvalReport {
  std::size_t threads = 0;
  std::size_t skipped_no_reference = 0;
  Score rouge1, rouge2, rougeL;
  SentenceMetrics sentence_level;
  double accuracy = 0.0;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  auto score = [](const Score& s) {
    return nlohmann::json{
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  };
  nlohmann::json j;
  j["threads"] = r.threads;
  j["skipped_no_reference"] = r.skipped_no_reference;
  j["rouge1"] = score(r.rouge1);
  j["rouge2"] = score(r.rouge2);
  j["rougeL"] = score(r.rougeL);
  j["sentence_level"] = {
      {"tp", r.sentence_level.tp},       {"fp", r.sentence_level.fp},
      {"fn", r.sentence_level.fn},       {"tn", r.sentence_level.tn},
      {"precision", r.sentence_level.precision},
      {"recall", r.sentence_level.recall},
      {"f1", r.sentence_level.f1},       {"accuracy", r.accuracy}};
  return j;
}

inline EvalReport run_evaluate(const EvaluateOptions& opt,
                               std::ostream& report_out) {
  const std::string started = cmd::now_iso8601();
  TrainConfig cfg = cmd::effective_config(opt.config_path, opt.seed);
  auto threads = cmd::read_threads(opt.threads_path, opt.skip_malformed);
  cmd::require_readable(opt.summaries_path, "summaries");

  std::map<std::string, const Thread*> by_id;
  for (const auto& t : threads) by_id[t.id] = &t;

  std::map<std::string, std::vector<double>> label_file;
  if (!opt.labels_path.empty())
    label_file = cmd::read_labels_file(opt.labels_path);

  std::ifstream in(opt.summaries_path);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> orphans;
  EvalReport rep;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  OracleConfig oc{cfg.ratio, cfg.oracle_metric, cfg.keep_stopwords};

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
      throw DataError(opt.summaries_path + ":" + std::to_string(line_no) +
                      ": " + e.what());
    }
    const std::string id = j.at("id").get<std::string>();
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      orphans.push_back(id);
      continue;
    }
    const Thread& t = *it->second;
    const auto selected = j.at("selected").get<std::vector<std::size_t>>();
    for (auto s : selected)
      if (s >= t.sentences.size())
        throw DataError("summary for thread " + id +
                        " selects sentence " + std::to_string(s) +
                        " but the thread has " +
                        std::to_string(t.sentences.size()));

    // rouge against the reference summaries
    std::vector<std::string> sys;
    for (auto s : selected)
      for (const auto& tok : t.sentences[s].tokens) sys.push_back(tok);
    sys = score_tokens(sys, cfg.keep_stopwords);
    std::vector<std::vector<std::string>> refs;
    for (const auto& g : t.golds) {
      auto norm = score_tokens(g, cfg.keep_stopwords);
      if (!norm.empty()) refs.push_back(std::move(norm));
    }
    if (refs.empty()) {
      ++rep.skipped_no_reference;
    } else {
      auto add = [](Score* acc, const Score& s) {
        acc->precision += s.precision;
        acc->recall += s.recall;
        acc->f1 += s.f1;
      };
      add(&rep.rouge1, rouge_n(sys, refs, 1));
      add(&rep.rouge2, rouge_n(sys, refs, 2));
      add(&rep.rougeL, rouge_l(sys, refs));
      ++rep.threads;
    }

    // sentence-level confusion against reference labels
    std::vector<int> actual;
    if (!label_file.empty()) {
      auto lit = label_file.find(id);
      if (lit == label_file.end())
        throw DataError("labels file has no entry for thread " + id);
      for (double v : lit->second) actual.push_back(v > 0.5 ? 1 : 0);
    } else {
      actual = greedy_label(t.sentence_tokens(), t.golds, oc).labels;
    }
    if (actual.size() != t.sentences.size())
      throw DataError("thread " + id + ": " + std::to_string(actual.size()) +
                      " labels for " + std::to_string(t.sentences.size()) +
                      " sentences");
    std::vector<int> predicted(t.sentences.size(), 0);
    for (auto s : selected) predicted[s] = 1;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      if (predicted[i] && actual[i]) ++tp;
      else if (predicted[i] && !actual[i]) ++fp;
      else if (!predicted[i] && actual[i]) ++fn;
      else ++tn;
    }
  }

  if (!orphans.empty()) {
    std::string msg = "summaries reference unknown thread ids:";
    for (const auto& id : orphans) msg += " " + id;
    throw DataError(msg);
  }

  if (rep.threads > 0) {
    const double n = static_cast<double>(rep.threads);
    for (Score* s : {&rep.rouge1, &rep.rouge2, &rep.rougeL}) {
      s->precision /= n;
      s->recall /= n;
      s->f1 /= n;
    }
  }
  rep.sentence_level.tp = tp;
  rep.sentence_level.fp = fp;
  rep.sentence_level.fn = fn;
  rep.sentence_level.tn = tn;
  const double denom_p = static_cast<double>(tp + fp);
  const double denom_r = static_cast<double>(tp + fn);
  rep.sentence_level.precision = denom_p > 0 ? tp / denom_p : 0.0;
  rep.sentence_level.recall = denom_r > 0 ? tp / denom_r : 0.0;
  rep.sentence_level.f1 =
      (rep.sentence_level.precision + rep.sentence_level.recall) > 0
          ? 2 * rep.sentence_level.precision * rep.sentence_level.recall /
                (rep.sentence_level.precision + rep.sentence_level.recall)
          : 0.0;
  const std::size_t total = tp + fp + fn + tn;
  rep.accuracy =
      total > 0 ? static_cast<double>(tp + tn) / static_cast<double>(total)
                : 0.0;

  const nlohmann::json rj = eval_report_to_json(rep);
  report_out << rj.dump(2) << "\n";
  if (!opt.out_path.empty()) {
    std::ofstream os(opt.out_path, std::ios::trunc);
    if (!os) throw DataError("cannot write report file " + opt.out_path);
    os << rj.dump(2) << "\n";
    os.close();
    cmd::write_manifest(opt.out_path, "evaluate", cfg,
                        {opt.threads_path, opt.summaries_path}, started,
                        cmd::now_iso8601());
  }
  return rep;
}

// ---- pipeline ----

struct PipelineOptions {
  std::string threads_path;
  std::string embeddings_path;
  std::string contextual_path;  // optional
  std::string out_dir;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool attention = false;
  bool skip_malformed = false;
};

struct PipelineSummary {
  LabelSummary label;
  TrainSummary train;
  SummarizeSummary summarize;
  EvalReport eval;
  std::string labels_path, checkpoint_path, summaries_path, report_path;
};

inline PipelineSummary run_pipeline(const PipelineOptions& opt,
                                    std::ostream& report_out) {
  namespace fs = std::filesystem;
  if (opt.out_dir.empty()) throw UsageError("pipeline needs an output directory");
  fs::create_directories(opt.out_dir);

  PipelineSummary s;
  s.labels_path = (fs::path(opt.out_dir) / "labels.jsonl").string();
  s.checkpoint_path = (fs::path(opt.out_dir) / "model.ck").string();
  s.summaries_path = (fs::path(opt.out_dir) / "summaries.jsonl").string();
  s.report_path = (fs::path(opt.out_dir) / "report.json").string();

  LabelOptions lo;
  lo.threads_path = opt.threads_path;
  lo.out_path = s.labels_path;
  lo.config_path = opt.config_path;
  lo.seed = opt.seed;
  lo.skip_malformed = opt.skip_malformed;
  s.label = run_label(lo);

  TrainOptions to;
  to.threads_path = opt.threads_path;
  to.labels_path = s.labels_path;
  to.embeddings_path = opt.embeddings_path;
  to.contextual_path = opt.contextual_path;
  to.out_path = s.checkpoint_path;
  to.config_path = opt.config_path;
  to.seed = opt.seed;
  to.skip_malformed = opt.skip_malformed;
  s.train = run_train(to);

  SummarizeOptions so;
  so.threads_path = opt.threads_path;
  so.checkpoint_path = s.checkpoint_path;
  so.embeddings_path = opt.embeddings_path;
  so.contextual_path = opt.contextual_path;
  so.out_path = s.summaries_path;
  so.config_path = opt.config_path;
  so.seed = opt.seed;
  so.attention = opt.attention;
  so.skip_malformed = opt.skip_malformed;
  s.summarize = run_summarize(so);

  EvaluateOptions eo;
  eo.threads_path = opt.threads_path;
  eo.summaries_path = s.summaries_path;
  eo.labels_path = s.labels_path;
  eo.out_path = s.report_path;
  eo.config_path = opt.config_path;
  eo.seed = opt.seed;
  eo.skip_malformed = opt.skip_malformed;
  s.eval = run_evaluate(eo, report_out);

  return s;
}

}  // namespace threadsumm
