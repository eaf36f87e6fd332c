#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "threadsumm/commands.hpp"

namespace ts = threadsumm;

namespace {

void print_error(const std::string& kind, const std::string& msg) {
  nlohmann::json j;
  j["error"] = msg;
  j["kind"] = kind;
  std::cerr << j.dump() << "\n";
}

// shared flag plumbing
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool skip_malformed = false;
};

void add_common(CLI::App* cmd, Common* c) {
  cmd->add_option("--config", c->config_path, "run configuration (json)");
  cmd->add_option("--seed", c->seed, "override the configured seed");
  cmd->add_flag("--skip-malformed", c->skip_malformed,
                "skip unreadable thread records instead of failing");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"extractive summarization of discussion threads"};
  app.set_version_flag("--version", std::string(ts::kVersion));
  app.require_subcommand(1);

  // label
  auto* label = app.add_subcommand(
      "label", "derive extraction labels from reference summaries");
  ts::LabelOptions lo;
  Common lc;
  label->add_option("--threads", lo.threads_path, "threads jsonl")->required();
  label->add_option("--out", lo.out_path, "labels jsonl to write")->required();
  add_common(label, &lc);

  // train
  auto* train =
      app.add_subcommand("train", "fit the scoring model on labeled threads");
  ts::TrainOptions tro;
  Common trc;
  train->add_option("--threads", tro.threads_path, "threads jsonl")
      ->required();
  train->add_option("--labels", tro.labels_path,
                    "labels jsonl (made on the fly when omitted)");
  train->add_option("--embeddings", tro.embeddings_path, "word vectors file")
      ->required();
  train->add_option("--contextual", tro.contextual_path,
                    "contextual vectors jsonl");
  train->add_option("--out", tro.out_path, "checkpoint to write")->required();
  train->add_flag("--resume", tro.resume,
                  "continue from the checkpoint's training state");
  add_common(train, &trc);

  // summarize
  auto* summ = app.add_subcommand(
      "summarize", "score threads with a checkpoint and pick summaries");
  ts::SummarizeOptions so;
  Common sc;
  summ->add_option("--threads", so.threads_path, "threads jsonl")->required();
  summ->add_option("--checkpoint", so.checkpoint_path, "trained model")
      ->required();
  summ->add_option("--embeddings", so.embeddings_path, "word vectors file")
      ->required();
  summ->add_option("--contextual", so.contextual_path,
                   "contextual vectors jsonl");
  summ->add_option("--out", so.out_path, "summaries jsonl to write")
      ->required();
  summ->add_flag("--attention", so.attention,
                 "also write per-unit attention weights");
  add_common(summ, &sc);

  // evaluate
  auto* eval = app.add_subcommand(
      "evaluate", "score summaries against reference summaries");
  ts::EvaluateOptions eo;
  Common ec;
  eval->add_option("--threads", eo.threads_path, "threads jsonl")->required();
  eval->add_option("--summaries", eo.summaries_path, "summaries jsonl")
      ->required();
  eval->add_option("--labels", eo.labels_path,
                   "reference labels jsonl (derived when omitted)");
  eval->add_option("--out", eo.out_path, "also write the report here");
  add_common(eval, &ec);

  // pipeline
  auto* pipe = app.add_subcommand(
      "pipeline", "label, train, summarize, and evaluate in one run");
  ts::PipelineOptions po;
  Common pc;
  pipe->add_option("--threads", po.threads_path, "threads jsonl")->required();
  pipe->add_option("--embeddings", po.embeddings_path, "word vectors file")
      ->required();
  pipe->add_option("--contextual", po.contextual_path,
                   "contextual vectors jsonl");
  pipe->add_option("--out-dir", po.out_dir, "directory for all outputs")
      ->required();
  pipe->add_flag("--attention", po.attention,
                 "also write per-unit attention weights");
  add_common(pipe, &pc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // help and version exit 0, bad flags nonzero
  }

  try {
    if (*label) {
      lo.config_path = lc.config_path;
      lo.seed = lc.seed;
      lo.skip_malformed = lc.skip_malformed;
      auto s = ts::run_label(lo);
      std::cerr << "labeled " << s.threads << " threads ("
                << s.empty_reference << " without references)\n";
    } else if (*train) {
      tro.config_path = trc.config_path;
      tro.seed = trc.seed;
      tro.skip_malformed = trc.skip_malformed;
      auto s = ts::run_train(tro);
      std::cerr << "trained " << s.epochs_run << " epochs on "
                << s.train_threads << " threads, best validation loss "
                << s.best_val << " at epoch " << s.best_epoch
                << (s.stopped_early ? " (stopped early)" : "") << "\n";
    } else if (*summ) {
      so.config_path = sc.config_path;
      so.seed = sc.seed;
      so.skip_malformed = sc.skip_malformed;
      auto s = ts::run_summarize(so);
      std::cerr << "summarized " << s.threads << " threads\n";
    } else if (*eval) {
      eo.config_path = ec.config_path;
      eo.seed = ec.seed;
      eo.skip_malformed = ec.skip_malformed;
      ts::run_evaluate(eo, std::cout);
    } else if (*pipe) {
      po.config_path = pc.config_path;
      po.seed = pc.seed;
      po.skip_malformed = pc.skip_malformed;
      ts::run_pipeline(po, std::cout);
    }
  } catch (const ts::UsageError& e) {
    print_error("usage", e.what());
    return 2;
  } catch (const ts::ConfigError& e) {
    print_error("config", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
