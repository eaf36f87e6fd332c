#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "testutil.hpp"
#include "threadsumm/train.hpp"

using namespace threadsumm;

TEST_CASE("bce_loss matches hand-computed values", "[train]") {
  auto p1 = Tensor::from({1}, {0.5});
  REQUIRE(tsu::near(bce_loss(p1, {1.0}).values()[0], std::log(2.0), 1e-12));

  auto p2 = Tensor::from({2}, {0.9, 0.2});
  const double expect = -(std::log(0.9) + std::log(0.8)) / 2.0;
  REQUIRE(tsu::near(bce_loss(p2, {1.0, 0.0}).values()[0], expect, 1e-12));
  REQUIRE(tsu::near(bce_loss(p2, {1.0, 0.0}).values()[0], 0.164252033486018,
                    1e-12));

  // pos_weight scales only the positive term
  REQUIRE(tsu::near(bce_loss(p1, {1.0}, 2.0).values()[0], 2.0 * std::log(2.0),
                    1e-12));
  auto p3 = Tensor::from({1}, {0.5});
  REQUIRE(tsu::near(bce_loss(p3, {0.0}, 2.0).values()[0], std::log(2.0),
                    1e-12));
}

TEST_CASE("bce_loss input validation", "[train]") {
  auto m = Tensor::from({2, 1}, {0.5, 0.5});
  REQUIRE_THROWS_AS(bce_loss(m, {1.0, 0.0}), ShapeError);
  auto v = Tensor::from({2}, {0.5, 0.5});
  REQUIRE_THROWS_AS(bce_loss(v, {1.0}), ShapeError);
  REQUIRE_THROWS_AS(bce_loss(v, {1.0, 1.5}), DataError);
  REQUIRE_THROWS_AS(bce_loss(v, {1.0, 0.0}, 0.0), ConfigError);
  REQUIRE_THROWS_AS(bce_loss(Tensor::from({0}, {}), {}), ShapeError);
}

TEST_CASE("bce_loss gradient matches finite differences", "[train]") {
  Rng rng(17);
  Tensor w = Tensor::uniform({4}, rng, -1.0, 1.0);
  std::vector<double> labels = {1.0, 0.0, 1.0, 0.0};

  std::vector<std::pair<std::string, Tensor*>> params = {{"w", &w}};
  auto res = gradient_check(
      params, [&] { return bce_loss(sigmoid(w), labels, 1.0); });
  REQUIRE(res.max_rel_err < 1e-6);

  auto res2 = gradient_check(
      params, [&] { return bce_loss(sigmoid(w), labels, 2.5); });
  REQUIRE(res2.max_rel_err < 1e-6);
}

TEST_CASE("bce_loss gradient is zero inside the clamp", "[train]") {
  Tensor p = Tensor::from({2}, {1e-15, 0.5});
  p.set_requires_grad(true);
  Tape tape;
  Tensor loss = bce_loss(p, {0.0, 1.0});
  tape.backward(loss);
  auto g = tape.grad(p).values();
  REQUIRE(g[0] == 0.0);
  REQUIRE(tsu::near(g[1], -1.0, 1e-12));  // -(1/0.5)/2
}

TEST_CASE("sgd step is exact", "[train]") {
  Tensor w = Tensor::from({2}, {1.0, -2.0});
  auto params = std::vector<std::pair<std::string, Tensor*>>{{"w", &w}};
  Optimizer opt(OptimizerKind::sgd, 0.1);
  opt.step(params, {{0.5, -1.0}});
  REQUIRE(tsu::near(w.values()[0], 0.95, 1e-15));
  REQUIRE(tsu::near(w.values()[1], -1.9, 1e-15));
}

TEST_CASE("rmsprop first step and constant-gradient limit", "[train]") {
  Tensor w = Tensor::from({1}, {0.0});
  auto params = std::vector<std::pair<std::string, Tensor*>>{{"w", &w}};
  Optimizer opt(OptimizerKind::rmsprop, 0.001);
  opt.step(params, {{1.0}});
  // a = 0.1, step = lr / (sqrt(0.1) + eps)
  REQUIRE(tsu::near(w.values()[0], -0.0031622776601683794, 1e-8));

  // with a constant gradient the step size approaches lr
  double before = w.values()[0];
  for (int i = 0; i < 200; ++i) {
    before = w.values()[0];
    opt.step(params, {{1.0}});
  }
  REQUIRE(tsu::near(before - w.values()[0], 0.001, 1e-5));
}

TEST_CASE("adam first step", "[train]") {
  Tensor w = Tensor::from({1}, {0.0});
  auto params = std::vector<std::pair<std::string, Tensor*>>{{"w", &w}};
  Optimizer opt(OptimizerKind::adam, 0.01);
  opt.step(params, {{2.0}});
  // bias-corrected m=2, v=4: step = lr * 2 / (2 + eps)
  REQUIRE(tsu::near(w.values()[0], -0.01, 1e-9));
}

TEST_CASE("optimizer state survives a save and restore", "[train]") {
  auto run_steps = [](Optimizer& opt, Tensor& w, int n) {
    auto params = std::vector<std::pair<std::string, Tensor*>>{{"w", &w}};
    for (int i = 0; i < n; ++i) opt.step(params, {{0.3 + 0.1 * i}});
  };

  Tensor a = Tensor::from({1}, {1.0});
  Optimizer oa(OptimizerKind::adam, 0.05);
  run_steps(oa, a, 5);

  Tensor b = Tensor::from({1}, {1.0});
  Optimizer ob(OptimizerKind::adam, 0.05);
  run_steps(ob, b, 2);
  auto saved = ob.state();
  Optimizer oc(OptimizerKind::adam, 0.05);
  oc.restore(saved);
  auto params = std::vector<std::pair<std::string, Tensor*>>{{"w", &b}};
  for (int i = 2; i < 5; ++i) oc.step(params, {{0.3 + 0.1 * i}});

  REQUIRE(a.values()[0] == b.values()[0]);
}

TEST_CASE("global norm clipping", "[train]") {
  std::vector<std::vector<double>> g = {{3.0}, {4.0}};
  REQUIRE(clip_global_norm(&g, 5.0) == 5.0);
  REQUIRE(g[0][0] == 3.0);  // norm == clip leaves values alone

  REQUIRE(clip_global_norm(&g, 2.5) == 5.0);
  REQUIRE(tsu::near(g[0][0], 1.5, 1e-12));
  REQUIRE(tsu::near(g[1][0], 2.0, 1e-12));

  std::vector<std::vector<double>> h = {{3.0, 4.0}};
  REQUIRE(clip_global_norm(&h, 0.0) == 5.0);  // disabled
  REQUIRE(h[0][1] == 4.0);
}

TEST_CASE("train config defaults are frozen", "[train]") {
  auto j = train_config_to_json(TrainConfig{});
  REQUIRE(j["seed"] == 1);
  REQUIRE(j["word_hidden"] == 200);
  REQUIRE(j["sentence_hidden"] == 100);
  REQUIRE(j["filters"] == 100);
  REQUIRE(j["fields"] == std::vector<std::size_t>{2});
  REQUIRE(j["conv_depth"] == 1);
  REQUIRE(j["conv_stride"] == 1);
  REQUIRE(j["dropout"] == 0.3);
  REQUIRE(j["use_attention"] == true);
  REQUIRE(j["attend_over"] == "positions");
  REQUIRE(j["contextual"] == "none");
  REQUIRE(j["lr"] == 0.001);
  REQUIRE(j["batch"] == 16);
  REQUIRE(j["optimizer"] == "rmsprop");
  REQUIRE(j["max_epochs"] == 500);
  REQUIRE(j["patience"] == 3);
  REQUIRE(j["split"] == std::vector<double>{0.8, 0.1, 0.1});
  REQUIRE(j["folds"] == 6);
  REQUIRE(j["ratio"] == 0.2);
  REQUIRE(j["novelty"] == 0.5);
  REQUIRE(j["clip_norm"] == 5.0);
  REQUIRE(j["oracle_metric"] == "f1");
  REQUIRE(j["keep_stopwords"] == true);
  REQUIRE(j["stop_on_first_overflow"] == false);
  REQUIRE(j["pos_weight"] == 1.0);
  REQUIRE(j["retrain_with_dev"] == false);
}

TEST_CASE("train config json round trip and validation", "[train]") {
  nlohmann::json j = {{"seed", 7},      {"lr", 0.01},
                      {"batch", 4},     {"optimizer", "adam"},
                      {"filters", 8},   {"fields", {2, 3}},
                      {"dropout", 0.1}, {"oracle_metric", "recall"}};
  TrainConfig c = train_config_from_json(j);
  REQUIRE(c.seed == 7);
  REQUIRE(c.lr == 0.01);
  REQUIRE(c.batch == 4);
  REQUIRE(c.optimizer == OptimizerKind::adam);
  REQUIRE(c.model.filters == 8);
  REQUIRE(c.model.fields == std::vector<std::size_t>{2, 3});
  REQUIRE(c.oracle_metric == OracleMetric::recall);
  REQUIRE(c.model.oov_seed == 7);

  TrainConfig rt = train_config_from_json(train_config_to_json(c));
  REQUIRE(train_config_to_json(rt) == train_config_to_json(c));

  REQUIRE_THROWS_WITH(
      train_config_from_json(nlohmann::json{{"bogus_key", 1}, {"lr", 0.1}}),
      Catch::Matchers::ContainsSubstring("bogus_key"));
  REQUIRE_THROWS_AS(train_config_from_json(nlohmann::json{{"lr", -1.0}}),
                    ConfigError);
  REQUIRE_THROWS_AS(
      train_config_from_json(nlohmann::json{{"split", {0.5, 0.4, 0.2}}}),
      ConfigError);
  REQUIRE_THROWS_AS(
      train_config_from_json(nlohmann::json{{"optimizer", "adagrad"}}),
      ConfigError);
  REQUIRE_THROWS_AS(train_config_from_json(nlohmann::json{{"ratio", 1.5}}),
                    ConfigError);
  REQUIRE_THROWS_AS(train_config_from_json(nlohmann::json{{"batch", 0}}),
                    ConfigError);
}

TEST_CASE("config hash is stable and sensitive", "[train]") {
  TrainConfig a, b;
  REQUIRE(config_hash(a) == config_hash(b));
  b.lr = 0.002;
  REQUIRE(config_hash(a) != config_hash(b));
  REQUIRE(config_hash(a).size() == 16);
}

TEST_CASE("split_threads partitions deterministically", "[train]") {
  auto s1 = split_threads(20, {0.8, 0.1, 0.1}, 5);
  auto s2 = split_threads(20, {0.8, 0.1, 0.1}, 5);
  REQUIRE(s1.train == s2.train);
  REQUIRE(s1.val == s2.val);
  REQUIRE(s1.test == s2.test);
  REQUIRE(s1.train.size() == 16);
  REQUIRE(s1.val.size() == 2);
  REQUIRE(s1.test.size() == 2);

  std::set<std::size_t> all;
  for (auto i : s1.train) all.insert(i);
  for (auto i : s1.val) all.insert(i);
  for (auto i : s1.test) all.insert(i);
  REQUIRE(all.size() == 20);

  auto s3 = split_threads(20, {0.8, 0.1, 0.1}, 6);
  REQUIRE(s1.train != s3.train);
}

TEST_CASE("kfold_split laws", "[train]") {
  auto folds = kfold_split(10, 3, 99);
  REQUIRE(folds.size() == 3);
  REQUIRE(folds[0].test.size() == 4);
  REQUIRE(folds[1].test.size() == 3);
  REQUIRE(folds[2].test.size() == 3);

  std::set<std::size_t> all;
  for (const auto& f : folds) {
    for (auto i : f.test) {
      REQUIRE(all.count(i) == 0);
      all.insert(i);
    }
    REQUIRE(f.train.size() + f.test.size() == 10);
    std::set<std::size_t> tr(f.train.begin(), f.train.end());
    for (auto i : f.test) REQUIRE(tr.count(i) == 0);
  }
  REQUIRE(all.size() == 10);

  auto again = kfold_split(10, 3, 99);
  for (std::size_t f = 0; f < 3; ++f)
    REQUIRE(folds[f].test == again[f].test);

  REQUIRE_THROWS_AS(kfold_split(3, 6, 1), ConfigError);
  REQUIRE_THROWS_AS(kfold_split(10, 1, 1), ConfigError);
}

TEST_CASE("hyper space decode and sampling", "[train]") {
  REQUIRE(hyper_space_size() == 368640);

  auto h0 = hyper_decode(0);
  REQUIRE(h0.word_hidden == 25);
  REQUIRE(h0.sentence_hidden == 25);
  REQUIRE(h0.conv_depth == 1);
  REQUIRE(h0.filters == 100);
  REQUIRE(h0.fields == std::vector<std::size_t>{1});
  REQUIRE(h0.dropout == 0.0);
  REQUIRE(h0.lr == 0.001);
  REQUIRE(h0.batch == 16);
  REQUIRE(h0.optimizer == OptimizerKind::sgd);

  auto hl = hyper_decode(hyper_space_size() - 1);
  REQUIRE(hl.word_hidden == 200);
  REQUIRE(hl.optimizer == OptimizerKind::adam);
  REQUIRE(hl.fields == std::vector<std::size_t>{2, 3, 4, 5});

  REQUIRE_THROWS_AS(hyper_decode(hyper_space_size()), ConfigError);

  auto picks = random_search(0.001, 42);
  REQUIRE(picks.size() == 369);  // ceil(0.001 * 368640)
  auto again = random_search(0.001, 42);
  REQUIRE(picks.size() == again.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& h = picks[i];
    REQUIRE(h.word_hidden == again[i].word_hidden);
    REQUIRE(h.lr == again[i].lr);
    std::string key = std::to_string(h.word_hidden) + "," +
                      std::to_string(h.sentence_hidden) + "," +
                      std::to_string(h.conv_depth) + "," +
                      std::to_string(h.filters) + "," +
                      std::to_string(h.fields.size()) + ":" +
                      std::to_string(h.fields[0]) + "," +
                      std::to_string(h.dropout) + "," +
                      std::to_string(h.lr) + "," + std::to_string(h.batch) +
                      "," + optimizer_name(h.optimizer);
    REQUIRE(seen.count(key) == 0);
    seen.insert(key);
  }

  REQUIRE_THROWS_AS(random_search(0.0, 1), ConfigError);
  REQUIRE_THROWS_AS(random_search(1.5, 1), ConfigError);

  TrainConfig base;
  auto applied = apply_hyper(hl, base);
  REQUIRE(applied.model.word_hidden == 200);
  REQUIRE(applied.optimizer == OptimizerKind::adam);
  REQUIRE(applied.model.fields == hl.fields);
}

namespace {

EmbeddingTable corpus_table(tsu::TempDir& dir) {
  auto path = dir.file("emb.txt");
  tsu::write_file(path,
                  "8 4\n"
                  "pick 0.9 0.1 -0.3 0.2\n"
                  "this 0.2 -0.4 0.5 0.1\n"
                  "one -0.1 0.6 0.2 -0.2\n"
                  "skip -0.8 -0.2 0.3 -0.1\n"
                  "that 0.1 0.3 -0.6 0.4\n"
                  "noise -0.3 -0.5 -0.1 0.6\n"
                  "filler 0.4 -0.1 0.1 -0.5\n"
                  "words -0.2 0.2 0.4 0.3\n");
  return EmbeddingTable::load(path);
}

std::vector<LabeledThread> corpus_threads() {
  std::vector<LabeledThread> out;
  const std::vector<std::vector<std::string>> pos = {
      {"pick", "this", "one"},
      {"pick", "this", "one", "words"},
      {"one", "pick", "this"}};
  const std::vector<std::vector<std::string>> neg = {
      {"skip", "that", "noise"},
      {"filler", "words", "that"},
      {"noise", "filler", "skip"},
      {"that", "skip", "words"}};
  for (int t = 0; t < 6; ++t) {
    LabeledThread lt;
    lt.thread.id = "c" + std::to_string(t);
    lt.thread.sentences.push_back({neg[t % neg.size()], 0});
    lt.thread.sentences.push_back({pos[t % pos.size()], 1});
    lt.thread.sentences.push_back({neg[(t + 1) % neg.size()], 2});
    lt.labels = {0.0, 1.0, 0.0};
    out.push_back(std::move(lt));
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig tc;
  tc.seed = 3;
  tc.model.word_hidden = 4;
  tc.model.sentence_hidden = 4;
  tc.model.filters = 4;
  tc.model.fields = {2};
  tc.model.conv_depth = 1;
  tc.model.dropout = 0.0;
  tc.lr = 0.01;
  tc.batch = 2;
  tc.optimizer = OptimizerKind::rmsprop;
  tc.max_epochs = 25;
  tc.patience = 10;
  return tc;
}

}  // namespace

TEST_CASE("training drives the loss down on a planted corpus",
          "[train][loop]") {
  tsu::TempDir dir("train");
  auto emb = corpus_table(dir);
  auto threads = corpus_threads();
  std::vector<LabeledThread> train(threads.begin(), threads.begin() + 4);
  std::vector<LabeledThread> val(threads.begin() + 4, threads.end());

  TrainConfig tc = small_config();
  TrainPaths paths;
  paths.checkpoint = dir.file("best.ck");
  paths.loss_csv = dir.file("loss.csv");

  auto out = train_model(tc, train, val, emb, paths);
  REQUIRE(out.epochs_run == out.history.size());
  REQUIRE(out.history.size() >= 2);
  REQUIRE(out.history.back().train_loss < out.history.front().train_loss);

  double min_val = out.history.front().val_loss;
  for (const auto& h : out.history) min_val = std::min(min_val, h.val_loss);
  REQUIRE(out.best_val == min_val);

  auto ck = load_checkpoint(paths.checkpoint);
  REQUIRE(ck.meta["epoch"].get<std::size_t>() == out.best_epoch);
  auto la = param_list(out.best_params);
  auto lb = param_list(ck.params);
  for (std::size_t i = 0; i < la.size(); ++i)
    REQUIRE(la[i].second->values() == lb[i].second->values());

  auto csv = tsu::read_file(paths.loss_csv);
  REQUIRE(csv.rfind("epoch,train_loss,val_loss\n", 0) == 0);
  std::size_t rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  REQUIRE(rows == out.epochs_run + 1);
}

TEST_CASE("early stopping fires when validation loss keeps rising",
          "[train][loop]") {
  tsu::TempDir dir("train");
  auto emb = corpus_table(dir);
  auto threads = corpus_threads();
  std::vector<LabeledThread> train(threads.begin(), threads.begin() + 4);
  // validation on the same threads with inverted labels: as the fit
  // improves, this loss must climb
  std::vector<LabeledThread> val(threads.begin(), threads.begin() + 2);
  for (auto& lt : val)
    for (auto& y : lt.labels) y = 1.0 - y;

  TrainConfig tc = small_config();
  tc.max_epochs = 200;
  tc.patience = 3;
  auto out = train_model(tc, train, val, emb, {});
  REQUIRE(out.stopped_early);
  REQUIRE(out.epochs_run < 200);
  const auto& h = out.history;
  REQUIRE(h.size() >= 4);
  for (std::size_t i = h.size() - 3; i < h.size(); ++i)
    REQUIRE(h[i].val_loss > h[i - 1].val_loss);
}

TEST_CASE("retraining with dev merged runs every epoch", "[train][loop]") {
  tsu::TempDir dir("train");
  auto emb = corpus_table(dir);
  auto threads = corpus_threads();
  std::vector<LabeledThread> train(threads.begin(), threads.begin() + 4);
  std::vector<LabeledThread> val(threads.begin() + 4, threads.end());

  TrainConfig tc = small_config();
  tc.max_epochs = 5;
  tc.retrain_with_dev = true;
  auto out = train_model(tc, train, val, emb, {});
  REQUIRE_FALSE(out.stopped_early);
  REQUIRE(out.epochs_run == 5);
}

TEST_CASE("resumed training matches an uninterrupted run bit for bit",
          "[train][loop]") {
  tsu::TempDir dir("train");
  auto emb = corpus_table(dir);
  auto threads = corpus_threads();
  std::vector<LabeledThread> train(threads.begin(), threads.begin() + 4);
  std::vector<LabeledThread> val(threads.begin() + 4, threads.end());

  TrainConfig tc = small_config();
  tc.model.dropout = 0.3;  // exercise the generator stream across the seam
  tc.max_epochs = 6;
  tc.patience = 50;

  TrainPaths pa;
  pa.state = dir.file("a.state");
  pa.loss_csv = dir.file("a.csv");
  auto full = train_model(tc, train, val, emb, pa);

  TrainPaths pb;
  pb.state = dir.file("b.state");
  pb.loss_csv = dir.file("b.csv");
  TrainConfig tc3 = tc;
  tc3.max_epochs = 3;
  auto part = train_model(tc3, train, val, emb, pb);
  REQUIRE(part.epochs_run == 3);

  auto resumed = train_model(tc, train, val, emb, pb, nullptr, true);
  REQUIRE(resumed.epochs_run == 6);
  REQUIRE(resumed.history.size() == full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) {
    REQUIRE(resumed.history[i].train_loss == full.history[i].train_loss);
    REQUIRE(resumed.history[i].val_loss == full.history[i].val_loss);
  }

  auto la = param_list(full.params);
  auto lb = param_list(resumed.params);
  for (std::size_t i = 0; i < la.size(); ++i)
    REQUIRE(la[i].second->values() == lb[i].second->values());

  REQUIRE(tsu::read_file(pa.loss_csv) == tsu::read_file(pb.loss_csv));

  REQUIRE_THROWS_AS(train_model(tc, train, val, emb, {}, nullptr, true),
                    ConfigError);
  TrainPaths missing;
  missing.state = dir.file("nope.state");
  REQUIRE_THROWS_AS(train_model(tc, train, val, emb, missing, nullptr, true),
                    DataError);
}

TEST_CASE("eval_loss is deterministic and validates", "[train]") {
  tsu::TempDir dir("train");
  auto emb = corpus_table(dir);
  auto threads = corpus_threads();

  TrainConfig tc = small_config();
  ModelConfig mc = tc.model;
  mc.embedding_dim = emb.dim();
  Rng rng(9);
  ModelParams p = model_init(mc, rng);

  double a = eval_loss(p, mc, threads, emb, 1.0);
  double b = eval_loss(p, mc, threads, emb, 1.0);
  REQUIRE(a == b);
  REQUIRE(a > 0.0);
  REQUIRE_THROWS_AS(eval_loss(p, mc, {}, emb, 1.0), DataError);

  auto bad = threads;
  bad[0].labels.pop_back();
  REQUIRE_THROWS_AS(train_model(tc, bad, {}, emb, {}), DataError);
}
