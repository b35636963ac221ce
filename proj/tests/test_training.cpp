#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "support.hpp"
#include "uiim/training.hpp"

using namespace uiim;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "uiim-training-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

EncodedConversation sized(std::size_t n, const std::string& id) {
  EncodedConversation c;
  c.id = id;
  for (std::size_t i = 0; i < n; ++i) {
    EncodedUtterance u;
    u.token_ids.assign(1 + (i % 3), 2);
    u.pos_ids.assign(u.token_ids.size(), 0);
    c.utterances.push_back(u);
  }
  return c;
}

/// Encoded synthetic splits plus a small model config sized to them.
struct Fixture {
  std::vector<EncodedConversation> train, validation;
  ModelConfig model;
  std::size_t vocab = 0;
};

Fixture synthetic_fixture(std::size_t conversations, std::uint64_t seed, std::size_t d_h = 8) {
  const SyntheticCorpus s = generate_synthetic(conversations, seed);
  const Corpus train = select(s.corpus, s.splits.train);
  const Vocab vocab = Vocab::build(train);
  const PosInventory pos = PosInventory::build(train);
  const LabelSet labels = LabelSet::builtin("synthetic-4");
  Fixture f;
  f.train = encode_corpus(train, vocab, pos, StatisticsSchema{}, labels);
  f.validation = encode_corpus(select(s.corpus, s.splits.validation), vocab, pos, StatisticsSchema{}, labels);
  f.vocab = vocab.size();
  f.model = test::toy_config();
  f.model.d_w = d_h;
  f.model.d_h = f.model.lstm_hidden = f.model.mlp_hidden = d_h;
  f.model.d_p = pos.size();
  f.model.num_classes = 4;
  return f;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 8;
  c.learning_rate = 5e-3;
  c.max_epochs = 3;
  c.seed = 5;
  return c;
}

std::vector<Tensor> snapshot(UiimModel& m) {
  std::vector<Tensor> out;
  for (const Parameter* p : m.parameters()) out.push_back(p->value);
  return out;
}

bool same_values(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  for (std::size_t k = 0; k < a.size(); ++k)
    if (max_abs_diff(a[k], b[k]) != 0.0) return false;
  return true;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch_size"), std::invalid_argument);
    c = {};
    c.patience = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("patience"), std::invalid_argument);
    c = {};
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.weights.alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("conversations are grouped by utterance count") {
    const std::vector<EncodedConversation> split{sized(3, "a"), sized(3, "b"), sized(5, "c")};
    const auto batches = make_batches(split, 64, 1);
    REQUIRE(batches.size() == 2);
    std::multiset<std::size_t> sizes;
    for (const Batch& b : batches) {
      sizes.insert(b.conversations.size());
      for (const auto* c : b.conversations) CHECK(c->utterances.size() == b.utterances_per_conversation);
    }
    CHECK(sizes == std::multiset<std::size_t>{1, 2});
    CHECK(make_batches(split, 1, 1).size() == 3);
    for (const Batch& b : make_batches(split, 1, 1)) CHECK(b.conversations.size() == 1);
    CHECK_THROWS_AS(make_batches({}, 4, 1), std::invalid_argument);
    Rng rng(1);
    UiimModel m(test::toy_config(), test::kToyVocab, rng);
    CHECK_THROWS_AS(evaluate(m, {}, {}), std::invalid_argument);
  }

  TEST_CASE("batching invariants on random splits") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<EncodedConversation> split;
      const std::size_t n = 1 + rng.index(40);
      for (std::size_t i = 0; i < n; ++i) split.push_back(sized(1 + rng.index(6), "c" + std::to_string(i)));
      const std::size_t bs = 1 + rng.index(10);
      const std::uint64_t seed = rng.next();
      const auto batches = make_batches(split, bs, seed);
      std::set<const EncodedConversation*> seen;
      for (const Batch& b : batches) {
        CHECK(!b.conversations.empty());
        CHECK(b.conversations.size() <= bs);
        std::size_t longest = 0;
        for (const auto* c : b.conversations) {
          CHECK(c->utterances.size() == b.utterances_per_conversation);
          CHECK(seen.insert(c).second);
          for (const auto& u : c->utterances) longest = std::max(longest, u.length());
        }
        CHECK(b.max_tokens == longest);
      }
      CHECK(seen.size() == n);
      const auto again = make_batches(split, bs, seed);
      REQUIRE(again.size() == batches.size());
      for (std::size_t k = 0; k < batches.size(); ++k) CHECK(again[k].conversations == batches[k].conversations);
    }
  }

  TEST_CASE("adam matches a scalar reference") {
    Parameter p("p", Tensor::vector({0.5, -2.0}));
    Adam opt({&p}, 0.1);
    double m0 = 0, v0 = 0, m1 = 0, v1 = 0, w0 = 0.5, w1 = -2.0;
    for (int step = 1; step <= 5; ++step) {
      opt.zero_grad();
      p.grad[0] = 2.0 * p.value[0];
      p.grad[1] = std::cos(p.value[1]);
      const double g0 = 2.0 * w0, g1 = std::cos(w1);
      m0 = 0.9 * m0 + 0.1 * g0;
      v0 = 0.999 * v0 + 0.001 * g0 * g0;
      m1 = 0.9 * m1 + 0.1 * g1;
      v1 = 0.999 * v1 + 0.001 * g1 * g1;
      const double c1 = 1 - std::pow(0.9, step), c2 = 1 - std::pow(0.999, step);
      w0 -= 0.1 * (m0 / c1) / (std::sqrt(v0 / c2) + 1e-8);
      w1 -= 0.1 * (m1 / c1) / (std::sqrt(v1 / c2) + 1e-8);
      opt.step();
      CHECK(p.value[0] == doctest::Approx(w0).epsilon(1e-14));
      CHECK(p.value[1] == doctest::Approx(w1).epsilon(1e-14));
    }
    CHECK(opt.steps() == 5);
  }

  TEST_CASE("one step with a positive rate moves the parameters, a zero rate does not") {
    Fixture f = synthetic_fixture(20, 3);
    const auto batches = make_batches(f.train, 64, 1);
    for (double lr : {0.0, 1e-3}) {
      Rng rng(1);
      UiimModel m(f.model, f.vocab, rng);
      const auto before = snapshot(m);
      Adam opt(m.parameters(), lr);
      TrainConfig c = quick_config();
      c.learning_rate = lr;
      c.dropout = 0.0;
      const std::vector<Batch> one{batches.front()};
      Rng drop(1);
      const EpochStats first = train_epoch(m, opt, one, c, drop);
      const EpochStats second = train_epoch(m, opt, one, c, drop);
      CHECK(same_values(before, snapshot(m)) == (lr == 0.0));
      if (lr == 0.0) CHECK(first.losses.total == second.losses.total);
      CHECK(m.embedding.table.value.at(0, 0) == 0.0);
    }
  }

  TEST_CASE("zero auxiliary weights reduce training to cross-entropy") {
    Fixture f = synthetic_fixture(20, 3);
    Rng rng(1);
    UiimModel m(f.model, f.vocab, rng);
    Adam opt(m.parameters(), 0.0);
    TrainConfig c = quick_config();
    c.weights = {1.0, 0.0, 0.0};
    Rng drop(1);
    const EpochStats s = train_epoch(m, opt, make_batches(f.train, 8, 1), c, drop);
    CHECK(s.losses.total == doctest::Approx(s.losses.loss_cls).epsilon(1e-14));
    CHECK(s.losses.loss_u > 0.0);
  }

  TEST_CASE("non-finite losses abort with a diagnostic") {
    Fixture f = synthetic_fixture(20, 3);
    Rng rng(1);
    UiimModel m(f.model, f.vocab, rng);
    m.classifier.out_layer.bias.value[0] = std::numeric_limits<double>::infinity();
    Adam opt(m.parameters(), 1e-3);
    Rng drop(1);
    try {
      train_epoch(m, opt, make_batches(f.train, 8, 1), quick_config(), drop);
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("batch 0") != std::string::npos);
      CHECK(msg.find("loss_cls=") != std::string::npos);
      CHECK(msg.find("loss_u=") != std::string::npos);
    }
  }

  TEST_CASE("evaluation of constant predictors") {
    Fixture f = synthetic_fixture(20, 4);
    Rng rng(1);
    ModelConfig c = f.model;
    c.num_classes = 2;
    UiimModel m(c, f.vocab, rng);
    m.classifier.out_layer.weight.value.fill(0.0);
    m.classifier.out_layer.bias.value[0] = 1.0;
    std::vector<EncodedConversation> split = f.train;
    std::size_t index = 0;
    for (auto& conv : split)
      for (auto& u : conv.utterances) u.label = index++ % 2;
    const EvalResult half = evaluate(m, split, {});
    CHECK(half.total == index);
    CHECK(half.correct == (index + 1) / 2);
    CHECK(half.confusion[0][0] == half.correct);
    CHECK(half.confusion[1][0] == index / 2);
    CHECK(half.confusion[0][1] + half.confusion[1][1] == 0);
    for (auto& conv : split)
      for (auto& u : conv.utterances) u.label = 0;
    CHECK(evaluate(m, split, {}).accuracy == 1.0);
    CHECK(evaluate(m, split, {}).losses.loss_cls == doctest::Approx(std::log(1 + std::exp(-1.0))));
  }

  TEST_CASE("evaluation is deterministic and ignores dropout") {
    Fixture f = synthetic_fixture(30, 5);
    Rng rng(2);
    UiimModel m(f.model, f.vocab, rng);
    TrainConfig c;
    c.dropout = 0.3;
    const EvalResult a = evaluate(m, f.validation, c);
    c.dropout = 0.0;
    const EvalResult b = evaluate(m, f.validation, c);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.losses.total == b.losses.total);
    CHECK(a.confusion == b.confusion);
  }

  TEST_CASE("fit with zero epochs writes no rows and keeps parameters") {
    Fixture f = synthetic_fixture(20, 6);
    Rng rng(1);
    UiimModel m(f.model, f.vocab, rng);
    const auto before = snapshot(m);
    TrainConfig c = quick_config();
    c.max_epochs = 0;
    MetricsLog log(scratch("zero.csv"), "h");
    const FitResult r = fit(m, f.train, f.validation, c, &log);
    CHECK(r.epochs_run == 0);
    CHECK(log.rows() == 0);
    CHECK(same_values(before, snapshot(m)));
    CHECK(slurp(scratch("zero.csv")) == std::string("# config_hash=h\n") + MetricsLog::kHeader + "\n");
  }

  TEST_CASE("patience stops a run whose validation accuracy stops improving") {
    Fixture f = synthetic_fixture(20, 6);
    Rng rng(1);
    UiimModel m(f.model, f.vocab, rng);
    TrainConfig c = quick_config();
    c.learning_rate = 0.0;  // validation accuracy never improves after epoch 1
    c.patience = 1;
    c.max_epochs = 10;
    std::vector<std::size_t> improved;
    const FitResult r = fit(m, f.train, f.validation, c, nullptr, [&](std::size_t e) { improved.push_back(e); });
    CHECK(r.epochs_run == 2);
    CHECK(r.best_epoch == 1);
    CHECK(improved == std::vector<std::size_t>{1});
    c.patience = 3;
    CHECK(fit(m, f.train, f.validation, c, nullptr).epochs_run == 4);
  }

  TEST_CASE("fit restores the best parameters") {
    Fixture f = synthetic_fixture(30, 7);
    Rng rng(1);
    UiimModel m(f.model, f.vocab, rng);
    TrainConfig c = quick_config();
    c.max_epochs = 6;
    c.learning_rate = 2e-2;
    const FitResult r = fit(m, f.train, f.validation, c, nullptr);
    REQUIRE(r.best_epoch >= 1);
    const EvalResult now = evaluate(m, f.validation, c);
    CHECK(now.accuracy == r.validation_history[r.best_epoch - 1].accuracy);
    CHECK(now.losses.total == r.validation_history[r.best_epoch - 1].losses.total);
    CHECK(r.best_validation_accuracy == now.accuracy);
  }

  TEST_CASE("identical runs write byte-identical metrics") {
    Fixture f = synthetic_fixture(30, 8);
    std::vector<std::string> logs;
    for (int run = 0; run < 2; ++run) {
      Rng rng(3);
      UiimModel m(f.model, f.vocab, rng);
      const auto path = scratch("det" + std::to_string(run) + ".csv");
      {
        MetricsLog log(path, "abc");
        fit(m, f.train, f.validation, quick_config(), &log);
      }
      logs.push_back(slurp(path));
    }
    CHECK(logs[0] == logs[1]);
    CHECK(std::count(logs[0].begin(), logs[0].end(), '\n') == 2 + 2 * 3);
  }

  TEST_CASE("padding every batch leaves epoch losses unchanged") {
    Fixture f = synthetic_fixture(30, 9);
    std::vector<FitResult> runs;
    for (std::size_t pad : {0u, 25u}) {
      Rng rng(3);
      UiimModel m(f.model, f.vocab, rng);
      TrainConfig c = quick_config();
      c.pad_tokens_to = pad;
      runs.push_back(fit(m, f.train, f.validation, c, nullptr));
    }
    REQUIRE(runs[0].epochs_run == runs[1].epochs_run);
    for (std::size_t e = 0; e < runs[0].epochs_run; ++e) {
      const LossReport& a = runs[0].train_history[e].losses;
      const LossReport& b = runs[1].train_history[e].losses;
      CHECK(std::abs(a.loss_cls - b.loss_cls) <= 1e-10);
      CHECK(std::abs(a.loss_u - b.loss_u) <= 1e-10);
      CHECK(std::abs(a.loss_i - b.loss_i) <= 1e-10);
      CHECK(std::abs(a.total - b.total) <= 1e-10);
      const LossReport& va = runs[0].validation_history[e].losses;
      const LossReport& vb = runs[1].validation_history[e].losses;
      CHECK(std::abs(va.total - vb.total) <= 1e-10);
    }
  }

  TEST_CASE("training loss falls over the first epochs with default settings") {
    // Median over five seeds of the per-epoch training loss, full-size model.
    Fixture f = synthetic_fixture(60, 11, 224);
    f.model.heads = 4;
    std::vector<std::vector<double>> curves;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      UiimModel m(f.model, f.vocab, rng);
      TrainConfig c;
      c.seed = seed;
      c.max_epochs = 5;
      c.patience = 5;
      const FitResult r = fit(m, f.train, f.validation, c, nullptr);
      std::vector<double> curve;
      for (const auto& s : r.train_history) curve.push_back(s.losses.total);
      curves.push_back(curve);
    }
    for (std::size_t e = 1; e < 5; ++e) {
      std::vector<double> before, after;
      for (const auto& c : curves) {
        before.push_back(c.at(e - 1));
        after.push_back(c.at(e));
      }
      std::nth_element(before.begin(), before.begin() + 2, before.end());
      std::nth_element(after.begin(), after.begin() + 2, after.end());
      CHECK(after[2] < before[2]);
    }
  }

  TEST_CASE("run_training writes metrics and checkpoints") {
    const SyntheticCorpus s = generate_synthetic(20, 10);
    TrainingJob job;
    job.corpus = s.corpus;
    job.splits = s.splits;
    job.labels = LabelSet::builtin("synthetic-4");
    job.model = test::toy_config();
    job.model.d_w = 8;
    job.train = quick_config();
    job.train.max_epochs = 4;
    job.config_hash = fnv1a_hex("job");
    const auto out = scratch("run");
    std::filesystem::remove_all(out);
    job.out_dir = out;
    const TrainingOutcome o = run_training(job);
    CHECK(o.classifier.model->config().num_classes == 4);
    CHECK(o.classifier.model->config().d_s == 12);
    CHECK(o.initial_test.total == o.test.total);
    CHECK(std::filesystem::exists(out / "latest.ckpt"));
    std::size_t epoch_files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(out))
      if (entry.path().filename().string().rfind("epoch-", 0) == 0) ++epoch_files;
    CHECK(epoch_files == 1);
    char best[32];
    std::snprintf(best, sizeof best, "epoch-%04zu.ckpt", o.fit.best_epoch);
    CHECK(std::filesystem::exists(out / best));
    const std::string metrics = slurp(out / "metrics.csv");
    CHECK(metrics.rfind("# config_hash=" + job.config_hash + "\n" + MetricsLog::kHeader + "\n", 0) == 0);
    CHECK(metrics.find(",test,") != std::string::npos);
    CHECK(metrics.find(",train_eval,") != std::string::npos);
  }

  TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
  }
}
