#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "uiim/ablation.hpp"
#include "uiim/corpus.hpp"

using namespace uiim;

namespace {

const LabelSet kSynth = LabelSet::builtin("synthetic-4");

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "uiim-corpus-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string line_error(const std::string& text) {
  try {
    parse_corpus(text, kSynth);
  } catch (const CorpusError& e) {
    return e.what();
  }
  return "";
}

const std::set<std::string> kPunctuation{".", ",", "?", "!", "..."};

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("builtin label sets") {
    CHECK(LabelSet::builtin("mrda-5").labels() == std::vector<std::string>{"s", "q", "f", "b", "d"});
    CHECK(LabelSet::builtin("swda-42").size() == 42);
    CHECK(kSynth.labels() == std::vector<std::string>{"question", "exclaim", "ack", "state"});
    CHECK(kSynth.index("ack") == 2);
    CHECK_THROWS_AS(kSynth.index("other"), CorpusError);
    CHECK_THROWS_AS(LabelSet::builtin("nope"), CorpusError);
    CHECK_THROWS_AS(LabelSet("dup", {"a", "a"}), CorpusError);
  }

  TEST_CASE("shipped label files match the builtins") {
    for (const std::string name : {"swda-42", "mrda-5", "synthetic-4"}) {
      const LabelSet file = LabelSet::load(std::filesystem::path(UIIM_SOURCE_DIR) / "data" / "labels" / (name + ".txt"));
      CHECK(file.name() == name);
      CHECK(file.labels() == LabelSet::builtin(name).labels());
    }
  }

  TEST_CASE("label file round trip") {
    const LabelSet s("custom", {"x", "y y", "z"});
    const auto path = scratch("custom.txt");
    s.save(path);
    CHECK(LabelSet::load(path).labels() == s.labels());
    CHECK(LabelSet::resolve(path.string()).name() == "custom");
    CHECK(LabelSet::resolve("mrda-5").size() == 5);
  }

  TEST_CASE("corpus round trip") {
    const SyntheticCorpus s = generate_synthetic(12, 3);
    const auto path = scratch("round.jsonl");
    save_corpus(path, s.corpus);
    CHECK(load_corpus(path, kSynth) == s.corpus);
    Corpus odd{{"c \"1\"", {{"Ä", {"naïve", "\\", "\t"}, {"A", "B", "C"}, "state"}}}};
    CHECK(parse_corpus(serialize_corpus(odd), kSynth) == odd);
    const std::string two =
        R"({"id":"a","utterances":[{"speaker":"A","tokens":["ok"],"pos":["UH"],"label":"ack"}]})"
        "\n"
        R"({"id":"b","utterances":[{"speaker":"B","tokens":["x","?"],"pos":["NN","PUNCT"],"label":"question"}]})"
        "\n";
    const Corpus c = parse_corpus(two, kSynth);
    REQUIRE(c.size() == 2);
    CHECK(c[1].utterances[0].tokens == std::vector<std::string>{"x", "?"});
    CHECK(serialize_corpus(c) == two);
    CHECK(parse_corpus("", kSynth).empty());
    CHECK(parse_corpus("\n  \n", kSynth).empty());
  }

  TEST_CASE("loader errors name the line") {
    const std::string good =
        R"({"id":"a","utterances":[{"speaker":"A","tokens":["ok"],"pos":["UH"],"label":"ack"}]})";
    const std::string mismatch =
        R"({"id":"b","utterances":[{"speaker":"A","tokens":["a","b","c"],"pos":["X","Y"],"label":"state"}]})";
    std::string e = line_error(good + "\n" + mismatch + "\n");
    CHECK(e.find("line 2") != std::string::npos);
    CHECK(e.find("3 tokens") != std::string::npos);
    e = line_error(good + "\n\n" + R"({"id":"c","utterances":[{"speaker":"A","tokens":[],"pos":[],"label":"zz"}]})");
    CHECK(e.find("line 3") != std::string::npos);
    CHECK(e.find("zz") != std::string::npos);
    CHECK(line_error("{not json").find("line 1") != std::string::npos);
    CHECK(line_error(R"({"id":"d","utterances":[]})").find("no utterances") != std::string::npos);
    CHECK(line_error(R"({"id":"d"})").find("line 1") != std::string::npos);
    CHECK_THROWS_AS(load_corpus(scratch("missing.jsonl"), kSynth), CorpusError);
  }

  TEST_CASE("split manifests") {
    const SyntheticCorpus s = generate_synthetic(20, 1);
    const auto path = scratch("splits.json");
    s.splits.save(path);
    CHECK(SplitManifest::load(path) == s.splits);
    CHECK_NOTHROW(s.splits.validate(s.corpus));
    SplitManifest overlap = s.splits;
    overlap.test.push_back(overlap.train[0]);
    CHECK_THROWS_AS(overlap.validate(s.corpus), CorpusError);
    SplitManifest unknown = s.splits;
    unknown.validation.push_back("ghost");
    CHECK_THROWS_AS(unknown.validate(s.corpus), CorpusError);
    const Corpus sel = select(s.corpus, s.splits.test);
    REQUIRE(sel.size() == s.splits.test.size());
    for (std::size_t i = 0; i < sel.size(); ++i) CHECK(sel[i].id == s.splits.test[i]);
    CHECK_THROWS_AS(select(s.corpus, {"ghost"}), CorpusError);
    std::ofstream(scratch("bad.json")) << "{\"train\": []}";
    CHECK_THROWS_AS(SplitManifest::load(scratch("bad.json")), CorpusError);
  }

  TEST_CASE("reference split counts are soft checks") {
    SplitManifest m;
    m.train.resize(51);
    m.validation.resize(11);
    m.test.resize(11);
    CHECK(check_reference_split_counts(LabelSet::builtin("mrda-5"), m).empty());
    m.test.resize(10);
    CHECK(check_reference_split_counts(LabelSet::builtin("mrda-5"), m).size() == 1);
    CHECK(check_reference_split_counts(LabelSet::builtin("swda-42"), m).size() == 3);
    CHECK(check_reference_split_counts(kSynth, m).empty());
  }

  TEST_CASE("synthetic rule examples") {
    CHECK(synthetic_label({"ok", "."}) == "ack");
    CHECK(synthetic_label({"right"}) == "ack");
    CHECK(synthetic_label({"ok", "ok", "."}) == "state");
    CHECK(synthetic_label({"you", "go", "?"}) == "question");
    CHECK(synthetic_label({"ok", "?"}) == "question");
    CHECK(synthetic_label({"wow", "!"}) == "exclaim");
    CHECK(synthetic_label({"well", "."}) == "state");
    CHECK(synthetic_label({}) == "state");
  }

  TEST_CASE("synthetic corpora obey their contract") {
    for (std::uint64_t seed : {1u, 7u, 99u}) {
      for (std::size_t n : {10u, 57u, 200u}) {
        const SyntheticCorpus s = generate_synthetic(n, seed);
        CHECK(s.corpus.size() == n);
        std::map<std::string, std::size_t> counts;
        std::set<std::string> words, tags, ids;
        std::size_t total = 0;
        for (const auto& c : s.corpus) {
          CHECK(ids.insert(c.id).second);
          CHECK(c.utterances.size() >= 3);
          CHECK(c.utterances.size() <= 8);
          for (const auto& u : c.utterances) {
            CHECK(u.tokens.size() == u.pos.size());
            CHECK(synthetic_label(u.tokens) == u.label);
            ++counts[u.label];
            ++total;
            for (std::size_t k = 0; k < u.tokens.size(); ++k) {
              tags.insert(u.pos[k]);
              if (kPunctuation.count(u.tokens[k]))
                CHECK(u.pos[k] == "PUNCT");
              else
                words.insert(u.tokens[k]);
            }
          }
        }
        CHECK(words.size() <= 200);
        CHECK(tags.size() <= 6);
        CHECK(counts.size() == 4);
        for (const auto& [label, count] : counts) {
          const double share = static_cast<double>(count) / static_cast<double>(total);
          CHECK(std::abs(share - 0.25) <= 0.15 * 0.25);
        }
        CHECK(s.splits.train.size() == n * 8 / 10);
        CHECK(s.splits.validation.size() == n / 10);
        CHECK(s.splits.train.size() + s.splits.validation.size() + s.splits.test.size() == n);
        CHECK_NOTHROW(s.splits.validate(s.corpus));
      }
    }
    CHECK_THROWS_AS(generate_synthetic(9, 1), std::invalid_argument);
  }

  TEST_CASE("synthetic generation is deterministic") {
    const SyntheticCorpus a = generate_synthetic(40, 7), b = generate_synthetic(40, 7), c = generate_synthetic(40, 8);
    CHECK(serialize_corpus(a.corpus) == serialize_corpus(b.corpus));
    CHECK(a.splits == b.splits);
    CHECK(serialize_corpus(a.corpus) != serialize_corpus(c.corpus));
  }

  TEST_CASE("ablation harness runs both arms") {
    const SyntheticCorpus s = generate_synthetic(20, 2);
    TrainingJob job;
    job.corpus = s.corpus;
    job.splits = s.splits;
    job.labels = kSynth;
    job.model.d_w = 8;
    job.model.d_h = 8;
    job.model.lstm_hidden = 8;
    job.model.mlp_hidden = 8;
    job.model.heads = 2;
    job.train.max_epochs = 2;
    job.train.batch_size = 8;
    job.train.learning_rate = 1e-2;
    const auto out = scratch("ablation");
    std::filesystem::remove_all(out);
    job.out_dir = out;
    const AblationReport r = run_ablation(job);
    CHECK(r.full.variant == Variant::uiim);
    CHECK(r.baseline.variant == Variant::concat);
    CHECK(r.full.test.total > 0);
    CHECK(r.baseline.test.total == r.full.test.total);
    CHECK(std::filesystem::exists(out / "uiim-full" / "metrics.csv"));
    CHECK(std::filesystem::exists(out / "concat-baseline" / "metrics.csv"));
    std::ifstream in(out / "ablation.csv");
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "variant,split,accuracy");
    std::set<std::string> variants;
    while (std::getline(in, line)) variants.insert(line.substr(0, line.find(',')));
    CHECK(variants == std::set<std::string>{"uiim-full", "concat-baseline"});
    const AblationReport again = run_ablation(job);
    CHECK(again.full.test.accuracy == r.full.test.accuracy);
    CHECK(again.baseline.test.accuracy == r.baseline.test.accuracy);
  }
}
