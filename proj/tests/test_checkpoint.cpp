#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "uiim/checkpoint.hpp"

using namespace uiim;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "uiim-checkpoint-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Classifier toy_classifier(std::uint64_t seed, Variant variant = Variant::uiim) {
  const SyntheticCorpus s = generate_synthetic(10, seed);
  Classifier c;
  c.vocab = Vocab::build(s.corpus);
  c.pos = PosInventory::build(s.corpus);
  c.labels = LabelSet::builtin("synthetic-4");
  ModelConfig mc = test::toy_config(variant);
  mc.d_p = c.pos.size();
  mc.num_classes = 4;
  mc.dropout = 0.25;
  Rng rng(seed);
  c.model = std::make_unique<UiimModel>(mc, c.vocab.size(), rng);
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("config line round trip") {
    ModelConfig c = test::toy_config(Variant::concat);
    c.dropout = 0.1 + 0.2;  // not exactly representable in short decimal
    CHECK(parse_config_line(config_line(c)) == c);
    CHECK_THROWS_AS(parse_config_line("config d_w=4"), CheckpointError);
    CHECK_THROWS_AS(parse_config_line("config garbage"), CheckpointError);
  }

  TEST_CASE("save and load reproduce the classifier exactly") {
    for (Variant v : {Variant::uiim, Variant::concat}) {
      Classifier c = toy_classifier(3, v);
      const auto path = scratch("round.ckpt");
      save_checkpoint(path, c);
      CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
      const Classifier back = load_checkpoint(path);
      CHECK(back.model->config() == c.model->config());
      CHECK(back.vocab.tokens() == c.vocab.tokens());
      CHECK(back.pos.tags() == c.pos.tags());
      CHECK(back.labels.labels() == c.labels.labels());
      CHECK(back.labels.name() == "synthetic-4");
      const auto a = c.model->parameters();
      const auto b = std::as_const(*back.model).parameters();
      REQUIRE(a.size() == b.size());
      for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k]->name == b[k]->name);
        CHECK(max_abs_diff(a[k]->value, b[k]->value) == 0.0);
      }
      save_checkpoint(scratch("again.ckpt"), back);
      CHECK(slurp(path) == slurp(scratch("again.ckpt")));
    }
  }

  TEST_CASE("restore copies into a matching model and rejects others") {
    Classifier c = toy_classifier(4);
    const auto path = scratch("restore.ckpt");
    save_checkpoint(path, c);
    Rng rng(99);
    UiimModel same(c.model->config(), c.vocab.size(), rng);
    restore_parameters(path, same);
    CHECK(max_abs_diff(same.fusion.weight.value, c.model->fusion.weight.value) == 0.0);
    ModelConfig other = c.model->config();
    other.d_h = 16;
    other.lstm_hidden = 16;
    UiimModel wider(other, c.vocab.size(), rng);
    CHECK_THROWS_WITH_AS(restore_parameters(path, wider), doctest::Contains("does not match"), CheckpointError);
  }

  TEST_CASE("corrupt files are rejected") {
    Classifier c = toy_classifier(5);
    const auto path = scratch("good.ckpt");
    save_checkpoint(path, c);
    const std::string good = slurp(path);

    auto rejects = [&](const std::string& text, const std::string& needle) {
      const auto bad = scratch("bad.ckpt");
      std::ofstream(bad, std::ios::binary) << text;
      try {
        load_checkpoint(bad);
        return false;
      } catch (const CheckpointError& e) {
        INFO(e.what());
        return std::string(e.what()).find(needle) != std::string::npos;
      }
    };
    CHECK(rejects("hello\n", "not a checkpoint"));
    CHECK(rejects("uiim-checkpoint 7\n", "version"));
    CHECK(rejects(good.substr(0, good.size() / 2), "truncated"));
    std::string renamed = good;
    renamed.replace(renamed.find("\nfusion.weight "), 15, "\nfusion.wexght ");
    CHECK(rejects(renamed, "unexpected tensor"));
    std::string reshaped = good;
    const std::string header = "\nfusion.weight 2 48 8\n";
    REQUIRE(reshaped.find(header) != std::string::npos);
    reshaped.replace(reshaped.find(header), header.size(), "\nfusion.weight 2 8 48\n");
    CHECK(rejects(reshaped, "shape"));
    CHECK(rejects(good.substr(0, good.rfind("end")), "end"));
    CHECK_THROWS_AS(load_checkpoint(scratch("missing.ckpt")), CheckpointError);
  }
}
