#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "uiim/cli.hpp"
#include "uiim/corpus.hpp"

using namespace uiim;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "uiim");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "uiim-cli-tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const std::vector<std::string> kSmallModel{"--d-h", "8", "--heads", "2", "--batch-size", "8", "--lr", "0.01",
                                           "--epochs", "2", "--quiet"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    Result r = run_cli({});
    CHECK(r.code == cli::kValidationError);
    r = run_cli({"frobnicate"});
    CHECK(r.code == cli::kValidationError);
    CHECK(r.err.find("synth") != std::string::npos);
    CHECK(r.err.find("featurize") != std::string::npos);
    CHECK(run_cli({"train"}).code == cli::kValidationError);  // --corpus required
    CHECK(run_cli({"train", "--corpus", "x", "--lr", "abc"}).code == cli::kValidationError);
    CHECK(run_cli({"synth", "--out", scratch("tiny").string(), "--n", "3"}).code == cli::kValidationError);
  }

  TEST_CASE("help lists flags with their defaults") {
    const Result top = run_cli({"--help"});
    CHECK(top.code == cli::kOk);
    for (const char* sub : {"synth", "train", "eval", "ablate", "gradcheck", "featurize"})
      CHECK(top.out.find(sub) != std::string::npos);
    for (const char* sub : {"train", "ablate"}) {
      const Result r = run_cli({sub, "--help"});
      INFO(r.out);
      CHECK(r.code == cli::kOk);
      for (const char* flag : {"--config", "--seed", "--corpus", "--labels", "--splits", "--embeddings", "--out",
                               "--batch-size", "--lr", "--dropout", "--alpha", "--beta", "--gamma", "--d-h",
                               "--heads", "--epochs", "--patience"})
        CHECK(r.out.find(flag) != std::string::npos);
      for (const char* def : {"[64]", "[0.0001]", "[0.3]", "[1]", "[0.7]", "[224]", "[4]", "[200]", "[10]"})
        CHECK(r.out.find(def) != std::string::npos);
    }
  }

  TEST_CASE("synth, train, eval and featurize end to end") {
    const auto dir = scratch("e2e");
    std::filesystem::remove_all(dir);
    REQUIRE(run_cli({"synth", "--n", "20", "--seed", "7", "--out", (dir / "data").string()}).code == cli::kOk);
    CHECK(std::filesystem::exists(dir / "data" / "corpus.jsonl"));
    CHECK(std::filesystem::exists(dir / "data" / "splits.json"));
    CHECK(LabelSet::load(dir / "data" / "synthetic-4.txt").labels() == LabelSet::builtin("synthetic-4").labels());

    auto train_args = [&](const std::string& out) {
      return with({"train", "--corpus", (dir / "data").string(), "--out", (dir / out).string()}, kSmallModel);
    };
    Result r = run_cli(train_args("run"));
    INFO(r.err);
    REQUIRE(r.code == cli::kOk);
    CHECK(r.out.find("test accuracy") != std::string::npos);
    const std::string metrics = slurp(dir / "run" / "metrics.csv");
    CHECK(metrics.rfind("# config_hash=", 0) == 0);

    // Same arguments, same bytes; a different hyperparameter changes the hash line.
    REQUIRE(run_cli(train_args("run2")).code == cli::kOk);
    CHECK(slurp(dir / "run2" / "metrics.csv") == metrics);
    REQUIRE(run_cli(with(train_args("run3"), {"--beta", "0.5"})).code == cli::kOk);
    const std::string other = slurp(dir / "run3" / "metrics.csv");
    CHECK(other.substr(0, other.find('\n')) != metrics.substr(0, metrics.find('\n')));

    r = run_cli({"eval", "--corpus", (dir / "data").string(), "--out", (dir / "run").string()});
    CHECK(r.code == cli::kOk);
    CHECK(r.out.find("test accuracy") != std::string::npos);
    for (const char* label : {"question", "exclaim", "ack", "state"}) CHECK(r.out.find(label) != std::string::npos);
    r = run_cli({"eval", "--corpus", (dir / "data").string(), "--out", (dir / "run").string(), "--split", "nope"});
    CHECK(r.code == cli::kValidationError);
    r = run_cli({"eval", "--corpus", (dir / "data").string(), "--checkpoint", (dir / "none.ckpt").string()});
    CHECK(r.code != cli::kOk);

    const auto feats = dir / "features.jsonl";
    r = run_cli({"featurize", "--corpus", (dir / "data").string(), "--out", feats.string(), "--checkpoint",
                 (dir / "run" / "latest.ckpt").string()});
    REQUIRE(r.code == cli::kOk);
    std::ifstream in(feats);
    std::string line;
    std::getline(in, line);
    CHECK(nlohmann::json::parse(line).at("format") == "uiim-features 1");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("stats").size() == 12);
      CHECK(j.at("token_ids").size() == j.at("pos_ids").size());
      CHECK(j.at("words").size() == j.at("token_ids").size());
      ++rows;
    }
    std::size_t utterances = 0;
    for (const auto& c : load_corpus(dir / "data" / "corpus.jsonl", LabelSet::builtin("synthetic-4")))
      utterances += c.utterances.size();
    CHECK(rows == utterances);
  }

  TEST_CASE("config files supply values and flags win") {
    const auto dir = scratch("config");
    std::filesystem::remove_all(dir);
    REQUIRE(run_cli({"synth", "--n", "20", "--seed", "3", "--out", (dir / "data").string()}).code == cli::kOk);
    std::ofstream(dir / "run.cfg") << "d-h = 8\nheads = 2\nbatch-size = 8\nlr = 0.01\nepochs = 1\nquiet = true\n";
    Result r = run_cli({"train", "--config", (dir / "run.cfg").string(), "--corpus", (dir / "data").string(), "--out",
                        (dir / "a").string()});
    INFO(r.err);
    REQUIRE(r.code == cli::kOk);
    const std::string metrics = slurp(dir / "a" / "metrics.csv");
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 6);  // hash, header, 2 epoch rows, test, train_eval
    r = run_cli({"train", "--config", (dir / "run.cfg").string(), "--corpus", (dir / "data").string(), "--out",
                 (dir / "b").string(), "--heads", "3"});
    CHECK(r.code == cli::kValidationError);
    CHECK(r.err.find("heads") != std::string::npos);
  }

  TEST_CASE("invalid inputs map to exit 1") {
    const auto dir = scratch("invalid");
    std::filesystem::remove_all(dir);
    REQUIRE(run_cli({"synth", "--n", "10", "--out", (dir / "data").string()}).code == cli::kOk);
    Result r = run_cli(with({"train", "--corpus", (dir / "missing.jsonl").string(), "--out", (dir / "x").string()},
                            kSmallModel));
    CHECK(r.code == cli::kValidationError);
    r = run_cli(with({"train", "--corpus", (dir / "data").string(), "--labels", "mrda-5", "--out",
                      (dir / "x").string()},
                     kSmallModel));
    CHECK(r.code == cli::kValidationError);
    CHECK(r.err.find("line 1") != std::string::npos);
    r = run_cli(with({"train", "--corpus", (dir / "data").string(), "--out", (dir / "x").string()},
                     {"--dropout", "1.5"}));
    CHECK(r.code == cli::kValidationError);
  }

  TEST_CASE("gradcheck subcommand") {
    const Result r = run_cli({"gradcheck", "--seed", "1"});
    CHECK(r.code == cli::kOk);
    CHECK(r.out.find("uiim_model") != std::string::npos);
    CHECK(r.out.find("max rel err") != std::string::npos);
  }
}
