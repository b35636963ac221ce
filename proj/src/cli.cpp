#include "uiim/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "uiim/ablation.hpp"
#include "uiim/checkpoint.hpp"
#include "uiim/corpus.hpp"
#include "uiim/gradient_suite.hpp"
#include "uiim/training.hpp"

namespace uiim::cli {

namespace fs = std::filesystem;

namespace {

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flags shared by every subcommand that reads a corpus.
struct RunOptions {
  std::uint64_t seed = 1;
  std::string corpus;
  std::string labels = "synthetic-4";
  std::string splits;
  std::string embeddings;
  std::string out;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  double dropout = 0.3;
  double alpha = 1.0;
  double beta = 0.7;
  double gamma = 0.7;
  std::size_t d_h = 224;
  std::size_t heads = 4;
  std::size_t epochs = 200;
  std::size_t patience = 10;
  bool quiet = false;
};

void add_data_options(CLI::App* app, RunOptions& o) {
  app->add_option("--seed", o.seed, "Random seed");
  app->add_option("--corpus", o.corpus, "Canonical JSONL corpus, or a directory holding corpus.jsonl (required)");
  app->add_option("--labels", o.labels, "Label set: builtin name (synthetic-4, mrda-5, swda-42) or label file");
  app->add_option("--splits", o.splits, "Split manifest JSON (default: splits.json next to the corpus)");
}

void add_training_options(CLI::App* app, RunOptions& o) {
  app->add_option("--embeddings", o.embeddings, "Pretrained word vectors, one `word v1 .. vd` per line");
  app->add_option("--batch-size", o.batch_size, "Conversations per batch")->check(CLI::PositiveNumber);
  app->add_option("--lr", o.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  app->add_option("--dropout", o.dropout, "Dropout probability")->check(CLI::Range(0.0, 0.999999));
  app->add_option("--alpha", o.alpha, "Weight of the classification loss")->check(CLI::PositiveNumber);
  app->add_option("--beta", o.beta, "Weight of the universality loss")->check(CLI::NonNegativeNumber);
  app->add_option("--gamma", o.gamma, "Weight of the individuality loss")->check(CLI::NonNegativeNumber);
  app->add_option("--d-h", o.d_h, "Hidden width")->check(CLI::PositiveNumber);
  app->add_option("--heads", o.heads, "Attention heads (must divide d-h)")->check(CLI::PositiveNumber);
  app->add_option("--epochs", o.epochs, "Maximum training epochs");
  app->add_option("--patience", o.patience, "Epochs without validation improvement before stopping")
      ->check(CLI::PositiveNumber);
  app->add_flag("--quiet", o.quiet, "Suppress progress output");
}

// `--config <file>`: one `key = value` per line, keys named after the long
// flags; blank lines and `#` comments are skipped. Applied after parsing so
// that flags given on the command line win.
void add_config_option(CLI::App* app, std::string& path) {
  app->add_option("--config", path, "Config file of `key = value` lines; flags win");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void apply_config_file(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw ValidationError("config file not found: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + "expected `key = value`");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key.erase(0, 2);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    CLI::Option* opt = key == "config" ? nullptr : app->get_option_no_throw("--" + key);
    if (!opt) throw ValidationError(where + "unknown key '" + key + "' for " + app->get_name());
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ValidationError(where + key + ": " + e.what());
    }
  }
}

void require_option(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required");
}

struct Inputs {
  Corpus corpus;
  SplitManifest splits;
  LabelSet labels;
};

fs::path corpus_file(const std::string& corpus) {
  const fs::path p(corpus);
  return fs::is_directory(p) ? p / "corpus.jsonl" : p;
}

fs::path splits_file(const RunOptions& o) {
  if (!o.splits.empty()) return o.splits;
  return corpus_file(o.corpus).parent_path() / "splits.json";
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw ValidationError(std::string(what) + " not found: " + p.string());
}

Inputs load_inputs(const RunOptions& o, std::optional<LabelSet> labels = std::nullopt) {
  Inputs in;
  in.labels = labels ? *labels : LabelSet::resolve(o.labels);
  const fs::path corpus = corpus_file(o.corpus);
  require_file(corpus, "corpus");
  in.corpus = load_corpus(corpus, in.labels);
  const fs::path splits = splits_file(o);
  require_file(splits, "split manifest");
  in.splits = SplitManifest::load(splits);
  in.splits.validate(in.corpus);
  return in;
}

TrainingJob make_job(const RunOptions& o, const std::string& resolved_config) {
  TrainingJob job;
  Inputs in = load_inputs(o);
  job.corpus = std::move(in.corpus);
  job.splits = std::move(in.splits);
  job.labels = std::move(in.labels);
  job.model.d_h = o.d_h;
  job.model.lstm_hidden = o.d_h;
  job.model.mlp_hidden = o.d_h;
  job.model.heads = o.heads;
  job.model.dropout = o.dropout;
  if (o.d_h % o.heads != 0)
    throw ValidationError("heads (" + std::to_string(o.heads) + ") must divide d-h (" + std::to_string(o.d_h) + ")");
  job.train.batch_size = o.batch_size;
  job.train.learning_rate = o.lr;
  job.train.dropout = o.dropout;
  job.train.weights = {o.alpha, o.beta, o.gamma};
  job.train.max_epochs = o.epochs;
  job.train.patience = o.patience;
  job.train.seed = o.seed;
  job.train.validate();
  if (!o.embeddings.empty()) {
    require_file(o.embeddings, "embeddings file");
    job.embeddings = fs::path(o.embeddings);
  }
  job.out_dir = fs::path(o.out);
  job.config_hash = fnv1a_hex(resolved_config);
  job.verbose = !o.quiet;
  return job;
}

/// Every option value of the subcommand except where output goes.
std::string resolved_config(const CLI::App* app) {
  std::istringstream in(app->config_to_str(true, false));
  std::string out, line;
  while (std::getline(in, line)) {
    const std::string key = line.substr(0, line.find('='));
    if (key != "out" && key != "quiet" && key != "config") out += line + '\n';
  }
  return out;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_accuracy(std::ostream& os, const std::string& split, const EvalResult& r) {
  os << split << " accuracy " << percent(r.accuracy) << " (" << r.correct << "/" << r.total << ")\n";
}

void print_class_table(std::ostream& os, const EvalResult& r, const LabelSet& labels) {
  os << std::left << std::setw(12) << "label" << std::right << std::setw(9) << "support" << std::setw(11)
     << "precision" << std::setw(9) << "recall" << std::setw(9) << "f1" << '\n';
  const std::size_t k = labels.size();
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < k; ++j) {
      support += r.confusion[c][j];
      predicted += r.confusion[j][c];
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    const double p = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double rc = support ? tp / static_cast<double>(support) : 0.0;
    const double f1 = p + rc > 0 ? 2 * p * rc / (p + rc) : 0.0;
    os << std::left << std::setw(12) << labels.label(c) << std::right << std::setw(9) << support << std::setw(11)
       << percent(p) << std::setw(9) << percent(rc) << std::setw(9) << percent(f1) << '\n';
  }
}

// ---------------------------------------------------------------------------

int cmd_synth(std::size_t n, std::uint64_t seed, const std::string& out) {
  const fs::path dir(out);
  fs::create_directories(dir);
  const SyntheticCorpus s = generate_synthetic(n, seed);
  save_corpus(dir / "corpus.jsonl", s.corpus);
  s.splits.save(dir / "splits.json");
  LabelSet::builtin("synthetic-4").save(dir / "synthetic-4.txt");
  std::size_t utterances = 0;
  for (const auto& c : s.corpus) utterances += c.utterances.size();
  std::cout << "wrote " << s.corpus.size() << " conversations (" << utterances << " utterances) to " << dir.string()
            << '\n';
  return kOk;
}

int cmd_train(const RunOptions& o, const CLI::App* app) {
  const TrainingJob job = make_job(o, resolved_config(app));
  const TrainingOutcome r = run_training(job);
  std::cout << "best epoch " << r.fit.best_epoch << " of " << r.fit.epochs_run << '\n';
  print_accuracy(std::cout, "train", r.train);
  print_accuracy(std::cout, "validation", r.validation);
  if (r.test.total) print_accuracy(std::cout, "test", r.test);
  std::cout << "checkpoint " << (*job.out_dir / "latest.ckpt").string() << '\n';
  return kOk;
}

int cmd_eval(const RunOptions& o, const std::string& checkpoint, const std::string& split) {
  const fs::path ckpt = checkpoint.empty() ? fs::path(o.out) / "latest.ckpt" : fs::path(checkpoint);
  require_file(ckpt, "checkpoint");
  Classifier cls = load_checkpoint(ckpt);
  const Inputs in = load_inputs(o, cls.labels);
  const std::vector<std::string>* ids = nullptr;
  if (split == "train") ids = &in.splits.train;
  else if (split == "validation") ids = &in.splits.validation;
  else if (split == "test") ids = &in.splits.test;
  else throw ValidationError("unknown split '" + split + "' (train, validation, test)");
  const Corpus selected = select(in.corpus, *ids);
  if (selected.empty()) throw ValidationError("split '" + split + "' is empty");
  const auto encoded = encode_corpus(selected, cls.vocab, cls.pos, cls.schema, cls.labels);
  TrainConfig tc;
  tc.batch_size = o.batch_size;
  const EvalResult r = evaluate(*cls.model, encoded, tc);
  print_accuracy(std::cout, split, r);
  print_class_table(std::cout, r, cls.labels);
  return kOk;
}

int cmd_ablate(const RunOptions& o, const CLI::App* app) {
  const TrainingJob job = make_job(o, resolved_config(app));
  const AblationReport r = run_ablation(job);
  std::cout << "variant,split,accuracy\n";
  for (const AblationArm* arm : {&r.full, &r.baseline}) {
    std::cout << to_string(arm->variant) << ",validation," << percent(arm->validation.accuracy) << '\n';
    if (arm->test.total) std::cout << to_string(arm->variant) << ",test," << percent(arm->test.accuracy) << '\n';
  }
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t seeds) {
  double worst = 0.0;
  bool pass = true;
  for (std::size_t k = 0; k < seeds; ++k) {
    for (const GradientCase& c : run_gradient_suite(seed + k)) {
      std::cout << "seed " << seed + k << ' ' << std::left << std::setw(18) << c.name << std::right
                << " max rel err " << std::scientific << std::setprecision(3) << c.report.max_rel_err
                << std::defaultfloat << " over " << c.report.checked << " entries";
      if (!c.report.pass) std::cout << " worst " << c.report.worst << "  FAIL";
      std::cout << '\n';
      worst = std::max(worst, c.report.max_rel_err);
      pass = pass && c.report.pass;
    }
  }
  std::cout << "max rel err " << std::scientific << std::setprecision(3) << worst << std::defaultfloat << '\n';
  return pass ? kOk : kRuntimeError;
}

// Feature dump, JSON lines. The first line describes the dump:
//   {"format":"uiim-features 1","d_w":..,"d_p":..,"d_s":..,"vocab":N,"pos_tags":[..]}
// then one object per utterance:
//   {"conversation","index","speaker","label","tokens","token_ids","pos_ids","stats"[,"words"]}
// "words" (length x d_w) is present when a checkpoint supplies the embedding table.
int cmd_featurize(const RunOptions& o, const std::string& checkpoint) {
  std::optional<Classifier> cls;
  LabelSet labels = LabelSet::resolve(o.labels);
  if (!checkpoint.empty()) {
    require_file(checkpoint, "checkpoint");
    cls = load_checkpoint(checkpoint);
    labels = cls->labels;
  }
  const fs::path corpus_path = corpus_file(o.corpus);
  require_file(corpus_path, "corpus");
  const Corpus corpus = load_corpus(corpus_path, labels);
  const Vocab vocab = cls ? cls->vocab : Vocab::build(corpus);
  const PosInventory pos = cls ? cls->pos : PosInventory::build(corpus);
  const StatisticsSchema schema;

  std::ofstream file;
  if (!o.out.empty() && o.out != "-") {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    file.open(o.out, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write " + o.out);
  }
  std::ostream& out = file.is_open() ? file : std::cout;

  nlohmann::ordered_json head;
  head["format"] = "uiim-features 1";
  head["d_w"] = cls ? cls->model->config().d_w : 0;
  head["d_p"] = pos.size();
  head["d_s"] = schema.dim();
  head["vocab"] = vocab.size();
  head["pos_tags"] = pos.tags();
  out << head.dump() << '\n';
  for (const auto& conv : corpus) {
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
      const Utterance& u = conv.utterances[i];
      const EncodedUtterance e = encode_utterance(u, vocab, pos, schema, labels);
      nlohmann::ordered_json row;
      row["conversation"] = conv.id;
      row["index"] = i;
      row["speaker"] = u.speaker;
      row["label"] = u.label;
      row["tokens"] = u.tokens;
      row["token_ids"] = e.token_ids;
      row["pos_ids"] = e.pos_ids;
      row["stats"] = e.stats;
      if (cls) {
        const Tensor words = embed_words(cls->model->embedding, e.token_ids);
        nlohmann::json matrix = nlohmann::json::array();
        for (std::size_t r = 0; r < words.rows(); ++r) {
          const auto rv = words.row(r);
          matrix.push_back(std::vector<double>(rv.begin(), rv.end()));
        }
        row["words"] = std::move(matrix);
      }
      out << row.dump() << '\n';
    }
  }
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"UIIM dialog act classifier", "uiim"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough(false);

  std::map<const CLI::App*, std::string> config_paths;
  std::size_t synth_n = 200;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus, split manifest and label file");
  add_config_option(synth, config_paths[synth]);
  synth->add_option("--n", synth_n, "Number of conversations (at least 10)");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--out", synth_out, "Output directory (required)");

  RunOptions train_opts;
  train_opts.out = "runs/train";
  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and metrics.csv under --out");
  add_config_option(train, config_paths[train]);
  add_data_options(train, train_opts);
  add_training_options(train, train_opts);
  train->add_option("--out", train_opts.out, "Output directory");

  RunOptions eval_opts;
  eval_opts.out = "runs/train";
  std::string eval_checkpoint, eval_split = "test";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint; prints accuracy and a per-class table");
  add_config_option(eval, config_paths[eval]);
  add_data_options(eval, eval_opts);
  eval->add_option("--out", eval_opts.out, "Training output directory holding latest.ckpt");
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file (default: <out>/latest.ckpt)");
  eval->add_option("--split", eval_split, "Split to evaluate: train, validation or test");
  eval->add_option("--batch-size", eval_opts.batch_size, "Conversations per batch")->check(CLI::PositiveNumber);

  RunOptions ablate_opts;
  ablate_opts.out = "runs/ablate";
  auto* ablate = app.add_subcommand("ablate", "Train uiim-full and concat-baseline and compare");
  add_config_option(ablate, config_paths[ablate]);
  add_data_options(ablate, ablate_opts);
  add_training_options(ablate, ablate_opts);
  ablate->add_option("--out", ablate_opts.out, "Output directory");

  std::uint64_t gc_seed = 1;
  std::size_t gc_seeds = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every layer and the toy model");
  add_config_option(gradcheck, config_paths[gradcheck]);
  gradcheck->add_option("--seed", gc_seed, "First seed");
  gradcheck->add_option("--seeds", gc_seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);

  RunOptions feat_opts;
  std::string feat_checkpoint;
  auto* featurize = app.add_subcommand("featurize", "Dump per-utterance features as JSON lines");
  add_config_option(featurize, config_paths[featurize]);
  featurize->add_option("--corpus", feat_opts.corpus,
                        "Canonical JSONL corpus, or a directory holding corpus.jsonl (required)");
  featurize->add_option("--labels", feat_opts.labels, "Label set: builtin name or label file");
  featurize->add_option("--checkpoint", feat_checkpoint, "Use this checkpoint's vocabulary and embeddings");
  featurize->add_option("--out", feat_opts.out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (app.get_subcommands().empty()) std::cerr << app.help();
    return kValidationError;
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) apply_config_file(sub, config_paths[sub]);
    if (*synth) require_option(synth_out, "--out");
    for (const auto& [sub, opts] : {std::pair{train, &train_opts}, {eval, &eval_opts}, {ablate, &ablate_opts},
                                    {featurize, &feat_opts}})
      if (*sub) require_option(opts->corpus, "--corpus");
    if (*synth) return cmd_synth(synth_n, synth_seed, synth_out);
    if (*train) return cmd_train(train_opts, train);
    if (*eval) return cmd_eval(eval_opts, eval_checkpoint, eval_split);
    if (*ablate) return cmd_ablate(ablate_opts, ablate);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_seeds);
    if (*featurize) return cmd_featurize(feat_opts, feat_checkpoint);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const CorpusError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  std::cerr << app.help();
  return kValidationError;
}

}  // namespace uiim::cli
