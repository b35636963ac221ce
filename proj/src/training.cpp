#include "uiim/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>

namespace uiim {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("learning_rate must be a finite nonnegative number");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!(weights.alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  if (weights.beta < 0.0 || weights.gamma < 0.0) throw std::invalid_argument("beta and gamma must be nonnegative");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
}

// ---------------------------------------------------------------------------

namespace {

std::map<std::size_t, std::vector<const EncodedConversation*>> bucket_by_length(
    const std::vector<EncodedConversation>& split) {
  std::map<std::size_t, std::vector<const EncodedConversation*>> buckets;
  for (const auto& c : split) buckets[c.utterances.size()].push_back(&c);
  return buckets;
}

Batch make_batch(std::vector<const EncodedConversation*> convs) {
  Batch b;
  b.utterances_per_conversation = convs.front()->utterances.size();
  for (const auto* c : convs)
    for (const auto& u : c->utterances) b.max_tokens = std::max(b.max_tokens, u.length());
  b.conversations = std::move(convs);
  return b;
}

std::vector<Batch> chunk(std::map<std::size_t, std::vector<const EncodedConversation*>>& buckets,
                         std::size_t batch_size, Rng* rng) {
  std::vector<Batch> out;
  for (auto& [n, convs] : buckets) {
    if (rng) rng->shuffle(convs);
    for (std::size_t i = 0; i < convs.size(); i += batch_size) {
      const std::size_t end = std::min(convs.size(), i + batch_size);
      out.push_back(make_batch({convs.begin() + static_cast<long>(i), convs.begin() + static_cast<long>(end)}));
    }
  }
  if (rng) rng->shuffle(out);
  return out;
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<EncodedConversation>& split, std::size_t batch_size,
                                std::uint64_t seed) {
  if (split.empty()) throw std::invalid_argument("make_batches: empty split");
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be positive");
  auto buckets = bucket_by_length(split);
  Rng rng(seed);
  return chunk(buckets, batch_size, &rng);
}

std::vector<Batch> make_eval_batches(const std::vector<EncodedConversation>& split, std::size_t batch_size) {
  if (split.empty()) throw std::invalid_argument("make_eval_batches: empty split");
  auto buckets = bucket_by_length(split);
  return chunk(buckets, std::max<std::size_t>(batch_size, 1), nullptr);
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Parameter* p : params_) {
    first_.emplace_back(p->value.shape());
    second_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->value;
    const Tensor& g = params_[k]->grad;
    Tensor& m = first_[k];
    Tensor& v = second_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------

namespace {

struct LossAccumulator {
  LossReport sum;
  std::size_t weight = 0;

  void add(const BatchLoss& l, std::size_t conversations) {
    const double w = static_cast<double>(conversations);
    sum.loss_cls += w * l.cls.value()[0];
    sum.loss_u += l.u.valid() ? w * l.u.value()[0] : 0.0;
    sum.loss_i += l.i.valid() ? w * l.i.value()[0] : 0.0;
    sum.total += w * l.total.value()[0];
    weight += conversations;
  }

  LossReport mean() const {
    if (weight == 0) return {};
    const double w = static_cast<double>(weight);
    return {sum.loss_cls / w, sum.loss_u / w, sum.loss_i / w, sum.total / w};
  }
};

std::size_t count_correct(const Tensor& logits, const std::vector<const EncodedConversation*>& convs,
                          std::vector<std::vector<std::size_t>>* confusion) {
  std::size_t correct = 0, row = 0;
  for (const auto* c : convs)
    for (const auto& u : c->utterances) {
      const std::size_t p = predict(logits.row(row++));
      if (p == u.label) ++correct;
      if (confusion) ++(*confusion)[u.label][p];
    }
  return correct;
}

}  // namespace

EpochStats train_epoch(UiimModel& model, Adam& optimizer, const std::vector<Batch>& batches,
                       const TrainConfig& config, Rng& rng) {
  LossAccumulator acc;
  std::size_t correct = 0, total = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Batch& batch = batches[b];
    optimizer.zero_grad();
    Tape tape;
    const BoundModel bound = bind(tape, model);
    const ForwardOutput out =
        forward_batch(bound, batch.conversations, Mode::train, config.dropout, rng, config.pad_tokens_to);
    const BatchLoss loss = batch_loss(out, batch.conversations, config.weights);
    const double total_value = loss.total.value()[0];
    if (!std::isfinite(total_value)) {
      std::ostringstream os;
      os << "non-finite loss in batch " << b << " (n=" << batch.utterances_per_conversation
         << ", conversations=" << batch.conversations.size() << "): loss_cls=" << loss.cls.value()[0]
         << " loss_u=" << (loss.u.valid() ? loss.u.value()[0] : 0.0)
         << " loss_i=" << (loss.i.valid() ? loss.i.value()[0] : 0.0) << " total=" << total_value;
      throw TrainingError(os.str());
    }
    tape.backward(loss.total);
    model.embedding.freeze_pad();
    optimizer.step();
    acc.add(loss, batch.conversations.size());
    correct += count_correct(out.logits.value(), batch.conversations, nullptr);
    total += out.logits.rows();
  }
  EpochStats s;
  s.losses = acc.mean();
  s.utterances = total;
  s.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return s;
}

EvalResult evaluate(UiimModel& model, const std::vector<EncodedConversation>& split, const TrainConfig& config) {
  if (split.empty()) throw std::invalid_argument("evaluate: empty split");
  const std::size_t classes = model.config().num_classes;
  EvalResult r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  LossAccumulator acc;
  Rng unused(0);
  for (const Batch& batch : make_eval_batches(split, config.batch_size)) {
    Tape tape;
    const BoundModel bound = bind(tape, model);
    const ForwardOutput out = forward_batch(bound, batch.conversations, Mode::eval, 0.0, unused, config.pad_tokens_to);
    acc.add(batch_loss(out, batch.conversations, config.weights), batch.conversations.size());
    r.correct += count_correct(out.logits.value(), batch.conversations, &r.confusion);
    r.total += out.logits.rows();
  }
  r.losses = acc.mean();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

// ---------------------------------------------------------------------------

MetricsLog::MetricsLog(const std::filesystem::path& path, const std::string& config_hash)
    : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot write metrics log " + path.string());
  out_ << "# config_hash=" << config_hash << '\n' << kHeader << '\n';
  out_.flush();
}

void MetricsLog::write(std::size_t epoch, const std::string& split, const LossReport& l, double accuracy) {
  if (!out_.is_open()) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.10f,%.10f,%.10f,%.10f,%.6f\n", epoch, split.c_str(), l.loss_cls, l.loss_u,
                l.loss_i, l.total, accuracy);
  out_ << buf;
  out_.flush();
  ++rows_;
}

FitResult fit(UiimModel& model, const std::vector<EncodedConversation>& train,
              const std::vector<EncodedConversation>& validation, const TrainConfig& config, MetricsLog* log,
              const std::function<void(std::size_t)>& on_improved) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("fit: empty training split");
  if (validation.empty()) throw std::invalid_argument("fit: empty validation split");
  const std::vector<Parameter*> params = model.parameters();
  Adam optimizer(params, config.learning_rate);
  Rng dropout_rng(config.seed * 0x9E3779B97F4A7C15ULL + 17);
  std::vector<Tensor> best;
  FitResult r;
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = make_batches(train, config.batch_size, config.seed + epoch);
    EpochStats stats = train_epoch(model, optimizer, batches, config, dropout_rng);
    EvalResult val = evaluate(model, validation, config);
    if (log) {
      log->write(epoch, "train", stats.losses, stats.accuracy);
      log->write(epoch, "validation", val.losses, val.accuracy);
    }
    r.epochs_run = epoch;
    const bool improved = val.accuracy > r.best_validation_accuracy;
    r.train_history.push_back(std::move(stats));
    r.validation_history.push_back(val);
    if (improved) {
      r.best_validation_accuracy = val.accuracy;
      r.best_epoch = epoch;
      best.clear();
      for (const Parameter* p : params) best.push_back(p->value);
      stale = 0;
      if (on_improved) on_improved(epoch);
    } else if (++stale >= config.patience) {
      break;
    }
  }
  if (!best.empty())
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best[k];
  for (Parameter* p : params) p->zero_grad();
  return r;
}

// ---------------------------------------------------------------------------

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainingOutcome run_training(const TrainingJob& job) {
  job.train.validate();
  job.splits.validate(job.corpus);
  if (job.verbose)
    for (const auto& w : check_reference_split_counts(job.labels, job.splits)) std::cerr << "warning: " << w << '\n';

  const Corpus train_corpus = select(job.corpus, job.splits.train);
  const Corpus val_corpus = select(job.corpus, job.splits.validation);
  const Corpus test_corpus = select(job.corpus, job.splits.test);
  if (train_corpus.empty()) throw std::invalid_argument("training split is empty");
  if (val_corpus.empty()) throw std::invalid_argument("validation split is empty");

  TrainingOutcome outcome;
  Classifier& cls = outcome.classifier;
  cls.vocab = Vocab::build(train_corpus);
  cls.pos = PosInventory::build(train_corpus);
  cls.labels = job.labels;

  ModelConfig mc = job.model;
  mc.d_p = cls.pos.size();
  mc.d_s = cls.schema.dim();
  mc.num_classes = cls.labels.size();
  mc.dropout = job.train.dropout;
  Rng init_rng(job.train.seed);
  if (job.embeddings) {
    EmbeddingTable table = load_pretrained_embeddings(*job.embeddings, cls.vocab, init_rng);
    mc.d_w = table.dim();
    cls.model = std::make_unique<UiimModel>(mc, std::move(table), init_rng);
  } else {
    cls.model = std::make_unique<UiimModel>(mc, cls.vocab.size(), init_rng);
  }

  const auto train = encode_corpus(train_corpus, cls.vocab, cls.pos, cls.schema, cls.labels);
  const auto val = encode_corpus(val_corpus, cls.vocab, cls.pos, cls.schema, cls.labels);
  const auto test = encode_corpus(test_corpus, cls.vocab, cls.pos, cls.schema, cls.labels);
  if (!test.empty()) outcome.initial_test = evaluate(*cls.model, test, job.train);

  std::optional<MetricsLog> log;
  std::filesystem::path last_epoch_file;
  if (job.out_dir) {
    std::filesystem::create_directories(*job.out_dir);
    log.emplace(*job.out_dir / "metrics.csv", job.config_hash);
  }
  auto on_improved = [&](std::size_t epoch) {
    if (job.verbose) std::cerr << "epoch " << epoch << ": new best validation accuracy\n";
    if (!job.out_dir) return;
    char name[32];
    std::snprintf(name, sizeof name, "epoch-%04zu.ckpt", epoch);
    const auto path = *job.out_dir / name;
    save_checkpoint(path, cls);
    if (!last_epoch_file.empty()) std::filesystem::remove(last_epoch_file);
    last_epoch_file = path;
  };
  outcome.fit = fit(*cls.model, train, val, job.train, log ? &*log : nullptr, on_improved);

  outcome.train = evaluate(*cls.model, train, job.train);
  outcome.validation = evaluate(*cls.model, val, job.train);
  if (!test.empty()) outcome.test = evaluate(*cls.model, test, job.train);
  if (log) {
    if (!test.empty()) log->write(outcome.fit.best_epoch, "test", outcome.test.losses, outcome.test.accuracy);
    log->write(outcome.fit.best_epoch, "train_eval", outcome.train.losses, outcome.train.accuracy);
  }
  if (job.out_dir) save_checkpoint(*job.out_dir / "latest.ckpt", cls);
  return outcome;
}

}  // namespace uiim
