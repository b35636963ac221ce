#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "uiim/checkpoint.hpp"
#include "uiim/corpus.hpp"
#include "uiim/features.hpp"
#include "uiim/losses.hpp"
#include "uiim/model.hpp"

namespace uiim {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double dropout = 0.3;
  LossWeights weights;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  /// Pads every batch's token sequences to at least this length. Only used to
  /// check that padding is inert.
  std::size_t pad_tokens_to = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Conversations with identical utterance counts.
struct Batch {
  std::vector<const EncodedConversation*> conversations;
  std::size_t utterances_per_conversation = 0;
  std::size_t max_tokens = 0;
};

/// Buckets conversations by utterance count, shuffles each bucket with `seed`,
/// chunks buckets into batches of at most `batch_size`, then shuffles batch
/// order. Throws std::invalid_argument on an empty split.
std::vector<Batch> make_batches(const std::vector<EncodedConversation>& split, std::size_t batch_size,
                                std::uint64_t seed);
/// Same bucketing without any shuffling; used for evaluation.
std::vector<Batch> make_eval_batches(const std::vector<EncodedConversation>& split, std::size_t batch_size);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  std::size_t steps() const { return steps_; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t steps_ = 0;
};

struct EpochStats {
  LossReport losses;
  double accuracy = 0.0;
  std::size_t utterances = 0;
};

/// One pass of forward (train mode), weighted loss, backward and Adam step per
/// batch. Losses are averaged over conversations. Throws TrainingError naming
/// the batch and component losses if the loss becomes non-finite.
EpochStats train_epoch(UiimModel& model, Adam& optimizer, const std::vector<Batch>& batches,
                       const TrainConfig& config, Rng& rng);

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  /// confusion[gold][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  LossReport losses;
};

/// Eval-mode pass over a split. Throws std::invalid_argument on an empty split.
EvalResult evaluate(UiimModel& model, const std::vector<EncodedConversation>& split, const TrainConfig& config);

/// Appends `epoch,split,loss_cls,loss_u,loss_i,total,accuracy` rows. A leading
/// comment line records the hash of the resolved run configuration.
class MetricsLog {
 public:
  static constexpr const char* kHeader = "epoch,split,loss_cls,loss_u,loss_i,total,accuracy";

  MetricsLog() = default;
  MetricsLog(const std::filesystem::path& path, const std::string& config_hash);

  void write(std::size_t epoch, const std::string& split, const LossReport& losses, double accuracy);
  std::size_t rows() const { return rows_; }

 private:
  std::ofstream out_;
  std::size_t rows_ = 0;
};

struct FitResult {
  std::size_t best_epoch = 0;
  double best_validation_accuracy = -1.0;
  std::size_t epochs_run = 0;
  std::vector<EpochStats> train_history;
  std::vector<EvalResult> validation_history;
};

/// Trains up to max_epochs, keeping the parameters with the best validation
/// accuracy (restored into `model` on return) and stopping after `patience`
/// epochs without improvement. `on_improved(epoch)` fires after each new best.
FitResult fit(UiimModel& model, const std::vector<EncodedConversation>& train,
              const std::vector<EncodedConversation>& validation, const TrainConfig& config, MetricsLog* log,
              const std::function<void(std::size_t)>& on_improved = {});

// ---------------------------------------------------------------------------
// End-to-end job shared by the CLI and the ablation harness.

struct TrainingJob {
  Corpus corpus;
  SplitManifest splits;
  LabelSet labels;
  ModelConfig model;  // d_p and num_classes are filled in from the data
  TrainConfig train;
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> out_dir;  // checkpoints and metrics.csv
  std::string config_hash;
  bool verbose = false;
};

struct TrainingOutcome {
  FitResult fit;
  EvalResult initial_test;  // untrained model on the test split
  EvalResult train;         // best parameters, eval mode
  EvalResult validation;
  EvalResult test;
  Classifier classifier;
};

TrainingOutcome run_training(const TrainingJob& job);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace uiim
