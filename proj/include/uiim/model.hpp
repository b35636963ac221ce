#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uiim/features.hpp"
#include "uiim/layers.hpp"
#include "uiim/losses.hpp"

namespace uiim {

/// uiim: shared/private encoders + attention fusion. concat: the three cue
/// vectors are concatenated and projected, with no auxiliary vectors.
enum class Variant { uiim, concat };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  std::size_t d_w = 50;
  std::size_t d_p = 0;
  std::size_t d_s = 12;
  std::size_t d_h = 224;
  std::size_t lstm_hidden = 224;
  std::size_t heads = 4;
  std::size_t num_classes = 0;
  double dropout = 0.3;
  std::size_t mlp_hidden = 224;
  Variant variant = Variant::uiim;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// All learnable tensors of the classifier.
class UiimModel {
 public:
  UiimModel(const ModelConfig& config, std::size_t vocab_size, Rng& rng);
  UiimModel(const ModelConfig& config, EmbeddingTable embedding, Rng& rng);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(const std::string& name);

  EmbeddingTable embedding;
  std::array<Lstm, kFeatureCount> cue_lstm;        // per-cue sequence encoder
  std::array<Affine, kFeatureCount> cue_project;   // lstm_hidden -> d_h
  Affine shared;                                   // universality encoder, one for all cues
  std::array<Affine, kFeatureCount> individual;    // individuality encoders
  MultiHeadAttention attention;
  Affine fusion;                                   // 6 d_h -> d_h (uiim) or 3 d_h -> d_h (concat)
  Lstm context_forward;
  Lstm context_backward;
  Mlp classifier;

 private:
  void build(Rng& rng);
  ModelConfig config_;
};

/// Parameters bound to one tape. Each parameter appears once, so every use in
/// the pass shares a single node and gradients add up across uses.
struct BoundModel {
  Var embedding;
  std::array<LstmVars, kFeatureCount> cue_lstm;
  std::array<AffineVars, kFeatureCount> cue_project;
  AffineVars shared;
  std::array<AffineVars, kFeatureCount> individual;
  AttentionVars attention;
  AffineVars fusion;
  LstmVars context_forward;
  LstmVars context_backward;
  AffineVars mlp_hidden;
  AffineVars mlp_out;
  Variant variant = Variant::uiim;
};

BoundModel bind(Tape& tape, UiimModel& model);

/// Cue encoding u_f = tanh(W_f^0 lstm_final(U_f) + b_f^0) for a batch of
/// utterances; returns batch x d_h. The statistics cue runs as a one-step
/// sequence. Token sequences are padded to max(pad_to, longest utterance).
Var encode_feature(const BoundModel& m, Feature f, std::span<const EncodedUtterance* const> utterances,
                   std::size_t pad_to = 0);
Var encode_feature(const BoundModel& m, Feature f, const EncodedUtterance& utterance);

/// h^u = tanh(shared(u)), h^i = tanh(private(u)).
HiddenPair project_pair(const AffineVars& shared, const AffineVars& individual, Var u);

struct FusionResult {
  Var matrix;     // (6 batch) x d_h, rows per utterance [w^u, w^i, p^u, p^i, s^u, s^i]
  Var attended;   // same shape, attention output
  Var utterance;  // batch x d_h
};

/// Stacks the six hidden vectors of each utterance, applies self-attention
/// within each utterance, flattens row-major and projects to d_h with tanh.
FusionResult fuse(std::span<const HiddenPair, kFeatureCount> pairs, const AttentionVars& attention,
                  const AffineVars& projection);

struct ForwardOutput {
  Var logits;  // one row per utterance, conversation-major
  std::array<HiddenPair, kFeatureCount> pairs;  // invalid Vars for the concat variant
  std::array<Var, kFeatureCount> cues;
  Var utterance_vectors;
};

/// Full pass over `conversations`, which must all have the same number of
/// utterances. Token sequences are padded to the longest utterance in the
/// batch (or to `pad_tokens_to` if longer); padding never reaches any output.
ForwardOutput forward_batch(const BoundModel& m, std::span<const EncodedConversation* const> conversations,
                            Mode mode, double dropout, Rng& rng, std::size_t pad_tokens_to = 0);

ForwardOutput conversation_forward(const BoundModel& m, const EncodedConversation& conversation, Mode mode,
                                   double dropout, Rng& rng);

/// Per-batch losses: cls over all utterances, u/i averaged per utterance.
struct BatchLoss {
  Var cls;
  Var u;
  Var i;
  Var total;
};

BatchLoss batch_loss(const ForwardOutput& out, std::span<const EncodedConversation* const> conversations,
                     const LossWeights& weights);

}  // namespace uiim
