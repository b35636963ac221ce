#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uiim/autodiff.hpp"
#include "uiim/rng.hpp"

namespace uiim {

enum class Mode { train, eval };

/// Glorot/Xavier uniform bound sqrt(6 / (fan_in + fan_out)).
double glorot_bound(std::size_t fan_in, std::size_t fan_out);
void init_uniform(Tensor& t, double bound, Rng& rng);

// ---------------------------------------------------------------------------
// Affine: y = x W + b. Weights are stored input-major (d_in x d_out) so a batch
// of row vectors multiplies on the left.

struct AffineVars {
  Var weight;
  Var bias;
};

struct Affine {
  Affine() = default;
  Affine(const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng);

  std::size_t d_in() const { return weight.value.rows(); }
  std::size_t d_out() const { return weight.value.cols(); }
  AffineVars bind(Tape& tape) { return {tape.param(weight), tape.param(bias)}; }
  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }

  Parameter weight;
  Parameter bias;
};

/// x: rows x d_in -> rows x d_out. No activation.
Var affine_forward(const AffineVars& p, Var x);

// ---------------------------------------------------------------------------
// LSTM with separate input, forget, output and candidate gates. Each gate has a
// (d_in + hidden) x hidden weight applied to [x_t, h_{t-1}].

enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCellGate = 3 };

struct LstmVars {
  std::array<Var, 4> weight;
  std::array<Var, 4> bias;
  // The four gates side by side, split into the rows acting on x_t and on
  // h_{t-1}: input x 4h, hidden x 4h and 1 x 4h.
  Var input_weight;
  Var hidden_weight;
  Var fused_bias;
  std::size_t input = 0;
  std::size_t hidden = 0;
};

struct Lstm {
  Lstm() = default;
  Lstm(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng);

  std::size_t input() const { return weight[0].value.rows() - hidden(); }
  std::size_t hidden() const { return weight[0].value.cols(); }
  LstmVars bind(Tape& tape);
  void collect(std::vector<Parameter*>& out);

  std::array<Parameter, 4> weight;
  std::array<Parameter, 4> bias;
};

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM step for a batch of rows. x: rows x input; state rows x hidden.
LstmState lstm_cell(const LstmVars& p, Var x, const LstmState& state);

/// Final hidden state (1 x hidden) after running over the first `true_length`
/// rows of `seq` (l x input). Rows past `true_length` are never read.
Var lstm_forward(const LstmVars& p, Var seq, std::size_t true_length);

/// Batched variant: steps[t] holds row t of every sequence (batch x input);
/// sequence r only advances while t < lengths[r]. Sequences are packed by
/// length so rows past a sequence's end are never read. Returns batch x hidden.
Var lstm_final_batched(const LstmVars& p, std::span<const Var> steps, std::span<const std::size_t> lengths);

/// Hidden state after every step, all sequences of equal length.
std::vector<Var> lstm_sequence(const LstmVars& p, std::span<const Var> steps);

/// Per-step outputs n x (2 * hidden): row i = [forward h_i, backward h_i].
Var bilstm_forward(const LstmVars& fwd, const LstmVars& bwd, Var seq);

/// Batched over equal-length sequences; steps[t] is batch x input. Returns one
/// batch x (2 * hidden) output per step.
std::vector<Var> bilstm_batched(const LstmVars& fwd, const LstmVars& bwd, std::span<const Var> steps);

// ---------------------------------------------------------------------------
// Multi-head scaled dot-product self-attention, Q = K = V = M.

struct AttentionVars {
  std::vector<Var> query;
  std::vector<Var> key;
  std::vector<Var> value;
  Var output;
  std::size_t heads = 0;
  std::size_t d_k = 0;
};

struct MultiHeadAttention {
  MultiHeadAttention() = default;
  /// Throws std::invalid_argument unless heads divides d_model.
  MultiHeadAttention(const std::string& name, std::size_t d_model, std::size_t heads, Rng& rng);

  std::size_t heads() const { return query.size(); }
  std::size_t d_model() const { return output.value.cols(); }
  std::size_t d_k() const { return query.empty() ? 0 : query[0].value.cols(); }
  AttentionVars bind(Tape& tape);
  void collect(std::vector<Parameter*>& out);

  std::vector<Parameter> query;
  std::vector<Parameter> key;
  std::vector<Parameter> value;
  Parameter output;
};

struct AttentionResult {
  Var output;                 // rows x d_model
  std::vector<Var> weights;   // per head, (groups, rows_per_group, rows_per_group)
};

/// m: rows x d_model; every row attends to every row.
AttentionResult multi_head_attention(const AttentionVars& p, Var m);

/// m stacks `groups` independent blocks of `rows_per_group` rows; attention is
/// confined to each block.
AttentionResult multi_head_attention_grouped(const AttentionVars& p, Var m, std::size_t groups,
                                             std::size_t rows_per_group);

// ---------------------------------------------------------------------------

struct Mlp {
  Mlp() = default;
  Mlp(const std::string& name, std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng);

  void collect(std::vector<Parameter*>& out) {
    hidden.collect(out);
    out_layer.collect(out);
  }

  Affine hidden;
  Affine out_layer;
};

/// out(relu(hidden(x))); class scores, no softmax.
Var mlp_forward(const AffineVars& hidden, const AffineVars& out, Var x);

/// Inverted dropout. Eval mode and p == 0 return x itself. Throws
/// std::invalid_argument unless 0 <= p < 1.
Var dropout_apply(Var x, double p, Mode mode, Rng& rng);

}  // namespace uiim
