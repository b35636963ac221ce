#include "uiim/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace uiim {

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void init_uniform(Tensor& t, double bound, Rng& rng) {
  for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------

Affine::Affine(const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng)
    : weight(name + ".weight", Tensor(Shape{d_in, d_out})), bias(name + ".bias", Tensor(Shape{d_out})) {
  init_uniform(weight.value, glorot_bound(d_in, d_out), rng);
}

Var affine_forward(const AffineVars& p, Var x) {
  if (x.cols() != p.weight.rows())
    throw ShapeError("affine: input width " + std::to_string(x.cols()) + " does not match weight " +
                     shape_string(p.weight.shape()));
  return add_bias(matmul(x, p.weight), p.bias);
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::array<const char*, 4> kGateNames{"input", "forget", "output", "cell"};
}

Lstm::Lstm(const std::string& name, std::size_t input, std::size_t hidden, Rng& rng) {
  if (input == 0 || hidden == 0) throw std::invalid_argument("lstm: dimensions must be positive");
  const double bound = glorot_bound(input + hidden, hidden);
  for (std::size_t g = 0; g < 4; ++g) {
    weight[g] = Parameter(name + "." + kGateNames[g] + ".weight", Tensor(Shape{input + hidden, hidden}));
    bias[g] = Parameter(name + "." + kGateNames[g] + ".bias", Tensor(Shape{hidden}));
    init_uniform(weight[g].value, bound, rng);
  }
  bias[kForgetGate].value.fill(1.0);
}

LstmVars Lstm::bind(Tape& tape) {
  LstmVars v;
  for (std::size_t g = 0; g < 4; ++g) {
    v.weight[g] = tape.param(weight[g]);
    v.bias[g] = tape.param(bias[g]);
  }
  v.input = input();
  v.hidden = hidden();
  const Var fused = concat_cols(v.weight);
  v.input_weight = slice_rows(fused, 0, v.input);
  v.hidden_weight = slice_rows(fused, v.input, v.input + v.hidden);
  v.fused_bias = concat_cols(v.bias);
  return v;
}

void Lstm::collect(std::vector<Parameter*>& out) {
  for (std::size_t g = 0; g < 4; ++g) out.insert(out.end(), {&weight[g], &bias[g]});
}

namespace {

LstmState zero_state(const LstmVars& p, Tape& tape, std::size_t rows) {
  return {tape.constant(Tensor(Shape{rows, p.hidden})), tape.constant(Tensor(Shape{rows, p.hidden}))};
}

}  // namespace

namespace {

// One step given the input projection x_t W_x + b (rows x 4h). A null state
// means h_0 = c_0 = 0.
LstmState lstm_step(const LstmVars& p, Var projected, const LstmState* state) {
  const std::size_t h = p.hidden;
  Var z = state ? projected + matmul(state->h, p.hidden_weight) : projected;
  Var gates = sigmoid(slice_cols(z, 0, 3 * h));
  Var i = slice_cols(gates, 0, h);
  Var f = slice_cols(gates, h, 2 * h);
  Var o = slice_cols(gates, 2 * h, 3 * h);
  Var g = tanh(slice_cols(z, 3 * h, 4 * h));
  Var c = state ? f * state->c + i * g : i * g;
  return {o * tanh(c), c};
}

void check_step_input(const LstmVars& p, Var x) {
  if (x.cols() != p.input)
    throw ShapeError("lstm: step input width " + std::to_string(x.cols()) + ", expected " + std::to_string(p.input));
}

Var project_input(const LstmVars& p, Var x) { return add_bias(matmul(x, p.input_weight), p.fused_bias); }

}  // namespace

LstmState lstm_cell(const LstmVars& p, Var x, const LstmState& state) {
  check_step_input(p, x);
  return lstm_step(p, project_input(p, x), &state);
}

Var lstm_forward(const LstmVars& p, Var seq, std::size_t true_length) {
  if (true_length == 0) throw std::invalid_argument("lstm_forward: true length must be at least 1");
  if (true_length > seq.rows())
    throw std::invalid_argument("lstm_forward: true length " + std::to_string(true_length) + " exceeds " +
                                std::to_string(seq.rows()) + " rows");
  LstmState s = zero_state(p, seq.tape(), 1);
  for (std::size_t t = 0; t < true_length; ++t) s = lstm_cell(p, slice_rows(seq, t, t + 1), s);
  return s.h;
}

Var lstm_final_batched(const LstmVars& p, std::span<const Var> steps, std::span<const std::size_t> lengths) {
  if (steps.empty()) throw std::invalid_argument("lstm: no steps");
  const std::size_t rows = steps[0].rows();
  if (lengths.size() != rows) throw std::invalid_argument("lstm: one length per sequence required");
  for (std::size_t len : lengths)
    if (len == 0 || len > steps.size()) throw std::invalid_argument("lstm: sequence length out of range");
  for (const Var& x : steps) {
    check_step_input(p, x);
    if (x.rows() != rows) throw ShapeError("lstm: every step needs one row per sequence");
  }

  // Longest sequences first, so the sequences still running at step t are a
  // prefix of the order.
  std::vector<std::size_t> order(rows);
  for (std::size_t r = 0; r < rows; ++r) order[r] = r;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] > lengths[b]; });
  const std::size_t longest = lengths[order[0]];
  std::vector<std::size_t> active(longest);
  for (std::size_t t = 0; t < longest; ++t)
    active[t] = static_cast<std::size_t>(std::count_if(lengths.begin(), lengths.end(), [t](std::size_t l) { return l > t; }));

  // Project every live input row with one product.
  std::vector<Var> live;
  for (std::size_t t = 0; t < longest; ++t)
    live.push_back(gather_rows(steps[t], std::vector<std::size_t>(order.begin(), order.begin() + active[t])));
  Var projected = project_input(p, concat_rows(live));

  std::vector<Var> finished;  // final states of sequences, shortest last
  LstmState s;
  std::size_t offset = 0;
  for (std::size_t t = 0; t < longest; ++t) {
    const std::size_t a = active[t];
    if (t > 0 && a < active[t - 1]) {
      finished.push_back(slice_rows(s.h, a, active[t - 1]));
      s = {slice_rows(s.h, 0, a), slice_rows(s.c, 0, a)};
    }
    Var xw = slice_rows(projected, offset, offset + a);
    offset += a;
    s = lstm_step(p, xw, t == 0 ? nullptr : &s);
  }
  finished.push_back(s.h);
  std::reverse(finished.begin(), finished.end());
  Var sorted = finished.size() == 1 ? finished[0] : concat_rows(finished);

  std::vector<std::size_t> position(rows);
  for (std::size_t k = 0; k < rows; ++k) position[order[k]] = k;
  return gather_rows(sorted, std::move(position));
}

std::vector<Var> lstm_sequence(const LstmVars& p, std::span<const Var> steps) {
  if (steps.empty()) throw std::invalid_argument("lstm: empty sequence");
  const std::size_t rows = steps[0].rows();
  for (const Var& x : steps) {
    check_step_input(p, x);
    if (x.rows() != rows) throw ShapeError("lstm: every step needs the same number of rows");
  }
  Var projected = project_input(p, concat_rows(steps));
  std::vector<Var> out;
  out.reserve(steps.size());
  LstmState s;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    s = lstm_step(p, slice_rows(projected, t * rows, (t + 1) * rows), t == 0 ? nullptr : &s);
    out.push_back(s.h);
  }
  return out;
}

std::vector<Var> bilstm_batched(const LstmVars& fwd, const LstmVars& bwd, std::span<const Var> steps) {
  if (steps.empty()) throw std::invalid_argument("bilstm: empty sequence");
  std::vector<Var> reversed(steps.rbegin(), steps.rend());
  std::vector<Var> f = lstm_sequence(fwd, steps);
  std::vector<Var> b = lstm_sequence(bwd, reversed);
  std::reverse(b.begin(), b.end());
  std::vector<Var> out;
  out.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::array<Var, 2> parts{f[i], b[i]};
    out.push_back(concat_cols(parts));
  }
  return out;
}

Var bilstm_forward(const LstmVars& fwd, const LstmVars& bwd, Var seq) {
  if (seq.rows() == 0) throw std::invalid_argument("bilstm: empty sequence");
  std::vector<Var> steps;
  for (std::size_t t = 0; t < seq.rows(); ++t) steps.push_back(slice_rows(seq, t, t + 1));
  const std::vector<Var> out = bilstm_batched(fwd, bwd, steps);
  return concat_rows(out);
}

// ---------------------------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0)
    throw std::invalid_argument("attention: head count " + std::to_string(heads) + " does not divide width " +
                                std::to_string(d_model));
  const std::size_t d_k = d_model / heads;
  const double bound = glorot_bound(d_model, d_k);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string prefix = name + ".head" + std::to_string(h);
    query.emplace_back(prefix + ".query", Tensor(Shape{d_model, d_k}));
    key.emplace_back(prefix + ".key", Tensor(Shape{d_model, d_k}));
    value.emplace_back(prefix + ".value", Tensor(Shape{d_model, d_k}));
    init_uniform(query.back().value, bound, rng);
    init_uniform(key.back().value, bound, rng);
    init_uniform(value.back().value, bound, rng);
  }
  output = Parameter(name + ".output", Tensor(Shape{heads * d_k, d_model}));
  init_uniform(output.value, glorot_bound(heads * d_k, d_model), rng);
}

AttentionVars MultiHeadAttention::bind(Tape& tape) {
  AttentionVars v;
  for (std::size_t h = 0; h < heads(); ++h) {
    v.query.push_back(tape.param(query[h]));
    v.key.push_back(tape.param(key[h]));
    v.value.push_back(tape.param(value[h]));
  }
  v.output = tape.param(output);
  v.heads = heads();
  v.d_k = d_k();
  return v;
}

void MultiHeadAttention::collect(std::vector<Parameter*>& out) {
  for (std::size_t h = 0; h < heads(); ++h) out.insert(out.end(), {&query[h], &key[h], &value[h]});
  out.push_back(&output);
}

AttentionResult multi_head_attention_grouped(const AttentionVars& p, Var m, std::size_t groups,
                                             std::size_t rows_per_group) {
  if (rows_per_group == 0 || groups * rows_per_group != m.rows())
    throw ShapeError("attention: " + std::to_string(m.rows()) + " rows do not split into " + std::to_string(groups) +
                     " groups");
  if (p.heads == 0 || m.cols() != p.heads * p.d_k)
    throw ShapeError("attention: input width " + std::to_string(m.cols()) + " does not match model width " +
                     std::to_string(p.heads * p.d_k));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(p.d_k));
  const Shape grouped{groups, rows_per_group, p.d_k};
  AttentionResult result;
  std::vector<Var> heads;
  for (std::size_t h = 0; h < p.heads; ++h) {
    Var q = reshape(matmul(m, p.query[h]), grouped);
    Var k = reshape(matmul(m, p.key[h]), grouped);
    Var v = reshape(matmul(m, p.value[h]), grouped);
    Var weights = softmax_rows(scale(bmm(q, transpose(k)), inv_sqrt_dk));
    heads.push_back(reshape(bmm(weights, v), Shape{groups * rows_per_group, p.d_k}));
    result.weights.push_back(weights);
  }
  result.output = matmul(concat_cols(heads), p.output);
  return result;
}

AttentionResult multi_head_attention(const AttentionVars& p, Var m) {
  if (m.rows() == 0) throw ShapeError("attention: empty input");
  return multi_head_attention_grouped(p, m, 1, m.rows());
}

// ---------------------------------------------------------------------------

Mlp::Mlp(const std::string& name, std::size_t d_in, std::size_t hidden_width, std::size_t d_out, Rng& rng)
    : hidden(name + ".hidden", d_in, hidden_width, rng), out_layer(name + ".out", hidden_width, d_out, rng) {}

Var mlp_forward(const AffineVars& hidden, const AffineVars& out, Var x) {
  return affine_forward(out, relu(affine_forward(hidden, x)));
}

Var dropout_apply(Var x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must lie in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& v : mask.values()) v = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mul(x, x.tape().constant(std::move(mask)));
}

}  // namespace uiim
