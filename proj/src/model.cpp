#include "uiim/model.hpp"

#include <stdexcept>

namespace uiim {

std::string to_string(Variant v) { return v == Variant::uiim ? "uiim-full" : "concat-baseline"; }

Variant parse_variant(const std::string& s) {
  if (s == "uiim-full" || s == "uiim") return Variant::uiim;
  if (s == "concat-baseline" || s == "concat") return Variant::concat;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v == 0) throw std::invalid_argument(std::string(field) + " must be positive");
  };
  positive(d_w, "d_w");
  positive(d_p, "d_p");
  positive(d_s, "d_s");
  positive(d_h, "d_h");
  positive(lstm_hidden, "lstm_hidden");
  positive(heads, "heads");
  positive(mlp_hidden, "mlp_hidden");
  if (d_h % heads != 0)
    throw std::invalid_argument("heads (" + std::to_string(heads) + ") must divide d_h (" + std::to_string(d_h) + ")");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------

UiimModel::UiimModel(const ModelConfig& config, std::size_t vocab_size, Rng& rng) : config_(config) {
  config_.validate();
  embedding = EmbeddingTable{Parameter("embedding", Tensor(Shape{vocab_size, config_.d_w}))};
  for (std::size_t r = 1; r < vocab_size; ++r)
    for (std::size_t c = 0; c < config_.d_w; ++c) embedding.table.value.at(r, c) = rng.uniform(-0.1, 0.1);
  build(rng);
}

UiimModel::UiimModel(const ModelConfig& config, EmbeddingTable table, Rng& rng)
    : embedding(std::move(table)), config_(config) {
  config_.validate();
  if (embedding.dim() != config_.d_w)
    throw std::invalid_argument("embedding width " + std::to_string(embedding.dim()) + " does not match d_w " +
                                std::to_string(config_.d_w));
  build(rng);
}

void UiimModel::build(Rng& rng) {
  const ModelConfig& c = config_;
  const std::array<std::size_t, kFeatureCount> widths{c.d_w, c.d_p, c.d_s};
  const std::array<const char*, kFeatureCount> names{"word", "pos", "stats"};
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    cue_lstm[f] = Lstm(std::string("cue.") + names[f] + ".lstm", widths[f], c.lstm_hidden, rng);
    cue_project[f] = Affine(std::string("cue.") + names[f] + ".project", c.lstm_hidden, c.d_h, rng);
  }
  if (c.variant == Variant::uiim) {
    shared = Affine("universality", c.d_h, c.d_h, rng);
    for (std::size_t f = 0; f < kFeatureCount; ++f)
      individual[f] = Affine(std::string("individuality.") + names[f], c.d_h, c.d_h, rng);
    attention = MultiHeadAttention("attention", c.d_h, c.heads, rng);
    fusion = Affine("fusion", 6 * c.d_h, c.d_h, rng);
  } else {
    fusion = Affine("fusion", 3 * c.d_h, c.d_h, rng);
  }
  context_forward = Lstm("context.forward", c.d_h, c.lstm_hidden, rng);
  context_backward = Lstm("context.backward", c.d_h, c.lstm_hidden, rng);
  classifier = Mlp("mlp", 2 * c.lstm_hidden, c.mlp_hidden, c.num_classes, rng);
}

std::vector<Parameter*> UiimModel::parameters() {
  std::vector<Parameter*> out{&embedding.table};
  for (auto& l : cue_lstm) l.collect(out);
  for (auto& a : cue_project) a.collect(out);
  if (config_.variant == Variant::uiim) {
    shared.collect(out);
    for (auto& a : individual) a.collect(out);
    attention.collect(out);
  }
  fusion.collect(out);
  context_forward.collect(out);
  context_backward.collect(out);
  classifier.collect(out);
  return out;
}

std::vector<const Parameter*> UiimModel::parameters() const {
  auto mut = const_cast<UiimModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

Parameter* UiimModel::find(const std::string& name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

BoundModel bind(Tape& tape, UiimModel& model) {
  BoundModel b;
  b.variant = model.config().variant;
  b.embedding = tape.param(model.embedding.table);
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    b.cue_lstm[f] = model.cue_lstm[f].bind(tape);
    b.cue_project[f] = model.cue_project[f].bind(tape);
  }
  if (b.variant == Variant::uiim) {
    b.shared = model.shared.bind(tape);
    for (std::size_t f = 0; f < kFeatureCount; ++f) b.individual[f] = model.individual[f].bind(tape);
    b.attention = model.attention.bind(tape);
  }
  b.fusion = model.fusion.bind(tape);
  b.context_forward = model.context_forward.bind(tape);
  b.context_backward = model.context_backward.bind(tape);
  b.mlp_hidden = model.classifier.hidden.bind(tape);
  b.mlp_out = model.classifier.out_layer.bind(tape);
  return b;
}

// ---------------------------------------------------------------------------

Var encode_feature(const BoundModel& m, Feature f, std::span<const EncodedUtterance* const> utterances,
                   std::size_t pad_to) {
  if (utterances.empty()) throw std::invalid_argument("encode_feature: no utterances");
  Tape& tape = m.embedding.tape();
  const std::size_t rows = utterances.size();
  const LstmVars& lstm = m.cue_lstm[f];
  Var final_state;
  if (f == kStats) {
    Tensor stats(Shape{rows, lstm.input});
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& s = utterances[r]->stats;
      if (s.size() != lstm.input)
        throw ShapeError("encode_feature: statistics width " + std::to_string(s.size()) + ", expected " +
                         std::to_string(lstm.input));
      std::copy(s.begin(), s.end(), stats.data() + r * lstm.input);
    }
    const std::array<Var, 1> steps{tape.constant(std::move(stats))};
    const std::vector<std::size_t> lengths(rows, 1);
    final_state = lstm_final_batched(lstm, steps, lengths);
  } else {
    std::size_t max_len = pad_to;
    std::vector<std::size_t> lengths;
    for (const auto* u : utterances) {
      if (u->length() == 0) throw std::invalid_argument("encode_feature: utterance without tokens");
      lengths.push_back(u->length());
      max_len = std::max(max_len, u->length());
    }
    std::vector<Var> steps;
    steps.reserve(max_len);
    for (std::size_t t = 0; t < max_len; ++t) {
      if (f == kWord) {
        std::vector<std::size_t> ids(rows, Vocab::kPad);
        for (std::size_t r = 0; r < rows; ++r)
          if (t < lengths[r]) ids[r] = utterances[r]->token_ids[t];
        steps.push_back(gather_rows(m.embedding, std::move(ids)));
      } else {
        Tensor onehot(Shape{rows, lstm.input});
        for (std::size_t r = 0; r < rows; ++r)
          if (t < lengths[r]) {
            const std::size_t tag = utterances[r]->pos_ids[t];
            if (tag >= lstm.input)
              throw ShapeError("encode_feature: POS id " + std::to_string(tag) + " outside inventory of " +
                               std::to_string(lstm.input));
            onehot.at(r, tag) = 1.0;
          }
        steps.push_back(tape.constant(std::move(onehot)));
      }
    }
    final_state = lstm_final_batched(lstm, steps, lengths);
  }
  return tanh(affine_forward(m.cue_project[f], final_state));
}

Var encode_feature(const BoundModel& m, Feature f, const EncodedUtterance& utterance) {
  const std::array<const EncodedUtterance*, 1> one{&utterance};
  return encode_feature(m, f, one);
}

HiddenPair project_pair(const AffineVars& shared, const AffineVars& individual, Var u) {
  return {tanh(affine_forward(shared, u)), tanh(affine_forward(individual, u))};
}

FusionResult fuse(std::span<const HiddenPair, kFeatureCount> pairs, const AttentionVars& attention,
                  const AffineVars& projection) {
  const std::size_t rows = pairs[0].universality.rows();
  const std::size_t d_h = pairs[0].universality.cols();
  std::vector<Var> stack;
  for (const auto& p : pairs) {
    stack.push_back(p.universality);
    stack.push_back(p.individuality);
  }
  FusionResult r;
  r.matrix = reshape(concat_cols(stack), Shape{6 * rows, d_h});
  r.attended = multi_head_attention_grouped(attention, r.matrix, rows, 6).output;
  r.utterance = tanh(affine_forward(projection, reshape(r.attended, Shape{rows, 6 * d_h})));
  return r;
}

ForwardOutput forward_batch(const BoundModel& m, std::span<const EncodedConversation* const> conversations,
                            Mode mode, double dropout, Rng& rng, std::size_t pad_tokens_to) {
  if (conversations.empty()) throw std::invalid_argument("forward: empty batch");
  const std::size_t n = conversations[0]->utterances.size();
  if (n == 0) throw std::invalid_argument("forward: empty conversation");
  for (const auto* c : conversations)
    if (c->utterances.size() != n) throw std::invalid_argument("forward: conversations in a batch differ in length");
  const std::size_t k = conversations.size();

  std::vector<const EncodedUtterance*> utts;
  utts.reserve(k * n);
  for (const auto* c : conversations)
    for (const auto& u : c->utterances) utts.push_back(&u);

  ForwardOutput out;
  for (std::size_t f = 0; f < kFeatureCount; ++f) out.cues[f] = encode_feature(m, static_cast<Feature>(f), utts, pad_tokens_to);

  if (m.variant == Variant::uiim) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) out.pairs[f] = project_pair(m.shared, m.individual[f], out.cues[f]);
    out.utterance_vectors = fuse(out.pairs, m.attention, m.fusion).utterance;
  } else {
    out.utterance_vectors = tanh(affine_forward(m.fusion, concat_cols(out.cues)));
  }

  Var v = dropout_apply(out.utterance_vectors, dropout, mode, rng);
  std::vector<Var> steps;
  steps.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<std::size_t> rows(k);
    for (std::size_t c = 0; c < k; ++c) rows[c] = c * n + s;
    steps.push_back(n == 1 && k == 1 ? v : gather_rows(v, std::move(rows)));
  }
  const std::vector<Var> context = bilstm_batched(m.context_forward, m.context_backward, steps);
  // Step-major (s * k + c) back to conversation-major (c * n + s).
  Var stacked = concat_rows(context);
  std::vector<std::size_t> order(k * n);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t s = 0; s < n; ++s) order[c * n + s] = s * k + c;
  Var h = dropout_apply(gather_rows(stacked, std::move(order)), dropout, mode, rng);
  out.logits = mlp_forward(m.mlp_hidden, m.mlp_out, h);
  return out;
}

ForwardOutput conversation_forward(const BoundModel& m, const EncodedConversation& conversation, Mode mode,
                                   double dropout, Rng& rng) {
  const std::array<const EncodedConversation*, 1> one{&conversation};
  return forward_batch(m, one, mode, dropout, rng);
}

BatchLoss batch_loss(const ForwardOutput& out, std::span<const EncodedConversation* const> conversations,
                     const LossWeights& weights) {
  std::vector<std::size_t> gold;
  for (const auto* c : conversations)
    for (const auto& u : c->utterances) gold.push_back(u.label);
  BatchLoss l;
  l.cls = loss_cls(out.logits, gold);
  if (out.pairs[0].universality.valid()) {
    l.u = loss_u(out.pairs[kWord].universality, out.pairs[kPos].universality, out.pairs[kStats].universality);
    l.i = loss_i(out.pairs);
  }
  l.total = total_loss(weights, l.cls, l.u, l.i);
  return l;
}

}  // namespace uiim
