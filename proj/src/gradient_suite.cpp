#include "uiim/gradient_suite.hpp"

#include <array>

#include "uiim/layers.hpp"
#include "uiim/losses.hpp"
#include "uiim/model.hpp"

namespace uiim {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// sum(out * w) for a fixed random w of matching shape.
Var project_scalar(Var out, const Tensor& w) { return sum(mul(out, out.tape().constant(w))); }

std::vector<Parameter*> pointers(std::vector<Parameter>& ps) {
  std::vector<Parameter*> out;
  for (auto& p : ps) out.push_back(&p);
  return out;
}

GradientCase check(std::string name, const std::function<Var(Tape&)>& f, std::vector<Parameter*> params, double h,
                   double tol, double floor = 1e-8) {
  return {std::move(name), grad_check(f, params, h, tol, floor)};
}

EncodedUtterance toy_utterance(Rng& rng, std::size_t vocab, std::size_t tags, std::size_t classes,
                               std::size_t d_s) {
  EncodedUtterance u;
  const std::size_t len = 2 + rng.index(3);
  for (std::size_t k = 0; k < len; ++k) {
    u.token_ids.push_back(1 + rng.index(vocab - 1));
    u.pos_ids.push_back(rng.index(tags));
  }
  u.stats.assign(d_s, 0.0);
  u.stats[rng.index(d_s)] = 1.0;
  u.stats[rng.index(d_s)] = 1.0;
  u.label = rng.index(classes);
  return u;
}

}  // namespace

std::vector<GradientCase> run_gradient_suite(std::uint64_t seed, double h, double tol) {
  Rng rng(seed);
  std::vector<GradientCase> out;

  {  // affine
    Affine layer("affine", 5, 4, rng);
    const Tensor x = random_tensor({3, 5}, rng), w = random_tensor({3, 4}, rng);
    out.push_back(check("affine", [&](Tape& t) {
      return project_scalar(affine_forward(layer.bind(t), t.constant(x)), w);
    }, {&layer.weight, &layer.bias}, h, tol));
  }
  {  // lstm over a padded sequence
    Lstm lstm("lstm", 3, 4, rng);
    std::vector<Parameter*> ps;
    lstm.collect(ps);
    const Tensor seq = random_tensor({5, 3}, rng), w = random_tensor({1, 4}, rng);
    out.push_back(check("lstm", [&](Tape& t) {
      return project_scalar(lstm_forward(lstm.bind(t), t.constant(seq), 3), w);
    }, ps, h, tol));
  }
  {  // batched lstm with uneven lengths
    Lstm lstm("lstm_batched", 3, 4, rng);
    std::vector<Parameter*> ps;
    lstm.collect(ps);
    std::vector<Tensor> steps;
    for (int k = 0; k < 4; ++k) steps.push_back(random_tensor({3, 3}, rng));
    const std::vector<std::size_t> lengths{4, 2, 1};
    const Tensor w = random_tensor({3, 4}, rng);
    out.push_back(check("lstm_batched", [&](Tape& t) {
      std::vector<Var> vs;
      for (const auto& s : steps) vs.push_back(t.constant(s));
      return project_scalar(lstm_final_batched(lstm.bind(t), vs, lengths), w);
    }, ps, h, tol));
  }
  {  // bidirectional lstm
    Lstm fwd("bilstm.forward", 3, 4, rng), bwd("bilstm.backward", 3, 4, rng);
    std::vector<Parameter*> ps;
    fwd.collect(ps);
    bwd.collect(ps);
    const Tensor seq = random_tensor({4, 3}, rng), w = random_tensor({4, 8}, rng);
    out.push_back(check("bilstm", [&](Tape& t) {
      return project_scalar(bilstm_forward(fwd.bind(t), bwd.bind(t), t.constant(seq)), w);
    }, ps, h, tol));
  }
  {  // attention, plain and grouped
    MultiHeadAttention att("attention", 8, 2, rng);
    std::vector<Parameter*> ps;
    att.collect(ps);
    const Tensor m = random_tensor({6, 8}, rng), w = random_tensor({6, 8}, rng);
    out.push_back(check("attention", [&](Tape& t) {
      return project_scalar(multi_head_attention(att.bind(t), t.constant(m)).output, w);
    }, ps, h, tol));
    const Tensor mg = random_tensor({12, 8}, rng), wg = random_tensor({12, 8}, rng);
    out.push_back(check("attention_grouped", [&](Tape& t) {
      return project_scalar(multi_head_attention_grouped(att.bind(t), t.constant(mg), 2, 6).output, wg);
    }, ps, h, tol));
  }
  {  // mlp
    Mlp mlp("mlp", 6, 5, 3, rng);
    std::vector<Parameter*> ps;
    mlp.collect(ps);
    const Tensor x = random_tensor({4, 6}, rng), w = random_tensor({4, 3}, rng);
    out.push_back(check("mlp", [&](Tape& t) {
      return project_scalar(mlp_forward(mlp.hidden.bind(t), mlp.out_layer.bind(t), t.constant(x)), w);
    }, ps, h, tol));
  }
  {  // dropout with a replayed mask
    std::vector<Parameter> x{Parameter("x", random_tensor({4, 5}, rng))};
    const Tensor w = random_tensor({4, 5}, rng);
    const std::uint64_t mask_seed = rng.next();
    out.push_back(check("dropout", [&](Tape& t) {
      Rng mask(mask_seed);
      return project_scalar(dropout_apply(t.param(x[0]), 0.3, Mode::train, mask), w);
    }, pointers(x), h, tol));
  }
  {  // losses on free vectors
    std::vector<Parameter> v;
    for (const char* n : {"w_u", "w_i", "p_u", "p_i", "s_u", "s_i"}) v.emplace_back(n, random_tensor({3, 4}, rng));
    auto pairs = [&](Tape& t) {
      std::array<HiddenPair, kFeatureCount> ps;
      for (std::size_t f = 0; f < kFeatureCount; ++f) ps[f] = {t.param(v[2 * f]), t.param(v[2 * f + 1])};
      return ps;
    };
    out.push_back(check("loss_u", [&](Tape& t) {
      const auto ps = pairs(t);
      return loss_u(ps[0].universality, ps[1].universality, ps[2].universality);
    }, pointers(v), h, tol));
    out.push_back(check("loss_i", [&](Tape& t) {
      const auto ps = pairs(t);
      return loss_i(ps);
    }, pointers(v), h, tol));
    std::vector<Parameter> logits{Parameter("logits", random_tensor({4, 3}, rng, -2.0, 2.0))};
    const std::vector<std::size_t> gold{0, 2, 1, 2};
    const std::vector<bool> mask{true, true, false, true};
    out.push_back(check("loss_cls", [&](Tape& t) { return loss_cls(t.param(logits[0]), gold, mask); },
                        pointers(logits), h, tol));
  }
  {  // full toy model on a two-utterance conversation, dropout replayed
    ModelConfig c;
    c.d_w = 4;
    c.d_p = 5;
    c.d_h = 8;
    c.lstm_hidden = 8;
    c.mlp_hidden = 8;
    c.heads = 2;
    c.num_classes = 3;
    const std::size_t vocab = 10;
    UiimModel model(c, vocab, rng);
    EncodedConversation conv;
    conv.id = "toy";
    for (int k = 0; k < 2; ++k) conv.utterances.push_back(toy_utterance(rng, vocab, c.d_p, c.num_classes, c.d_s));
    const std::array<const EncodedConversation*, 1> convs{&conv};
    const std::uint64_t mask_seed = rng.next();
    out.push_back(check("uiim_model", [&](Tape& t) {
      Rng mask(mask_seed);
      const BoundModel bound = bind(t, model);
      const ForwardOutput fo = forward_batch(bound, convs, Mode::train, 0.3, mask);
      return batch_loss(fo, convs, LossWeights{}).total;
    }, model.parameters(), h, tol, kModelGradFloor));
  }
  return out;
}

}  // namespace uiim
