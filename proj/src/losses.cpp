#include "uiim/losses.hpp"

#include <stdexcept>

namespace uiim {

Var cosine(Var x, Var y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw ShapeError("cosine: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) + " differ");
  return div(dot(x, y), mul(l2_norm(x), l2_norm(y)));
}

namespace {

constexpr std::array<std::array<std::size_t, 2>, 3> kCuePairs{{{kWord, kPos}, {kWord, kStats}, {kPos, kStats}}};

Var ones_like(Var v) { return v.tape().constant(Tensor(v.shape(), 1.0)); }

}  // namespace

Var loss_u(Var word_u, Var pos_u, Var stats_u) {
  const std::array<Var, 3> u{word_u, pos_u, stats_u};
  Var acc;
  for (const auto& [a, b] : kCuePairs) {
    Var c = cosine(u[a], u[b]);
    Var term = sub(ones_like(c), c);
    acc = acc.valid() ? add(acc, term) : term;
  }
  return scale(mean(acc), 1.0 / 3.0);
}

Var loss_i(std::span<const HiddenPair, kFeatureCount> pairs) {
  Var acc;
  auto accumulate = [&](Var c) {
    Var term = add(ones_like(c), c);
    acc = acc.valid() ? add(acc, term) : term;
  };
  for (const auto& [a, b] : kCuePairs) accumulate(cosine(pairs[a].individuality, pairs[b].individuality));
  for (const auto& p : pairs) accumulate(cosine(p.universality, p.individuality));
  return scale(mean(acc), 1.0 / 6.0);
}

Var loss_cls(Var logits, const std::vector<std::size_t>& gold, const std::vector<bool>& mask) {
  const std::size_t rows = logits.rows();
  if (gold.size() != rows || mask.size() != rows)
    throw std::invalid_argument("loss_cls: need one gold label and mask flag per row");
  std::vector<std::size_t> keep;
  std::vector<std::size_t> keep_gold;
  for (std::size_t r = 0; r < rows; ++r) {
    if (gold[r] >= logits.cols())
      throw std::invalid_argument("loss_cls: gold index " + std::to_string(gold[r]) + " out of range");
    if (mask[r]) {
      keep.push_back(r);
      keep_gold.push_back(gold[r]);
    }
  }
  if (keep.empty()) throw std::invalid_argument("loss_cls: every position is masked");
  Var selected = keep.size() == rows ? logits : gather_rows(logits, keep);
  return scale(mean(pick(log_softmax_rows(selected), keep_gold)), -1.0);
}

Var loss_cls(Var logits, const std::vector<std::size_t>& gold) {
  return loss_cls(logits, gold, std::vector<bool>(gold.size(), true));
}

Var total_loss(const LossWeights& w, Var cls, Var u, Var i) {
  if (!(w.alpha > 0.0)) throw std::invalid_argument("loss weights: alpha must be positive");
  if (w.beta < 0.0 || w.gamma < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
  Var total = w.alpha == 1.0 ? cls : scale(cls, w.alpha);
  if (w.beta != 0.0 && u.valid()) total = add(total, scale(u, w.beta));
  if (w.gamma != 0.0 && i.valid()) total = add(total, scale(i, w.gamma));
  return total;
}

std::size_t predict(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

}  // namespace uiim
