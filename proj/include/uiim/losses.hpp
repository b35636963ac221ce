#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "uiim/autodiff.hpp"

namespace uiim {

enum Feature : std::size_t { kWord = 0, kPos = 1, kStats = 2 };
inline constexpr std::size_t kFeatureCount = 3;

/// Universality and individuality vectors of one cue. Both are batch x d_h
/// (one row per utterance).
struct HiddenPair {
  Var universality;
  Var individuality;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.7;
  double gamma = 0.7;
};

struct LossReport {
  double loss_cls = 0.0;
  double loss_u = 0.0;
  double loss_i = 0.0;
  double total = 0.0;
};

/// Row-wise cosine similarity with epsilon-guarded norms; rows x 1.
Var cosine(Var x, Var y);

/// Mean over rows of (1/3) * sum over cue pairs of (1 - cos(h_f1^u, h_f2^u)).
/// Lies in [0, 2].
Var loss_u(Var word_u, Var pos_u, Var stats_u);

/// Mean over rows of (1/6) * [sum over cue pairs of (1 + cos(h_f1^i, h_f2^i))
/// + sum over cues of (1 + cos(h_f^u, h_f^i))]. Lies in [0, 2]. Gradients flow
/// into both the universality and the individuality branch.
Var loss_i(std::span<const HiddenPair, kFeatureCount> pairs);

/// Mean negative log-likelihood of the gold class over rows whose mask flag is
/// set (natural log). Throws std::invalid_argument when every row is masked
/// out or a gold index is out of range.
Var loss_cls(Var logits, const std::vector<std::size_t>& gold, const std::vector<bool>& mask);
Var loss_cls(Var logits, const std::vector<std::size_t>& gold);

/// alpha * cls + beta * u + gamma * i. Terms with zero weight are left out of
/// the graph entirely.
Var total_loss(const LossWeights& w, Var cls, Var u, Var i);

/// Argmax with ties going to the lowest index.
std::size_t predict(std::span<const double> logits);

}  // namespace uiim
