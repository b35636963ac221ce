#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "uiim/autodiff.hpp"
#include "uiim/features.hpp"
#include "uiim/model.hpp"
#include "uiim/rng.hpp"

namespace uiim::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline Tensor row_tensor(const std::vector<double>& v) { return Tensor(Shape{1, v.size()}, v); }

/// Small model: d_w 4, 5 POS tags, d_h 8, 2 heads, 3 classes.
inline ModelConfig toy_config(Variant variant = Variant::uiim) {
  ModelConfig c;
  c.d_w = 4;
  c.d_p = 5;
  c.d_h = 8;
  c.lstm_hidden = 8;
  c.mlp_hidden = 8;
  c.heads = 2;
  c.num_classes = 3;
  c.variant = variant;
  return c;
}

inline constexpr std::size_t kToyVocab = 12;

inline EncodedUtterance toy_utterance(Rng& rng, std::size_t length, const ModelConfig& c) {
  EncodedUtterance u;
  for (std::size_t k = 0; k < length; ++k) {
    u.token_ids.push_back(1 + rng.index(kToyVocab - 1));
    u.pos_ids.push_back(rng.index(c.d_p));
  }
  u.stats.assign(c.d_s, 0.0);
  u.stats[rng.index(c.d_s)] = 1.0;
  u.label = rng.index(c.num_classes);
  return u;
}

inline EncodedConversation toy_conversation(Rng& rng, std::size_t utterances, const ModelConfig& c,
                                            const std::string& id = "toy") {
  EncodedConversation conv;
  conv.id = id;
  for (std::size_t i = 0; i < utterances; ++i) conv.utterances.push_back(toy_utterance(rng, 1 + rng.index(5), c));
  return conv;
}

inline double sum_all(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

}  // namespace uiim::test
