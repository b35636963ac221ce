#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uiim/autodiff.hpp"

namespace uiim {

struct GradientCase {
  std::string name;
  GradCheckReport report;
};

/// Below this magnitude the full-model check compares gradients absolutely.
/// Central differences of an O(1) loss carry about eps * |f| / h ~ 1e-11 of
/// rounding noise, enough to push a few tiny recurrent-weight gradients past
/// 1e-4 under the 1e-8 floor.
inline constexpr double kModelGradFloor = 1e-6;

/// Finite-difference checks of every layer, every loss and the full toy model
/// (d_h 8, 2 heads, 3 classes, 2-utterance conversation) for one seed.
/// Each layer case reduces its output to a scalar through fixed random
/// weights. Layers and losses use the 1e-8 floor; the full model uses
/// kModelGradFloor.
std::vector<GradientCase> run_gradient_suite(std::uint64_t seed, double h = 1e-5, double tol = 1e-4);

}  // namespace uiim
