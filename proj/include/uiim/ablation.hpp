#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "uiim/training.hpp"

namespace uiim {

struct AblationArm {
  Variant variant = Variant::uiim;
  EvalResult train;
  EvalResult validation;
  EvalResult test;
  std::size_t best_epoch = 0;
};

struct AblationReport {
  AblationArm full;
  AblationArm baseline;
};

/// Trains the full model and the concatenation baseline (auxiliary loss
/// weights forced to zero) from the same seed and data. With an output
/// directory each arm writes into <out>/<variant>/ and a summary goes to
/// <out>/ablation.csv as `variant,split,accuracy` rows.
AblationReport run_ablation(const TrainingJob& job);

}  // namespace uiim
