#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include "uiim/corpus.hpp"
#include "uiim/features.hpp"
#include "uiim/model.hpp"

namespace uiim {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to classify raw utterances: the model plus the
/// vocabulary, POS inventory and label set it was trained against.
struct Classifier {
  Vocab vocab;
  PosInventory pos;
  LabelSet labels;
  StatisticsSchema schema;
  std::unique_ptr<UiimModel> model;
};

// Checkpoint layout (version 1):
//
//   uiim-checkpoint 1
//   config d_w=.. d_p=.. d_s=.. d_h=.. lstm_hidden=.. heads=.. num_classes=.. dropout=.. mlp_hidden=.. variant=..
//   labels <name> <count>      followed by one label per line
//   vocab <count>              followed by one token per line
//   pos <count>                followed by one tag per line
//   params <count>
//   <name> <rank> <d0> [<d1> [<d2>]]
//   <product(dims) little-endian IEEE-754 doubles>\n     (repeated per parameter)
//   end
void save_checkpoint(const std::filesystem::path& path, const Classifier& classifier);

/// Rebuilds the classifier; every stored tensor must match the shape the
/// stored config implies, and every model parameter must be present.
Classifier load_checkpoint(const std::filesystem::path& path);

/// Copies parameters from a checkpoint into an existing model. Throws
/// CheckpointError if the stored config differs from the model's.
void restore_parameters(const std::filesystem::path& path, UiimModel& model);

std::string config_line(const ModelConfig& config);
ModelConfig parse_config_line(const std::string& line);

}  // namespace uiim
