#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "posr/openset.hpp"
#include "posr/trainer.hpp"

namespace posr {

inline constexpr std::string_view kCheckpointFormat = "proto-osr.ckpt.v1";

/// Everything needed to resume training or to serve decisions. Contains no
/// timestamps, so identical fits produce identical files.
struct Checkpoint {
  TrainConfig config;
  TrainingState state;
  ThresholdTable thresholds;
  std::vector<std::size_t> class_devices;  // device id of each class index

  TrainedModel model() const { return {state.extractor, state.prototypes, thresholds}; }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace posr
