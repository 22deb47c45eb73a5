#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "posr/config.hpp"

namespace posr::testing {

/// A few devices, short slices and a narrow backbone: trains in well under a second.
inline ExperimentConfig tiny_experiment(std::size_t known = 3, std::size_t unknown = 2) {
  ExperimentConfig c = default_config();
  c.fleet.known = known;
  c.fleet.unknown = unknown;
  c.data.bursts_per_device = 5;
  c.data.slices_per_burst = 4;
  c.data.length = 128;
  c.data.burst_length = 512;
  c.train.epochs = 3;
  c.train.batch_size = 8;
  c.train.adam.learning_rate = 1e-2;
  c.train.backbone.channels = 4;
  c.train.backbone.stem_kernel = 8;
  c.train.backbone.stem_stride = 4;
  c.train.backbone.block_kernel = 3;
  c.train.backbone.blocks = 1;
  c.train.backbone.embed_dim = 4;
  return c;
}

/// Two known devices the desk backbone separates within a few epochs, so
/// calibration always finds correctly classified validation samples.
inline ExperimentConfig learnable_experiment() {
  ExperimentConfig c = tiny_experiment(2, 1);
  c.data.slices_per_burst = 8;
  c.data.length = 256;
  c.train.epochs = 6;
  c.train.adam.learning_rate = 3e-3;
  c.train.backbone = desk_backbone();
  return c;
}

inline Dataset tiny_dataset(const ExperimentConfig& c) {
  return build_dataset(make_fleet(c.fleet.known, c.fleet.unknown, c.fleet.seed, c.fleet.ranges), c.data, c.fleet.ranges);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("posr_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace posr::testing
