#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "posr/rfdata.hpp"
#include "posr/trainer.hpp"

namespace posr {

struct FleetConfig {
  std::size_t known = 10;
  std::size_t unknown = 8;
  std::uint64_t seed = 7;
  ImpairmentRanges ranges;
  bool operator==(const FleetConfig&) const = default;
};

enum class Arm { gcpl, consistency, online_ls, conventional_ls, ipl };
std::string_view to_string(Arm arm);
Arm parse_arm(std::string_view text);

struct AblationConfig {
  std::vector<Arm> arms{Arm::gcpl, Arm::consistency, Arm::online_ls, Arm::ipl};
  std::vector<double> lambda2{0.5};
  std::vector<double> alpha{0.2};
  bool operator==(const AblationConfig&) const = default;
};

struct ExperimentConfig {
  FleetConfig fleet;
  DatasetOptions data;
  TrainConfig train;
  double target_known_accuracy = 0.9;
  AblationConfig ablation;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Backbone sized for a single desktop core.
BackboneSpec desk_backbone();
ExperimentConfig default_config();

nlohmann::json to_json(const ExperimentConfig& config);
/// Strict: every key must be known; missing keys keep their defaults.
ExperimentConfig from_json(const nlohmann::json& doc);

nlohmann::json train_to_json(const TrainConfig& config);
TrainConfig train_from_json(const nlohmann::json& doc);

/// Applies "a.b.c=value". The value is read as JSON when it parses, otherwise as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Defaults, then the file (if any), then the overrides in order; validated.
ExperimentConfig resolve_config(const std::filesystem::path* file, const std::vector<std::string>& overrides);

void write_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Training settings for one ablation arm.
TrainConfig arm_config(const TrainConfig& base, Arm arm, double lambda2, double alpha);
bool arm_uses_consistency(Arm arm);
bool arm_uses_smoothing(Arm arm);

/// Human-readable JSON text with a trailing newline.
std::string dump(const nlohmann::json& doc);

}  // namespace posr
