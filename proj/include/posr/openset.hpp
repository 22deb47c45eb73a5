#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "posr/model.hpp"
#include "posr/tensor.hpp"

namespace posr {

inline constexpr std::size_t kUnknown = std::numeric_limits<std::size_t>::max();

/// Best/second-best prototype match with scores g_k = -d_k.
struct MarginResult {
  std::size_t best = 0;
  std::size_t second = 0;
  double margin = 0.0;
  std::vector<double> scores;
};

/// Ties resolve to the lowest class index.
MarginResult margin_from_distances(std::span<const double> distances);
MarginResult margin(std::span<const double> z, const PrototypeBank& bank);

enum class DecisionMode {
  margin,       // reject when g_i1 - g_i2 < tau_i1
  probability,  // reject when max_k p_k < tau_i1
};

std::string_view to_string(DecisionMode mode);
DecisionMode parse_decision_mode(std::string_view text);

struct ClassThreshold {
  double mu = 0.0;
  double sigma = 0.0;
  double tau = 0.0;
  std::size_t count = 0;
};

/// Per-class rejection thresholds tau_k = mu_k - kappa * sigma_k.
struct ThresholdTable {
  double kappa = 1.0;
  bool pooled = false;
  DecisionMode mode = DecisionMode::margin;
  double gamma = 1.0;  // only used by DecisionMode::probability
  std::vector<ClassThreshold> classes;

  double tau(std::size_t k) const { return classes.at(k).tau; }
};

/// mean and sample (n - 1) standard deviation of scores, tau = mu - kappa * sigma.
ClassThreshold threshold_from_scores(std::span<const double> scores, double kappa);

struct CalibrationOptions {
  double kappa = 1.0;
  bool pooled = false;
  DecisionMode mode = DecisionMode::margin;
  double gamma = 1.0;
  bool operator==(const CalibrationOptions&) const = default;
};

/// Builds the table from per-class score lists (already restricted to
/// correctly classified samples). Pooled mode uses one threshold for all.
ThresholdTable calibrate_from_scores(const std::vector<std::vector<double>>& per_class, const CalibrationOptions& options);

/// Calibrates on validation embeddings [N, D]: per class k, the scores of
/// samples with true label k that also match k best.
ThresholdTable calibrate(const Tensor& embeddings, std::span<const std::size_t> labels, const PrototypeBank& bank,
                         const CalibrationOptions& options);

struct Decision {
  std::size_t predicted = kUnknown;
  std::size_t best = 0;
  std::size_t second = 0;
  double margin = 0.0;
  double max_probability = 0.0;
  std::vector<double> scores;

  bool unknown() const { return predicted == kUnknown; }
};

Decision decide_from_distances(std::span<const double> distances, const ThresholdTable& table);
Decision decide(std::span<const double> z, const PrototypeBank& bank, const ThresholdTable& table);

/// Ground truth for one test sample: class index for knowns, kUnknown otherwise.
struct Truth {
  std::size_t label = kUnknown;
  bool known() const { return label != kUnknown; }
};

struct Metrics {
  std::optional<double> known_accuracy;   // correct-and-accepted over all knowns
  std::optional<double> closed_set_accuracy;  // best match correct, ignoring rejection
  std::optional<double> rejection_rate;   // rejected unknowns over all unknowns
  std::optional<double> auroc;            // margin as known-vs-unknown score
  std::size_t knowns = 0;
  std::size_t unknowns = 0;
  /// rows: true class 0..C-1 then "unknown"; columns: predicted 0..C-1 then UNKNOWN.
  std::vector<std::vector<std::size_t>> confusion;
};

Metrics evaluate(std::span<const Decision> decisions, std::span<const Truth> truth, std::size_t classes);

/// Area under the ROC curve for "positive scores rank above negative ones",
/// ties counted as one half. Undefined for an empty side.
std::optional<double> auroc(std::span<const double> positive, std::span<const double> negative);

/// Operating point of a single global margin threshold chosen so that known
/// accuracy first reaches target (or accepts everything if it cannot).
struct OperatingPoint {
  double threshold = 0.0;
  double known_accuracy = 0.0;
  std::optional<double> rejection_rate;
};

OperatingPoint operating_point(std::span<const Decision> decisions, std::span<const Truth> truth,
                               double target_known_accuracy);

/// Operating point of the adaptive rule tau_k = mu_k - kappa * sigma_k with
/// kappa chosen (unrestricted) as the smallest value whose known accuracy
/// reaches the target. Falls back to accepting every correct known when the
/// target cannot be reached.
struct KappaOperatingPoint {
  double kappa = 0.0;
  double known_accuracy = 0.0;
  std::optional<double> rejection_rate;
};

KappaOperatingPoint matched_kappa(std::span<const Decision> decisions, std::span<const Truth> truth,
                                  const ThresholdTable& table, double target_known_accuracy);

}  // namespace posr
