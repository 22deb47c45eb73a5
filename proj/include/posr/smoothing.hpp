#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace posr {

enum class SmoothingMode { none, conventional, online };

std::string_view to_string(SmoothingMode mode);
SmoothingMode parse_smoothing_mode(std::string_view text);

/// Builds training targets. Keeps, per training sample, the cumulative record
/// q of the model's predictions (seeded one-hot at the true class) which the
/// online mode turns into a sample-specific softened label.
class SmoothingState {
 public:
  static constexpr double kPMin = 0.6;

  SmoothingState() = default;

  static SmoothingState init(std::span<const std::size_t> sample_ids, std::span<const std::size_t> labels,
                             std::size_t classes, SmoothingMode mode, double alpha);

  SmoothingMode mode() const noexcept { return mode_; }
  double alpha() const noexcept { return alpha_; }
  std::size_t classes() const noexcept { return classes_; }
  double p_min() const noexcept { return kPMin; }
  double p_max() const noexcept { return 1.0 - alpha_; }

  std::vector<double> soft_label(std::size_t sample_id, std::size_t label) const;

  /// q[id] += p[id] for every entry. Applied once at the end of each epoch.
  void epoch_update(std::span<const std::pair<std::size_t, std::vector<double>>> predictions);

  const std::vector<double>& record(std::size_t sample_id) const;
  bool contains(std::size_t sample_id) const { return records_.contains(sample_id); }
  const std::map<std::size_t, std::vector<double>>& records() const noexcept { return records_; }

  /// Rebuilds a state from persisted records (checkpoint resume).
  static SmoothingState restore(SmoothingMode mode, double alpha, std::size_t classes,
                                std::map<std::size_t, std::vector<double>> records);

 private:
  static void validate(SmoothingMode mode, double alpha, std::size_t classes);

  SmoothingMode mode_ = SmoothingMode::none;
  double alpha_ = 0.0;
  std::size_t classes_ = 0;
  std::map<std::size_t, std::vector<double>> records_;
};

/// Conventional label smoothing: 1 - alpha at the target, alpha / (C - 1) elsewhere.
std::vector<double> conventional_label(std::size_t classes, std::size_t label, double alpha);

}  // namespace posr
