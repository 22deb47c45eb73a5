#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "posr/trainer.hpp"

namespace posr {

/// One line of a metrics CSV. Ablation rows carry medians over trials.
struct MetricsRow {
  std::string run;
  std::optional<double> lambda2;
  std::optional<double> alpha;
  std::size_t trials = 1;
  double target_known_accuracy = 0.9;
  std::optional<double> known_accuracy;
  std::optional<double> closed_set_accuracy;
  std::optional<double> rejection_rate;
  std::optional<double> auroc;
  std::size_t knowns = 0;
  std::size_t unknowns = 0;
  std::optional<double> matched_kappa;
  std::optional<double> matched_known_accuracy;
  std::optional<double> matched_rejection_rate;
  std::optional<double> global_threshold;
  std::optional<double> global_known_accuracy;
  std::optional<double> global_rejection_rate;
};

MetricsRow metrics_row(std::string run, const SplitEvaluation& evaluation, double target_known_accuracy);

/// Median of each metric over trials; a metric undefined in any trial stays undefined.
MetricsRow median_row(std::string run, const std::vector<SplitEvaluation>& trials, double target_known_accuracy);

/// Header plus one line per row. Reals use %.17g, undefined values "NA".
std::string metrics_csv(const std::vector<MetricsRow>& rows);

/// Entry point of the proto_osr tool. Returns the process exit status:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace posr
