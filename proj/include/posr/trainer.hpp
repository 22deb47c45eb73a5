#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posr/adam.hpp"
#include "posr/augment.hpp"
#include "posr/losses.hpp"
#include "posr/model.hpp"
#include "posr/openset.hpp"
#include "posr/rfdata.hpp"
#include "posr/smoothing.hpp"

namespace posr {

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::string lr_schedule = "constant";
  LossConfig loss;
  SmoothingMode smoothing = SmoothingMode::online;
  double alpha = 0.2;
  /// Recompute epoch-end predictions with a separate pass instead of reusing
  /// the ones gathered during the epoch.
  bool fresh_prediction_pass = false;
  AugmentSpec augment;
  BackboneSpec backbone;
  CalibrationOptions calibration;
  std::uint64_t seed = 1;
  std::size_t trials = 1;

  void validate(std::size_t input_length) const;
  bool operator==(const TrainConfig&) const = default;
};

/// Everything that evolves during training; enough to resume.
struct TrainingState {
  FeatureExtractor extractor;
  PrototypeBank prototypes;
  AdamState optimizer;
  SmoothingState smoothing;
  std::size_t epochs_completed = 0;

  /// Parameter tensors in optimizer order: extractor parameters, then prototypes.
  std::vector<Tensor*> parameters();
};

TrainingState initial_state(const TrainConfig& config, const Dataset& dataset);

struct BatchRecord {
  std::size_t size = 0;
  LossComponents components;
  double total = 0.0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  LossComponents components;  // sample-weighted means over the epoch
  double total = 0.0;
  std::vector<BatchRecord> batches;
  std::vector<std::pair<std::size_t, std::vector<double>>> predictions;
  std::size_t log_floor_hits = 0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

/// Dataset samples converted to working precision, indexed like the dataset.
class SampleCache {
 public:
  explicit SampleCache(const Dataset& dataset);
  const IqSequence& operator[](std::size_t i) const { return sequences_.at(i); }
  const Dataset& dataset() const noexcept { return *dataset_; }

 private:
  const Dataset* dataset_;
  std::vector<IqSequence> sequences_;
};

/// Which inputs feed the classification and consistency terms.
struct BranchPlan {
  bool augmented_branch = false;  // compute f(g(x)) for the consistency term
  bool classify_augmented = false;  // augmentation without consistency: classify g(x)
};
BranchPlan branch_plan(const TrainConfig& config);

/// Loss of one batch on a fresh tape. Exposed for tests that check gradients
/// and recompute epoch statistics.
struct BatchEvaluation {
  ad::Tape tape;
  std::vector<ad::Var> parameters;  // extractor parameters then prototypes
  BatchLoss loss;
};
BatchEvaluation evaluate_batch(const TrainingState& state, const SampleCache& samples, std::span<const std::size_t> ids,
                               const TrainConfig& config, std::size_t epoch);

/// One pass over the training split: one Adam step per batch.
EpochStats train_epoch(TrainingState& state, const SampleCache& samples, std::span<const std::size_t> train_ids,
                       const TrainConfig& config);

struct EpochRow {
  std::size_t epoch = 0;
  double dce = 0.0, prototype = 0.0, consistency = 0.0, total = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  TrainConfig config;
  std::vector<EpochRow> epochs;
  std::size_t parameter_count = 0;
  double seconds = 0.0;
  std::string checkpoint_path;
  std::string checkpoint_error;  // set when writing the checkpoint failed
};

struct TrainedModel {
  FeatureExtractor extractor;
  PrototypeBank prototypes;
  ThresholdTable thresholds;
};

struct FitOptions {
  std::optional<std::filesystem::path> checkpoint;
  /// Continue from a saved state instead of initialising.
  std::optional<TrainingState> resume;
  std::function<void(const EpochStats&)> on_epoch;
};

struct FitResult {
  TrainReport report;
  TrainedModel model;
  TrainingState state;
};

/// Trains for config.epochs (minus any already completed), updates the
/// smoothing records at every epoch end, then calibrates thresholds on the
/// validation split.
FitResult fit(const TrainConfig& config, const Dataset& dataset, const FitOptions& options = {});

/// Embeddings [N, D] of the given samples, computed in chunks.
Tensor embed_samples(const FeatureExtractor& extractor, const SampleCache& samples, std::span<const std::size_t> ids);

double closed_set_accuracy(const FeatureExtractor& extractor, const PrototypeBank& prototypes, const SampleCache& samples,
                           std::span<const std::size_t> ids);

struct SplitEvaluation {
  std::vector<Decision> decisions;
  std::vector<Truth> truth;
  Metrics metrics;
  KappaOperatingPoint matched;  // per-class thresholds with kappa tuned to the target known accuracy
  OperatingPoint global;        // one margin threshold shared by all classes, tuned the same way
};

SplitEvaluation evaluate_split(const TrainedModel& model, const SampleCache& samples, Split split,
                               double target_known_accuracy);

/// N independently seeded fits (seed, seed + 1, ...), run on up to
/// `threads` workers.
struct TrialOutcome {
  std::uint64_t seed = 0;
  SplitEvaluation evaluation;
  TrainReport report;
};

std::vector<TrialOutcome> run_trials(const TrainConfig& config, const Dataset& dataset, std::size_t trials,
                                     double target_known_accuracy, std::size_t threads);

/// Worker cap from PROTO_OSR_THREADS, defaulting to the hardware concurrency.
std::size_t worker_threads();

double median(std::vector<double> values);

}  // namespace posr
