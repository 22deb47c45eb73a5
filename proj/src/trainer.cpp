#include "posr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "posr/checkpoint.hpp"
#include "posr/errors.hpp"
#include "posr/random.hpp"

namespace posr {
namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566666c65ULL;
constexpr std::uint64_t kAugmentTag = 0x6175676d656e74ULL;
constexpr std::uint64_t kPrototypeTag = 0x70726f746f73ULL;
constexpr std::size_t kInferenceChunk = 256;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string describe(const LossComponents& c, double total) {
  std::ostringstream os;
  os.precision(17);
  os << "dce=" << c.dce << " prototype=" << c.prototype << " consistency=" << c.consistency << " total=" << total;
  return os.str();
}

}  // namespace

void TrainConfig::validate(std::size_t input_length) const {
  if (epochs < 1) throw ConfigError("train.epochs: must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 2) throw ConfigError("train.batch_size: must be >= 2, got " + std::to_string(batch_size));
  if (!(adam.learning_rate > 0.0) || !std::isfinite(adam.learning_rate))
    throw ConfigError("train.learning_rate: must be > 0");
  adam.validate();
  if (lr_schedule != "constant")
    throw ConfigError("train.lr_schedule: only \"constant\" is supported, got \"" + lr_schedule + "\"");
  loss.validate();
  if (trials < 1) throw ConfigError("train.trials: must be >= 1");
  backbone.validate();
  if (input_length < backbone.min_length())
    throw ConfigError("model: input length " + std::to_string(input_length) + " is shorter than the stem kernel " +
                      std::to_string(backbone.stem_kernel));
  augment.validate(input_length);
  if (calibration.kappa < 1.0) throw ConfigError("openset.kappa: must be >= 1");
}

std::vector<Tensor*> TrainingState::parameters() {
  std::vector<Tensor*> out;
  for (Tensor& p : extractor.parameters()) out.push_back(&p);
  out.push_back(&prototypes.tensor());
  return out;
}

TrainingState initial_state(const TrainConfig& config, const Dataset& dataset) {
  config.validate(dataset.length());
  const auto train = dataset.indices(Split::train);
  if (train.empty()) throw ContractError("fit: empty training split");
  std::vector<std::size_t> labels;
  labels.reserve(train.size());
  for (std::size_t i : train) labels.push_back(dataset.label(i));

  TrainingState state;
  state.extractor = FeatureExtractor::initialize(config.backbone, config.seed);
  state.prototypes = PrototypeBank::initialize(dataset.classes(), config.backbone.embed_dim,
                                               stream_seed({config.seed, kPrototypeTag}));
  state.optimizer = AdamState::zeros_like(state.parameters());
  state.smoothing = SmoothingState::init(train, labels, dataset.classes(), config.smoothing, config.alpha);
  return state;
}

SampleCache::SampleCache(const Dataset& dataset) : dataset_(&dataset) {
  sequences_.reserve(dataset.size());
  for (const IQBurst& s : dataset.samples()) sequences_.push_back(s.as_sequence());
}

BranchPlan branch_plan(const TrainConfig& config) {
  BranchPlan plan;
  if (!config.augment.any_enabled()) return plan;
  if (config.loss.lambda2 > 0.0)
    plan.augmented_branch = true;
  else
    plan.classify_augmented = true;
  return plan;
}

BatchEvaluation evaluate_batch(const TrainingState& state, const SampleCache& samples, std::span<const std::size_t> ids,
                               const TrainConfig& config, std::size_t epoch) {
  const Dataset& data = samples.dataset();
  const BranchPlan plan = branch_plan(config);

  std::vector<const IqSequence*> clean;
  std::vector<IqSequence> augmented;
  std::vector<std::size_t> labels;
  Tensor soft({ids.size(), data.classes()});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::size_t id = ids[r];
    const std::size_t y = data.label(id);
    if (y == kUnknown) throw ContractError("train: sample " + std::to_string(id) + " belongs to an unknown device");
    labels.push_back(y);
    clean.push_back(&samples[id]);
    if (plan.augmented_branch || plan.classify_augmented)
      augmented.push_back(apply(samples[id], config.augment, stream_seed({config.seed, epoch, id, kAugmentTag})));
    const auto label = state.smoothing.soft_label(id, y);
    std::copy(label.begin(), label.end(), soft.data().begin() + r * data.classes());
  }
  std::vector<const IqSequence*> aug_ptrs;
  for (const auto& a : augmented) aug_ptrs.push_back(&a);

  BatchEvaluation out;
  ad::Tape& tape = out.tape;
  out.parameters = state.extractor.bind(tape);
  const ad::Var protos = tape.parameter(state.prototypes.tensor());
  out.parameters.push_back(protos);
  const std::span<const ad::Var> net(out.parameters.data(), out.parameters.size() - 1);

  if (plan.classify_augmented) {
    const ad::Var z = state.extractor.embed(tape, net, tape.constant(iq_batch(aug_ptrs)));
    out.loss = total_loss(tape, z, protos, soft, labels, config.loss);
  } else {
    const ad::Var z = state.extractor.embed(tape, net, tape.constant(iq_batch(clean)));
    std::optional<ad::Var> za;
    if (plan.augmented_branch) za = state.extractor.embed(tape, net, tape.constant(iq_batch(aug_ptrs)));
    out.loss = total_loss(tape, z, protos, soft, labels, config.loss, za);
  }
  return out;
}

EpochStats train_epoch(TrainingState& state, const SampleCache& samples, std::span<const std::size_t> train_ids,
                       const TrainConfig& config) {
  if (train_ids.empty()) throw ContractError("train_epoch: empty training split");
  const auto start = std::chrono::steady_clock::now();
  EpochStats stats;
  stats.epoch = state.epochs_completed + 1;

  std::vector<std::size_t> order(train_ids.begin(), train_ids.end());
  auto rng = make_stream({config.seed, stats.epoch, kShuffleTag});
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t classes = samples.dataset().classes();
  auto params = state.parameters();
  double dce = 0.0, proto = 0.0, cons = 0.0, total = 0.0;
  for (std::size_t begin = 0, batch = 0; begin < order.size(); begin += config.batch_size, ++batch) {
    const std::size_t end = std::min(order.size(), begin + config.batch_size);
    const std::span<const std::size_t> ids(order.data() + begin, end - begin);

    BatchRecord rec;
    rec.size = ids.size();
    std::vector<Tensor> grads;
    try {
      BatchEvaluation eval = evaluate_batch(state, samples, ids, config, stats.epoch);
      const ad::Tape& tape = eval.tape;
      rec.components.dce = tape.value(eval.loss.dce).item();
      rec.components.prototype = tape.value(eval.loss.prototype).item();
      if (eval.loss.consistency) rec.components.consistency = tape.value(*eval.loss.consistency).item();
      rec.total = tape.value(eval.loss.total).item();
      if (!std::isfinite(rec.total))
        throw TrainingError("non-finite loss at epoch " + std::to_string(stats.epoch) + ", batch " +
                            std::to_string(batch) + ": " + describe(rec.components, rec.total));
      const ad::Gradients g = eval.tape.backward(eval.loss.total);
      for (ad::Var v : eval.parameters) grads.push_back(g[v]);
      stats.log_floor_hits += tape.log_floor_hits();

      if (!config.fresh_prediction_pass) {
        const Tensor& p = tape.value(eval.loss.probabilities);
        for (std::size_t r = 0; r < ids.size(); ++r)
          stats.predictions.emplace_back(ids[r], std::vector<double>(p.data().begin() + r * classes,
                                                                     p.data().begin() + (r + 1) * classes));
      }
    } catch (const NumericError& e) {
      throw TrainingError("non-finite value at epoch " + std::to_string(stats.epoch) + ", batch " + std::to_string(batch) +
                          ": " + e.what());
    }

    adam_step(params, grads, state.optimizer, config.adam);
    stats.batches.push_back(rec);
    const double w = static_cast<double>(rec.size);
    dce += w * rec.components.dce;
    proto += w * rec.components.prototype;
    cons += w * rec.components.consistency;
    total += w * rec.total;
  }

  const double n = static_cast<double>(order.size());
  stats.components = {dce / n, proto / n, cons / n};
  stats.total = total / n;

  if (config.fresh_prediction_pass) {
    std::vector<std::size_t> ids(train_ids.begin(), train_ids.end());
    std::sort(ids.begin(), ids.end());
    const Tensor z = embed_samples(state.extractor, samples, ids);
    const std::size_t dim = z.extent(1);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const auto d = distances(z.data().subspan(r * dim, dim), state.prototypes);
      stats.predictions.emplace_back(ids[r], distance_softmax(d, config.loss.gamma));
    }
  }
  std::sort(stats.predictions.begin(), stats.predictions.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  state.smoothing.epoch_update(stats.predictions);
  state.epochs_completed = stats.epoch;
  stats.seconds = seconds_since(start);
  return stats;
}

Tensor embed_samples(const FeatureExtractor& extractor, const SampleCache& samples, std::span<const std::size_t> ids) {
  if (ids.empty()) throw ContractError("embed_samples: no samples");
  const std::size_t dim = extractor.spec().embed_dim;
  Tensor out({ids.size(), dim});
  for (std::size_t begin = 0; begin < ids.size(); begin += kInferenceChunk) {
    const std::size_t end = std::min(ids.size(), begin + kInferenceChunk);
    std::vector<const IqSequence*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&samples[ids[i]]);
    const Tensor z = extractor.embed(iq_batch(batch));
    std::copy(z.data().begin(), z.data().end(), out.data().begin() + begin * dim);
  }
  return out;
}

double closed_set_accuracy(const FeatureExtractor& extractor, const PrototypeBank& prototypes, const SampleCache& samples,
                           std::span<const std::size_t> ids) {
  if (ids.empty()) return 0.0;
  const Tensor z = embed_samples(extractor, samples, ids);
  const std::size_t dim = z.extent(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto m = margin(z.data().subspan(r * dim, dim), prototypes);
    if (m.best == samples.dataset().label(ids[r])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

FitResult fit(const TrainConfig& config, const Dataset& dataset, const FitOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  config.validate(dataset.length());
  const auto train = dataset.indices(Split::train);
  const auto val = dataset.indices(Split::val);
  if (train.empty()) throw ContractError("fit: empty training split");
  if (val.empty()) throw ContractError("fit: empty validation split");
  for (std::size_t k = 0; k < dataset.classes(); ++k) {
    const auto has = [&](const std::vector<std::size_t>& ids) {
      return std::any_of(ids.begin(), ids.end(), [&](std::size_t i) { return dataset.label(i) == k; });
    };
    if (!has(train) || !has(val))
      throw ContractError("fit: class " + std::to_string(k) + " is missing from the train or validation split");
  }

  const SampleCache samples(dataset);
  FitResult result;
  result.state = options.resume ? *options.resume : initial_state(config, dataset);
  TrainingState& state = result.state;
  if (state.prototypes.classes() != dataset.classes())
    throw ContractError("fit: resumed state has " + std::to_string(state.prototypes.classes()) +
                        " prototypes but the dataset has " + std::to_string(dataset.classes()) + " known classes");

  result.report.config = config;
  result.report.parameter_count = state.extractor.parameter_count() + state.prototypes.tensor().size();
  while (state.epochs_completed < config.epochs) {
    EpochStats stats = train_epoch(state, samples, train, config);
    stats.val_accuracy = closed_set_accuracy(state.extractor, state.prototypes, samples, val);
    result.report.epochs.push_back({stats.epoch, stats.components.dce, stats.components.prototype,
                                    stats.components.consistency, stats.total, stats.val_accuracy, stats.seconds});
    if (options.on_epoch) options.on_epoch(stats);
  }

  const Tensor zval = embed_samples(state.extractor, samples, val);
  std::vector<std::size_t> val_labels;
  for (std::size_t i : val) val_labels.push_back(dataset.label(i));
  CalibrationOptions calib = config.calibration;
  calib.gamma = config.loss.gamma;
  result.model = {state.extractor, state.prototypes, calibrate(zval, val_labels, state.prototypes, calib)};

  if (options.checkpoint) {
    result.report.checkpoint_path = options.checkpoint->string();
    try {
      save_checkpoint(*options.checkpoint, Checkpoint{config, state, result.model.thresholds, dataset.known_devices()});
    } catch (const std::exception& e) {
      result.report.checkpoint_error = e.what();
    }
  }
  result.report.seconds = seconds_since(start);
  return result;
}

SplitEvaluation evaluate_split(const TrainedModel& model, const SampleCache& samples, Split split,
                               double target_known_accuracy) {
  const auto ids = samples.dataset().indices(split);
  if (ids.empty()) throw ContractError("evaluate: split " + std::string(to_string(split)) + " is empty");
  const Tensor z = embed_samples(model.extractor, samples, ids);
  const std::size_t dim = z.extent(1);
  SplitEvaluation out;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    out.decisions.push_back(decide(z.data().subspan(r * dim, dim), model.prototypes, model.thresholds));
    out.truth.push_back({samples.dataset().label(ids[r])});
  }
  out.metrics = evaluate(out.decisions, out.truth, model.prototypes.classes());
  if (model.thresholds.mode == DecisionMode::margin)
    out.matched = matched_kappa(out.decisions, out.truth, model.thresholds, target_known_accuracy);
  out.global = operating_point(out.decisions, out.truth, target_known_accuracy);
  return out;
}

std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PROTO_OSR_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = std::min<std::size_t>(n, v);
  }
  return n;
}

std::vector<TrialOutcome> run_trials(const TrainConfig& config, const Dataset& dataset, std::size_t trials,
                                     double target_known_accuracy, std::size_t threads) {
  if (trials < 1) throw ConfigError("train.trials: must be >= 1");
  std::vector<TrialOutcome> out(trials);
  std::vector<std::exception_ptr> errors(trials);
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= trials) return;
        i = next++;
      }
      try {
        TrainConfig c = config;
        c.seed = config.seed + i;
        FitResult r = fit(c, dataset);
        const SampleCache samples(dataset);
        out[i] = {c.seed, evaluate_split(r.model, samples, Split::test, target_known_accuracy), std::move(r.report)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, trials);
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace posr
