#include "posr/smoothing.hpp"

#include <cmath>

#include "posr/errors.hpp"

namespace posr {

std::string_view to_string(SmoothingMode mode) {
  switch (mode) {
    case SmoothingMode::none: return "none";
    case SmoothingMode::conventional: return "conventional";
    case SmoothingMode::online: return "online";
  }
  return "?";
}

SmoothingMode parse_smoothing_mode(std::string_view text) {
  if (text == "none") return SmoothingMode::none;
  if (text == "conventional") return SmoothingMode::conventional;
  if (text == "online") return SmoothingMode::online;
  throw ConfigError("smoothing.mode must be none|conventional|online, got '" + std::string(text) + "'");
}

void SmoothingState::validate(SmoothingMode mode, double alpha, std::size_t classes) {
  if (classes < 2) throw ContractError("smoothing: need at least 2 classes");
  if (mode == SmoothingMode::online && !(alpha > 0.0 && alpha < 1.0 - kPMin))
    throw ConfigError("smoothing.alpha = " + std::to_string(alpha) +
                      " gives p_max = 1 - alpha <= p_min = 0.6; online smoothing needs 0 < alpha < 0.4");
  if (mode == SmoothingMode::conventional && !(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("smoothing.alpha must lie in (0, 1) for conventional smoothing, got " + std::to_string(alpha));
}

SmoothingState SmoothingState::init(std::span<const std::size_t> sample_ids, std::span<const std::size_t> labels,
                                    std::size_t classes, SmoothingMode mode, double alpha) {
  validate(mode, alpha, classes);
  if (sample_ids.size() != labels.size()) throw ContractError("smoothing: one label per sample id required");
  SmoothingState state;
  state.mode_ = mode;
  state.alpha_ = alpha;
  state.classes_ = classes;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    if (labels[i] >= classes) throw ContractError("smoothing: label " + std::to_string(labels[i]) + " out of range");
    std::vector<double> q(classes, 0.0);
    q[labels[i]] = 1.0;
    if (!state.records_.emplace(sample_ids[i], std::move(q)).second)
      throw ContractError("smoothing: duplicate sample id " + std::to_string(sample_ids[i]));
  }
  return state;
}

SmoothingState SmoothingState::restore(SmoothingMode mode, double alpha, std::size_t classes,
                                       std::map<std::size_t, std::vector<double>> records) {
  validate(mode, alpha, classes);
  for (const auto& [id, q] : records) {
    if (q.size() != classes) throw ConformanceError("smoothing: record " + std::to_string(id) + " has wrong length");
    double total = 0.0;
    for (double v : q) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("smoothing: record " + std::to_string(id) + " has invalid entries");
      total += v;
    }
    if (total < 1.0 - 1e-9) throw NumericError("smoothing: record " + std::to_string(id) + " has total mass below 1");
  }
  SmoothingState state;
  state.mode_ = mode;
  state.alpha_ = alpha;
  state.classes_ = classes;
  state.records_ = std::move(records);
  return state;
}

std::vector<double> conventional_label(std::size_t classes, std::size_t label, double alpha) {
  if (classes < 2 || label >= classes) throw ContractError("conventional_label: invalid class index");
  std::vector<double> y(classes, alpha / static_cast<double>(classes - 1));
  y[label] = 1.0 - alpha;
  return y;
}

const std::vector<double>& SmoothingState::record(std::size_t sample_id) const {
  auto it = records_.find(sample_id);
  if (it == records_.end()) throw ContractError("smoothing: unknown sample id " + std::to_string(sample_id));
  return it->second;
}

std::vector<double> SmoothingState::soft_label(std::size_t sample_id, std::size_t label) const {
  const auto& q = record(sample_id);
  if (label >= classes_) throw ContractError("smoothing: label " + std::to_string(label) + " out of range");
  switch (mode_) {
    case SmoothingMode::none: {
      std::vector<double> y(classes_, 0.0);
      y[label] = 1.0;
      return y;
    }
    case SmoothingMode::conventional:
      return conventional_label(classes_, label, alpha_);
    case SmoothingMode::online: {
      double total = 0.0;
      for (double v : q) total += v;
      const double spread = p_max() - p_min();
      const double off_target = alpha_ / static_cast<double>(classes_ - 1);
      std::vector<double> y(classes_);
      for (std::size_t k = 0; k < classes_; ++k) y[k] = (k == label ? kPMin : off_target) + spread * q[k] / total;
      return y;
    }
  }
  return {};
}

void SmoothingState::epoch_update(std::span<const std::pair<std::size_t, std::vector<double>>> predictions) {
  for (const auto& [id, p] : predictions) {
    if (!records_.contains(id)) throw ContractError("smoothing: prediction for unknown sample id " + std::to_string(id));
    if (p.size() != classes_) throw ConformanceError("smoothing: prediction length does not match class count");
    double total = 0.0;
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw NumericError("smoothing: prediction has negative or non-finite entries");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6)
      throw NumericError("smoothing: prediction for sample " + std::to_string(id) + " sums to " + std::to_string(total));
  }
  for (const auto& [id, p] : predictions) {
    auto& q = records_.at(id);
    for (std::size_t k = 0; k < classes_; ++k) q[k] += p[k];
  }
}

}  // namespace posr
