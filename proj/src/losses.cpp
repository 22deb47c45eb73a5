#include "posr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "posr/errors.hpp"

namespace posr {

void LossConfig::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("loss.gamma must be positive, got " + std::to_string(gamma));
  if (!(lambda1 >= 0.0) || !std::isfinite(lambda1)) throw ConfigError("loss.lambda1 must be non-negative");
  if (!(lambda2 >= 0.0) || !std::isfinite(lambda2)) throw ConfigError("loss.lambda2 must be non-negative");
}

double LossComponents::total(const LossConfig& config) const {
  return dce + config.lambda1 * prototype + config.lambda2 * consistency;
}

std::vector<double> distance_softmax(std::span<const double> d, double gamma) {
  if (d.empty()) throw ConformanceError("distance_softmax: empty distance vector");
  for (double v : d)
    if (!std::isfinite(v)) throw NumericError("distance_softmax: non-finite distance");
  const double nearest = *std::min_element(d.begin(), d.end());
  std::vector<double> p(d.size());
  double total = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    p[k] = std::exp(-gamma * (d[k] - nearest));
    total += p[k];
  }
  for (double& v : p) v /= total;
  return p;
}

double dce_loss(std::span<const double> p, std::span<const double> soft_label, std::size_t* floor_hits) {
  if (p.size() != soft_label.size())
    throw ConformanceError("dce_loss: " + std::to_string(p.size()) + " probabilities vs " +
                           std::to_string(soft_label.size()) + " label entries");
  double mass = 0.0;
  for (double y : soft_label) mass += y;
  if (std::abs(mass - 1.0) > 1e-9) throw ContractError("dce_loss: label must sum to 1, sums to " + std::to_string(mass));
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (soft_label[k] == 0.0) continue;
    double pk = p[k];
    if (pk < kLogFloor) {
      pk = kLogFloor;
      if (floor_hits) ++*floor_hits;
    }
    loss -= soft_label[k] * std::log(pk);
  }
  return loss;
}

namespace {

double squared_gap(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size())
    throw ConformanceError(std::string(op) + ": dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    total += diff * diff;
  }
  return total;
}

}  // namespace

double prototype_loss(std::span<const double> z, std::span<const double> prototype) {
  return squared_gap(z, prototype, "prototype_loss");
}

double consistency_loss(std::span<const double> z, std::span<const double> z_augmented) {
  return squared_gap(z, z_augmented, "consistency_loss");
}

ad::Var distance_softmax(ad::Tape& tape, ad::Var d, double gamma) { return tape.softmax(tape.scale(d, -gamma)); }

BatchLoss total_loss(ad::Tape& tape, ad::Var embeddings, ad::Var prototypes, const Tensor& soft_labels,
                     std::span<const std::size_t> labels, const LossConfig& config, std::optional<ad::Var> augmented) {
  config.validate();
  const Tensor& z = tape.value(embeddings);
  const Tensor& m = tape.value(prototypes);
  if (z.rank() != 2 || m.rank() != 2) throw ConformanceError("total_loss: embeddings and prototypes must be matrices");
  const std::size_t n = z.extent(0), classes = m.extent(0);
  if (n == 0 || labels.size() != n) throw ContractError("total_loss: need one label per embedding row");
  if (soft_labels.shape() != Shape{n, classes})
    throw ConformanceError("total_loss: soft labels " + shape_string(soft_labels.shape()) + ", expected " +
                           shape_string({n, classes}));

  Tensor one_hot({n, classes});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw ContractError("total_loss: label " + std::to_string(labels[i]) + " out of range");
    one_hot[i * classes + labels[i]] = 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  BatchLoss out;
  out.distances = tape.squared_distance(embeddings, prototypes);
  out.probabilities = distance_softmax(tape, out.distances, config.gamma);
  const ad::Var log_p = tape.log(out.probabilities, kLogFloor);
  out.dce = tape.scale(tape.sum(tape.mul(log_p, tape.constant(soft_labels))), -inv_n);
  out.prototype = tape.scale(tape.sum(tape.mul(out.distances, tape.constant(one_hot))), inv_n);

  out.total = out.dce;
  if (config.lambda1 != 0.0) out.total = tape.add(out.total, tape.scale(out.prototype, config.lambda1));
  if (augmented) {
    out.consistency =
        tape.scale(tape.sum(tape.squared_distance(embeddings, *augmented, ad::DistanceMode::rowwise)), inv_n);
    if (config.lambda2 != 0.0) out.total = tape.add(out.total, tape.scale(*out.consistency, config.lambda2));
  }
  return out;
}

}  // namespace posr
