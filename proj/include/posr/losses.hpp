#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "posr/tape.hpp"
#include "posr/tensor.hpp"

namespace posr {

/// Weights of the objective  dce + lambda1 * prototype + lambda2 * consistency.
struct LossConfig {
  double gamma = 1.0;    // hardness of the distance-to-probability conversion
  double lambda1 = 0.1;  // prototype loss weight
  double lambda2 = 0.5;  // consistency weight

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

inline constexpr double kLogFloor = 1e-12;

/// Per-sample (or batch-mean) values of the three loss terms.
struct LossComponents {
  double dce = 0.0;
  double prototype = 0.0;
  double consistency = 0.0;

  double total(const LossConfig& config) const;
};

/// p_k = exp(-gamma d_k) / sum_i exp(-gamma d_i), evaluated max-shifted.
std::vector<double> distance_softmax(std::span<const double> d, double gamma);

/// -sum_k y_k log max(p_k, floor). Clamped terms bump *floor_hits when given.
double dce_loss(std::span<const double> p, std::span<const double> soft_label, std::size_t* floor_hits = nullptr);

double prototype_loss(std::span<const double> z, std::span<const double> prototype);
double consistency_loss(std::span<const double> z, std::span<const double> z_augmented);

/// Tape form of distance_softmax over rows of d [N, C].
ad::Var distance_softmax(ad::Tape& tape, ad::Var d, double gamma);

struct BatchLoss {
  ad::Var total;
  ad::Var dce;
  ad::Var prototype;
  std::optional<ad::Var> consistency;
  ad::Var distances;      // [N, C]
  ad::Var probabilities;  // [N, C]
};

/// Batch-mean objective on the tape.
///   embeddings [N, D] of the clean inputs, prototypes [C, D], soft_labels [N, C],
///   labels the hard class of each row, augmented [N, D] embeddings of g(x) when
///   consistency is in play (gradients flow through both branches).
BatchLoss total_loss(ad::Tape& tape, ad::Var embeddings, ad::Var prototypes, const Tensor& soft_labels,
                     std::span<const std::size_t> labels, const LossConfig& config,
                     std::optional<ad::Var> augmented = std::nullopt);

}  // namespace posr
