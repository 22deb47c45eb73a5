#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "posr/tensor.hpp"

namespace posr {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

/// First/second moment estimates, one pair per parameter tensor, and the step count.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t t = 0;

  static AdamState zeros_like(std::span<Tensor* const> params);
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update; advances state.t before use, so the first call runs with t = 1.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& config);

}  // namespace posr
