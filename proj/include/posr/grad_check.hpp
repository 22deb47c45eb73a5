#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "posr/tape.hpp"

namespace posr::ad {

/// Builds a scalar loss on the tape from parameter leaves (one per tensor of θ).
using ScalarProgram = std::function<Var(Tape&, std::span<const Var>)>;

struct CoordinateCheck {
  std::size_t tensor = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<CoordinateCheck> coordinates;
  double max_relative_error = 0.0;
  std::size_t worst = 0;  // index into coordinates
  bool passed = true;

  std::vector<CoordinateCheck> failures() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
  /// near-zero gradients from turning round-off into huge ratios.
  double denominator_floor = 1e-6;
};

/// Compares tape gradients against central differences at θ0, coordinate by
/// coordinate.
GradCheckReport grad_check(const ScalarProgram& f, const std::vector<Tensor>& theta0, const GradCheckOptions& options = {});

inline GradCheckReport grad_check(const ScalarProgram& f, const std::vector<Tensor>& theta0, double step, double tol) {
  return grad_check(f, theta0, GradCheckOptions{step, tol});
}

}  // namespace posr::ad
