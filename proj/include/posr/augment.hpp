#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "posr/iq.hpp"

namespace posr {

/// Stochastic augmentation g(x): a phase rotation followed by a random
/// reordering of contiguous segments. Both leave the sample distribution of
/// the sequence unchanged.
struct AugmentSpec {
  struct Rotation {
    bool enabled = true;
    std::vector<double> phases{0.0, 1.5707963267948966, 3.141592653589793, 4.71238898038469};
    bool continuous = false;  // uniform phase in [0, 2*pi) instead of the phase set
    bool operator==(const Rotation&) const = default;
  } rotation;
  struct Permutation {
    bool enabled = true;
    std::size_t min_segments = 4;
    std::size_t max_segments = 8;
    bool operator==(const Permutation&) const = default;
  } permutation;

  /// Validates against the sequence length the augmentation will see.
  void validate(std::size_t length) const;
  bool any_enabled() const { return rotation.enabled || permutation.enabled; }

  static AugmentSpec disabled();
  bool operator==(const AugmentSpec&) const = default;
};

/// Multiplies each sample by e^{j phase}. Multiples of pi/2 are applied as
/// exact sign flips and swaps.
IqSequence rotate(const IqSequence& x, double phase);

/// Splits x into n contiguous near-equal segments (the first L mod n are one
/// sample longer) and concatenates them in the given order.
IqSequence permute_segments(const IqSequence& x, std::size_t n, const std::vector<std::size_t>& order);

/// Inverse of permute_segments for the same (L, n, order).
IqSequence restore_segments(const IqSequence& y, std::size_t n, const std::vector<std::size_t>& order);

/// Uniformly random segment order drawn from seed.
std::vector<std::size_t> draw_segment_order(std::size_t n, std::uint64_t seed);

IqSequence permute(const IqSequence& x, std::size_t n, std::uint64_t seed);

/// Record of the random draws made by apply().
struct AugmentDraw {
  double phase = 0.0;
  std::size_t segments = 1;
  std::vector<std::size_t> order{0};
};

AugmentDraw draw_augmentation(const AugmentSpec& spec, std::uint64_t seed);

/// rotate then permute, deterministic per (x, spec, seed).
IqSequence apply(const IqSequence& x, const AugmentSpec& spec, std::uint64_t seed);

/// sum(I^2 + Q^2) accumulated in sorted order, so the result depends only on
/// the multiset of per-sample powers.
double signal_power(const IqSequence& x);

}  // namespace posr
