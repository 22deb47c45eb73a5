#include "posr/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "posr/errors.hpp"
#include "posr/random.hpp"

namespace posr {

void AugmentSpec::validate(std::size_t length) const {
  if (rotation.enabled && !rotation.continuous && rotation.phases.empty())
    throw ConfigError("augment.rotation.phases must be nonempty when rotation is enabled");
  for (double p : rotation.phases)
    if (!std::isfinite(p)) throw ConfigError("augment.rotation.phases must be finite");
  if (permutation.enabled) {
    if (permutation.min_segments < 1 || permutation.min_segments > permutation.max_segments)
      throw ConfigError("augment.permutation needs 1 <= min_segments <= max_segments");
    if (permutation.max_segments > length / 8)
      throw ConfigError("augment.permutation.max_segments = " + std::to_string(permutation.max_segments) +
                        " exceeds L/8 = " + std::to_string(length / 8));
  }
}

AugmentSpec AugmentSpec::disabled() {
  AugmentSpec spec;
  spec.rotation.enabled = false;
  spec.permutation.enabled = false;
  return spec;
}

IqSequence rotate(const IqSequence& x, double phase) {
  if (!std::isfinite(phase)) throw NumericError("rotate: non-finite phase");
  const double quarter = phase / (std::numbers::pi / 2.0);
  const double nearest = std::round(quarter);
  IqSequence out(x.size());
  if (std::abs(quarter - nearest) < 1e-12) {
    const long turns = ((static_cast<long>(nearest) % 4) + 4) % 4;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const double i = x[t].real(), q = x[t].imag();
      switch (turns) {
        case 0: out[t] = {i, q}; break;
        case 1: out[t] = {-q, i}; break;
        case 2: out[t] = {-i, -q}; break;
        default: out[t] = {q, -i}; break;
      }
    }
    return out;
  }
  const double c = std::cos(phase), s = std::sin(phase);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double i = x[t].real(), q = x[t].imag();
    out[t] = {i * c - q * s, i * s + q * c};
  }
  return out;
}

namespace {

std::vector<std::size_t> segment_starts(std::size_t length, std::size_t n) {
  std::vector<std::size_t> starts(n + 1, 0);
  const std::size_t base = length / n, extra = length % n;
  for (std::size_t s = 0; s < n; ++s) starts[s + 1] = starts[s] + base + (s < extra ? 1 : 0);
  return starts;
}

void check_order(std::size_t length, std::size_t n, const std::vector<std::size_t>& order) {
  if (n < 1 || n > length)
    throw ConformanceError("permute: segment count " + std::to_string(n) + " outside [1, " + std::to_string(length) + "]");
  if (order.size() != n) throw ConformanceError("permute: order has " + std::to_string(order.size()) + " entries, expected " + std::to_string(n));
  std::vector<bool> seen(n, false);
  for (std::size_t s : order) {
    if (s >= n || seen[s]) throw ContractError("permute: order is not a permutation");
    seen[s] = true;
  }
}

}  // namespace

IqSequence permute_segments(const IqSequence& x, std::size_t n, const std::vector<std::size_t>& order) {
  check_order(x.size(), n, order);
  const auto starts = segment_starts(x.size(), n);
  IqSequence out;
  out.reserve(x.size());
  for (std::size_t s : order) out.insert(out.end(), x.begin() + starts[s], x.begin() + starts[s + 1]);
  return out;
}

IqSequence restore_segments(const IqSequence& y, std::size_t n, const std::vector<std::size_t>& order) {
  check_order(y.size(), n, order);
  const auto starts = segment_starts(y.size(), n);
  IqSequence out(y.size());
  std::size_t at = 0;
  for (std::size_t s : order) {
    const std::size_t len = starts[s + 1] - starts[s];
    std::copy(y.begin() + at, y.begin() + at + len, out.begin() + starts[s]);
    at += len;
  }
  return out;
}

std::vector<std::size_t> draw_segment_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream({seed, 0x7065726dULL});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

IqSequence permute(const IqSequence& x, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > x.size())
    throw ConformanceError("permute: segment count " + std::to_string(n) + " outside [1, " + std::to_string(x.size()) + "]");
  return permute_segments(x, n, draw_segment_order(n, seed));
}

AugmentDraw draw_augmentation(const AugmentSpec& spec, std::uint64_t seed) {
  auto rng = make_stream({seed, 0x6175676dULL});
  AugmentDraw draw;
  if (spec.rotation.enabled) {
    if (spec.rotation.continuous) {
      draw.phase = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
    } else {
      draw.phase = spec.rotation.phases[std::uniform_int_distribution<std::size_t>(0, spec.rotation.phases.size() - 1)(rng)];
    }
  }
  if (spec.permutation.enabled) {
    draw.segments = std::uniform_int_distribution<std::size_t>(spec.permutation.min_segments, spec.permutation.max_segments)(rng);
    draw.order = draw_segment_order(draw.segments, rng());
  }
  return draw;
}

IqSequence apply(const IqSequence& x, const AugmentSpec& spec, std::uint64_t seed) {
  const AugmentDraw draw = draw_augmentation(spec, seed);
  IqSequence out = spec.rotation.enabled ? rotate(x, draw.phase) : x;
  if (spec.permutation.enabled) out = permute_segments(out, draw.segments, draw.order);
  return out;
}

double signal_power(const IqSequence& x) {
  std::vector<double> powers(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) powers[t] = x[t].real() * x[t].real() + x[t].imag() * x[t].imag();
  std::sort(powers.begin(), powers.end());
  double total = 0.0;
  for (double p : powers) total += p;
  return total;
}

}  // namespace posr
