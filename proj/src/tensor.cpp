#include "posr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "posr/errors.hpp"

namespace posr {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.empty()) throw ConformanceError("tensor: shape must have at least one axis");
  for (auto e : shape_)
    if (e == 0) throw ConformanceError("tensor: zero extent in shape " + shape_string(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ConformanceError("tensor: shape must have at least one axis");
  for (auto e : shape_)
    if (e == 0) throw ConformanceError("tensor: zero extent in shape " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ConformanceError("tensor: shape " + shape_string(shape_) + " holds " +
                           std::to_string(shape_size(shape_)) + " values, got " +
                           std::to_string(data_.size()));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw ConformanceError("tensor: item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

}  // namespace posr
