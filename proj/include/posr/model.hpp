#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posr/iq.hpp"
#include "posr/tape.hpp"
#include "posr/tensor.hpp"

namespace posr {

/// Layer layout of the residual 1-D CNN feature extractor:
/// conv(stem) -> relu -> blocks x [conv-relu-conv + skip, relu] -> global average pool -> dense(D).
struct BackboneSpec {
  std::size_t in_channels = 2;
  std::size_t channels = 32;  // stem kernels and residual width
  std::size_t stem_kernel = 15;
  std::size_t stem_stride = 1;
  std::size_t block_kernel = 7;
  std::size_t blocks = 2;
  std::size_t embed_dim = 32;

  void validate() const;
  /// Shortest input the stem accepts.
  std::size_t min_length() const { return stem_kernel; }
  bool operator==(const BackboneSpec&) const = default;
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(BackboneSpec spec, std::vector<Tensor> parameters);

  /// He-normal convolution kernels, zero biases, Glorot-normal head.
  static FeatureExtractor initialize(const BackboneSpec& spec, std::uint64_t seed);

  const BackboneSpec& spec() const noexcept { return spec_; }
  std::vector<Tensor>& parameters() noexcept { return params_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  std::vector<std::string> parameter_names() const;
  std::vector<Shape> parameter_shapes() const;
  std::size_t parameter_count() const;

  /// Puts every parameter on the tape as a differentiable leaf, in parameter order.
  std::vector<ad::Var> bind(ad::Tape& tape) const;

  /// x [B, 2, L] -> embeddings [B, D].
  ad::Var embed(ad::Tape& tape, std::span<const ad::Var> bound, ad::Var x) const;

  /// Tape-free convenience for inference: x [B, 2, L] -> [B, D].
  Tensor embed(const Tensor& x) const;

 private:
  BackboneSpec spec_;
  std::vector<Tensor> params_;
};

/// One learnable prototype per known class, stored as rows of a [C, D] tensor.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  explicit PrototypeBank(Tensor values);

  /// C i.i.d. N(0, 0.1^2) vectors; deterministic per seed.
  static PrototypeBank initialize(std::size_t classes, std::size_t dim, std::uint64_t seed);

  std::size_t classes() const { return values_.extent(0); }
  std::size_t dim() const { return values_.extent(1); }
  std::span<const double> prototype(std::size_t k) const;
  Tensor& tensor() noexcept { return values_; }
  const Tensor& tensor() const noexcept { return values_; }

 private:
  Tensor values_;
};

/// Squared Euclidean distance from z to every prototype.
std::vector<double> distances(std::span<const double> z, const PrototypeBank& bank);

/// Stacks IQ sequences into a [B, 2, L] tensor (channel 0 = I, channel 1 = Q).
Tensor iq_batch(std::span<const IqSequence* const> batch);
Tensor iq_batch(const IqSequence& single);

}  // namespace posr
