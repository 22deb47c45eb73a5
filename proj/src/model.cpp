#include "posr/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "posr/errors.hpp"
#include "posr/random.hpp"

namespace posr {

void BackboneSpec::validate() const {
  if (in_channels == 0 || channels == 0 || embed_dim == 0)
    throw ConfigError("backbone: channel counts and embedding dim must be positive");
  if (stem_kernel == 0 || block_kernel == 0) throw ConfigError("backbone: kernel sizes must be positive");
  if (block_kernel % 2 == 0) throw ConfigError("backbone: block kernel must be odd to keep 'same' padding symmetric");
  if (stem_stride == 0) throw ConfigError("backbone: stem stride must be positive");
}

FeatureExtractor::FeatureExtractor(BackboneSpec spec, std::vector<Tensor> parameters)
    : spec_(spec), params_(std::move(parameters)) {
  spec_.validate();
  const auto shapes = parameter_shapes();
  if (shapes.size() != params_.size())
    throw ConformanceError("feature extractor: expected " + std::to_string(shapes.size()) + " parameter tensors, got " +
                           std::to_string(params_.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (params_[i].shape() != shapes[i])
      throw ConformanceError("feature extractor: parameter " + parameter_names()[i] + " has shape " +
                             shape_string(params_[i].shape()) + ", expected " + shape_string(shapes[i]));
}

std::vector<std::string> FeatureExtractor::parameter_names() const {
  std::vector<std::string> names{"stem.weight", "stem.bias"};
  for (std::size_t b = 0; b < spec_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    names.insert(names.end(), {p + "conv1.weight", p + "conv1.bias", p + "conv2.weight", p + "conv2.bias"});
  }
  names.push_back("head.weight");
  return names;
}

std::vector<Shape> FeatureExtractor::parameter_shapes() const {
  const auto& s = spec_;
  std::vector<Shape> shapes{{s.channels, s.in_channels, s.stem_kernel}, {s.channels}};
  for (std::size_t b = 0; b < s.blocks; ++b) {
    shapes.push_back({s.channels, s.channels, s.block_kernel});
    shapes.push_back({s.channels});
    shapes.push_back({s.channels, s.channels, s.block_kernel});
    shapes.push_back({s.channels});
  }
  shapes.push_back({s.channels, s.embed_dim});
  return shapes;
}

std::size_t FeatureExtractor::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

FeatureExtractor FeatureExtractor::initialize(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  FeatureExtractor net;
  net.spec_ = spec;
  auto rng = make_stream({seed, 0x6261636b626f6e65ULL});
  const auto shapes = net.parameter_shapes();
  const auto names = net.parameter_names();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Tensor p(shapes[i]);
    const bool is_bias = names[i].ends_with(".bias");
    if (!is_bias) {
      double stddev = 0.0;
      if (p.rank() == 3) {
        stddev = std::sqrt(2.0 / static_cast<double>(p.extent(1) * p.extent(2)));
      } else {
        stddev = std::sqrt(2.0 / static_cast<double>(p.extent(0) + p.extent(1)));
      }
      std::normal_distribution<double> normal(0.0, stddev);
      for (double& v : p.data()) v = normal(rng);
    }
    net.params_.push_back(std::move(p));
  }
  return net;
}

std::vector<ad::Var> FeatureExtractor::bind(ad::Tape& tape) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& p : params_) vars.push_back(tape.parameter(p));
  return vars;
}

ad::Var FeatureExtractor::embed(ad::Tape& tape, std::span<const ad::Var> bound, ad::Var x) const {
  const Tensor& input = tape.value(x);
  if (input.rank() != 3 || input.extent(1) != spec_.in_channels)
    throw ConformanceError("embed: input must be [B, " + std::to_string(spec_.in_channels) + ", L], got " +
                           shape_string(input.shape()));
  if (input.extent(2) < spec_.min_length())
    throw ConformanceError("embed: input length " + std::to_string(input.extent(2)) + " is below the receptive field " +
                           std::to_string(spec_.min_length()));
  if (bound.size() != params_.size())
    throw ConformanceError("embed: expected " + std::to_string(params_.size()) + " bound parameters, got " +
                           std::to_string(bound.size()));

  ad::Var h = tape.relu(tape.conv1d(x, bound[0], bound[1], spec_.stem_stride, 0));
  std::size_t at = 2;
  for (std::size_t b = 0; b < spec_.blocks; ++b, at += 4) {
    const ad::Var inner = tape.relu(tape.conv1d_same(h, bound[at], bound[at + 1]));
    const ad::Var branch = tape.conv1d_same(inner, bound[at + 2], bound[at + 3]);
    h = tape.relu(tape.add(h, branch));
  }
  return tape.matmul(tape.global_avg_pool(h), bound[at]);
}

Tensor FeatureExtractor::embed(const Tensor& x) const {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(params_.size());
  for (const Tensor& p : params_) vars.push_back(tape.constant(p));
  return tape.value(embed(tape, vars, tape.constant(x)));
}

PrototypeBank::PrototypeBank(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 2) throw ConformanceError("prototype bank: expected [C, D], got " + shape_string(values_.shape()));
  if (values_.extent(0) < 2) throw ContractError("prototype bank: open-set recognition needs at least 2 known classes");
  if (!values_.all_finite()) throw NumericError("prototype bank: non-finite entries");
}

PrototypeBank PrototypeBank::initialize(std::size_t classes, std::size_t dim, std::uint64_t seed) {
  if (classes < 2) throw ContractError("init_prototypes: open-set recognition needs C >= 2, got " + std::to_string(classes));
  if (dim < 1) throw ContractError("init_prototypes: embedding dim must be >= 1");
  auto rng = make_stream({seed, 0x70726f746fULL});
  std::normal_distribution<double> normal(0.0, 0.1);
  Tensor values({classes, dim});
  for (std::size_t k = 0; k < classes; ++k) {
    for (;;) {
      for (std::size_t d = 0; d < dim; ++d) values[k * dim + d] = normal(rng);
      bool distinct = true;
      for (std::size_t j = 0; j < k && distinct; ++j)
        distinct = !std::equal(values.data().begin() + j * dim, values.data().begin() + (j + 1) * dim,
                               values.data().begin() + k * dim);
      if (distinct) break;
    }
  }
  return PrototypeBank(std::move(values));
}

std::span<const double> PrototypeBank::prototype(std::size_t k) const {
  if (k >= classes()) throw ContractError("prototype bank: class " + std::to_string(k) + " out of range");
  return values_.data().subspan(k * dim(), dim());
}

std::vector<double> distances(std::span<const double> z, const PrototypeBank& bank) {
  if (z.size() != bank.dim())
    throw ConformanceError("distances: embedding has " + std::to_string(z.size()) + " dims, prototypes have " +
                           std::to_string(bank.dim()));
  std::vector<double> out(bank.classes());
  for (std::size_t k = 0; k < bank.classes(); ++k) {
    const auto m = bank.prototype(k);
    double total = 0.0;
    for (std::size_t d = 0; d < z.size(); ++d) {
      const double diff = z[d] - m[d];
      total += diff * diff;
    }
    out[k] = total;
  }
  return out;
}

Tensor iq_batch(std::span<const IqSequence* const> batch) {
  if (batch.empty()) throw ContractError("iq_batch: empty batch");
  const std::size_t len = batch.front()->size();
  Tensor out({batch.size(), 2, len});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const IqSequence& x = *batch[b];
    if (x.size() != len) throw ConformanceError("iq_batch: sequences of different lengths in one batch");
    double* re = out.data().data() + (2 * b) * len;
    double* im = re + len;
    for (std::size_t t = 0; t < len; ++t) {
      re[t] = x[t].real();
      im[t] = x[t].imag();
    }
  }
  return out;
}

Tensor iq_batch(const IqSequence& single) {
  const IqSequence* one[] = {&single};
  return iq_batch(one);
}

}  // namespace posr
