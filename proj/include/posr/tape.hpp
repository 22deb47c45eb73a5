#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "posr/tensor.hpp"

namespace posr::ad {

/// Primitive operations a tape can record.
enum class OpKind {
  leaf,
  add,
  sub,
  scale,
  mul,
  matmul,
  conv1d,
  relu,
  global_avg_pool,
  squared_distance,
  log_sum_exp,
  log,
  softmax,
  sum,
  custom,
};

std::string_view op_name(OpKind kind);

enum class DistanceMode {
  pairwise,  // a [N, D], b [K, D] -> [N, K]
  rowwise,   // a [N, D], b [N, D] -> [N]
};

struct OpAttributes {
  double factor = 1.0;  // scale
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool same_padding = false;  // conv1d: pad (K - 1) / 2 on both sides, overrides padding
  DistanceMode distance = DistanceMode::pairwise;
  double log_floor = 1e-12;
};

/// Reference to a node on a particular tape.
struct Var {
  std::size_t id = 0;
  bool operator==(const Var&) const = default;
};

/// Backward rule for a user-supplied operation: receives the upstream gradient
/// and one zero-initialised accumulator per input (null for inputs that do not
/// need a gradient).
using CustomBackward = std::function<void(const Tensor& upstream, std::span<Tensor* const> input_grads)>;

/// Gradients of a scalar loss with respect to every parameter leaf.
class Gradients {
 public:
  const Tensor& operator[](Var v) const;
  bool contains(Var v) const { return by_node_.contains(v.id); }
  std::size_t size() const { return by_node_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> by_node_;
};

/// Reverse-mode record of primitive operations. Nodes are appended in
/// execution order, so every node's inputs precede it; backward walks the
/// record in exact reverse. A tape belongs to one thread at a time.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  Var record(OpKind kind, std::span<const Var> inputs, const OpAttributes& attrs = {});
  Var record(OpKind kind, std::initializer_list<Var> inputs, const OpAttributes& attrs = {}) {
    return record(kind, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
  }
  Var custom(std::span<const Var> inputs, Tensor value, CustomBackward backward);

  Var add(Var a, Var b) { return record(OpKind::add, {a, b}); }
  Var sub(Var a, Var b) { return record(OpKind::sub, {a, b}); }
  Var mul(Var a, Var b) { return record(OpKind::mul, {a, b}); }
  Var scale(Var a, double factor);
  Var matmul(Var a, Var b) { return record(OpKind::matmul, {a, b}); }
  Var conv1d(Var x, Var kernel, std::size_t stride = 1, std::size_t padding = 0);
  Var conv1d(Var x, Var kernel, Var bias, std::size_t stride = 1, std::size_t padding = 0);
  Var conv1d_same(Var x, Var kernel, Var bias);
  Var relu(Var a) { return record(OpKind::relu, {a}); }
  Var global_avg_pool(Var a) { return record(OpKind::global_avg_pool, {a}); }
  Var squared_distance(Var a, Var b, DistanceMode mode = DistanceMode::pairwise);
  Var log_sum_exp(Var a) { return record(OpKind::log_sum_exp, {a}); }
  Var log(Var a, double floor = 1e-12);
  Var softmax(Var a) { return record(OpKind::softmax, {a}); }
  Var sum(Var a) { return record(OpKind::sum, {a}); }

  const Tensor& value(Var v) const;
  /// Accumulated gradient after backward(); zeros if the node was unreachable.
  Tensor grad(Var v) const;
  OpKind kind(Var v) const;
  bool requires_grad(Var v) const;

  /// Runs the reverse sweep from a scalar loss.
  Gradients backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of elements clamped by log() so far.
  std::size_t log_floor_hits() const noexcept { return log_floor_hits_; }

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> inputs;
    OpAttributes attrs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_parameter = false;
    CustomBackward custom_backward;
  };

  const Node& node(Var v) const;
  Var push(Node node);
  Tensor forward(OpKind kind, std::span<const Var> inputs, OpAttributes& attrs);
  void propagate(std::size_t index);

  std::vector<Node> nodes_;
  std::size_t log_floor_hits_ = 0;
};

}  // namespace posr::ad
