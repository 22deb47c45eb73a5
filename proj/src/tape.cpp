#include "posr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "posr/errors.hpp"

namespace posr::ad {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::scale: return "scale";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv1d: return "conv1d";
    case OpKind::relu: return "relu";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::squared_distance: return "squared_distance";
    case OpKind::log_sum_exp: return "log_sum_exp";
    case OpKind::log: return "log";
    case OpKind::softmax: return "softmax";
    case OpKind::sum: return "sum";
    case OpKind::custom: return "custom";
  }
  return "?";
}

const Tensor& Gradients::operator[](Var v) const {
  auto it = by_node_.find(v.id);
  if (it == by_node_.end()) throw ContractError("gradients: node " + std::to_string(v.id) + " is not a parameter");
  return it->second;
}

namespace {

[[noreturn]] void mismatch(OpKind kind, const std::string& detail) {
  throw ConformanceError(std::string(op_name(kind)) + ": " + detail);
}

void require_rank(OpKind kind, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    mismatch(kind, std::string(what) + " must have rank " + std::to_string(rank) + ", got shape " +
                       shape_string(t.shape()));
}

// Elementwise binary with scalar-tensor broadcast only.
enum class Broadcast { none, left_scalar, right_scalar };

Broadcast broadcast_of(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (a.size() == 1) return Broadcast::left_scalar;
  if (b.size() == 1) return Broadcast::right_scalar;
  mismatch(kind, "shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) + " differ");
}

template <typename F>
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b, F f) {
  switch (broadcast_of(kind, a, b)) {
    case Broadcast::none: {
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
      return out;
    }
    case Broadcast::left_scalar: {
      Tensor out(b.shape());
      for (std::size_t i = 0; i < b.size(); ++i) out[i] = f(a[0], b[i]);
      return out;
    }
    case Broadcast::right_scalar: {
      Tensor out(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[0]);
      return out;
    }
  }
  return {};
}

// Accumulates d(out)/d(operand) * upstream into grad, reducing if operand was broadcast.
template <typename F>
void accumulate_binary(Tensor& grad, const Tensor& upstream, bool reduce_to_scalar, F local) {
  if (reduce_to_scalar) {
    double total = 0.0;
    for (std::size_t i = 0; i < upstream.size(); ++i) total += upstream[i] * local(i);
    grad[0] += total;
  } else {
    for (std::size_t i = 0; i < upstream.size(); ++i) grad[i] += upstream[i] * local(i);
  }
}

struct ConvGeometry {
  std::size_t batch, in_channels, length, out_channels, kernel, stride, padding, out_length;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const OpAttributes& attrs) {
  require_rank(OpKind::conv1d, x, 3, "input");
  require_rank(OpKind::conv1d, w, 3, "kernel");
  ConvGeometry g{};
  g.batch = x.extent(0);
  g.in_channels = x.extent(1);
  g.length = x.extent(2);
  g.out_channels = w.extent(0);
  g.kernel = w.extent(2);
  g.stride = attrs.stride;
  g.padding = attrs.same_padding ? (g.kernel - 1) / 2 : attrs.padding;
  if (w.extent(1) != g.in_channels)
    mismatch(OpKind::conv1d, "kernel expects " + std::to_string(w.extent(1)) + " input channels, input has " +
                                 std::to_string(g.in_channels));
  if (g.stride == 0) mismatch(OpKind::conv1d, "stride must be positive");
  if (g.kernel > g.length + 2 * g.padding)
    mismatch(OpKind::conv1d, "kernel length " + std::to_string(g.kernel) + " exceeds padded signal length " +
                                 std::to_string(g.length + 2 * g.padding));
  g.out_length = (g.length + 2 * g.padding - g.kernel) / g.stride + 1;
  return g;
}

// Output index range [lo, hi) whose tap at offset stays inside the signal.
std::pair<std::size_t, std::size_t> valid_range(const ConvGeometry& g, std::ptrdiff_t offset) {
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  const auto len = static_cast<std::ptrdiff_t>(g.length);
  std::ptrdiff_t lo = offset < 0 ? (-offset + s - 1) / s : 0;
  std::ptrdiff_t last = len - 1 - offset;
  std::ptrdiff_t hi = last < 0 ? 0 : last / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(g.out_length));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Unrolls one batch item into cols [Cin * K, ld]; taps outside the signal are zero.
void im2col(const double* x, const ConvGeometry& g, std::size_t ld, std::vector<double>& cols) {
  cols.resize(g.in_channels * g.kernel * ld);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xrow = x + c * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      double* dst = cols.data() + (c * g.kernel + k) * ld;
      const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(g.padding);
      const auto [lo, hi] = valid_range(g, offset);
      std::fill(dst, dst + lo, 0.0);
      if (g.stride == 1)
        std::copy(xrow + static_cast<std::ptrdiff_t>(lo) + offset, xrow + static_cast<std::ptrdiff_t>(hi) + offset, dst + lo);
      else
        for (std::size_t t = lo; t < hi; ++t) dst[t] = xrow[static_cast<std::ptrdiff_t>(t * g.stride) + offset];
      std::fill(dst + hi, dst + ld, 0.0);
    }
  }
}

// Same taps laid out transposed: [Lout, Cin * K].
void im2col_transposed(const double* x, const ConvGeometry& g, std::vector<double>& cols) {
  const std::size_t rows = g.in_channels * g.kernel;
  cols.assign(g.out_length * rows, 0.0);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xrow = x + c * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const std::size_t j = c * g.kernel + k;
      const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(g.padding);
      const auto [lo, hi] = valid_range(g, offset);
      for (std::size_t t = lo; t < hi; ++t) cols[t * rows + j] = xrow[static_cast<std::ptrdiff_t>(t * g.stride) + offset];
    }
  }
}

void col2im(const std::vector<double>& cols, const ConvGeometry& g, std::size_t ld, double* dx) {
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* dxrow = dx + c * g.length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const double* src = cols.data() + (c * g.kernel + k) * ld;
      const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(g.padding);
      const auto [lo, hi] = valid_range(g, offset);
      for (std::size_t t = lo; t < hi; ++t) dxrow[static_cast<std::ptrdiff_t>(t * g.stride) + offset] += src[t];
    }
  }
}

typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }
inline v4d splat(double a) { return v4d{a, a, a, a}; }

// C[M x N] += A[M x K] * B[K x N], row-major with leading dimensions. Columns
// are processed in panels of 8 with 4 x 8 register tiles; every C entry sums
// over k in increasing order, so results do not depend on the tiling.
void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
          std::size_t ldb, double* C, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 8 <= N; j += 8) {
    std::size_t i = 0;
    for (; i + 4 <= M; i += 4) {
      double* c0 = C + i * ldc + j;
      double* c1 = c0 + ldc;
      double* c2 = c1 + ldc;
      double* c3 = c2 + ldc;
      v4d r00 = load4(c0), r01 = load4(c0 + 4), r10 = load4(c1), r11 = load4(c1 + 4);
      v4d r20 = load4(c2), r21 = load4(c2 + 4), r30 = load4(c3), r31 = load4(c3 + 4);
      const double* a0 = A + i * lda;
      const double* a1 = a0 + lda;
      const double* a2 = a1 + lda;
      const double* a3 = a2 + lda;
      for (std::size_t k = 0; k < K; ++k) {
        const v4d b0 = load4(B + k * ldb + j), b1 = load4(B + k * ldb + j + 4);
        const v4d x0 = splat(a0[k]), x1 = splat(a1[k]), x2 = splat(a2[k]), x3 = splat(a3[k]);
        r00 += x0 * b0;
        r01 += x0 * b1;
        r10 += x1 * b0;
        r11 += x1 * b1;
        r20 += x2 * b0;
        r21 += x2 * b1;
        r30 += x3 * b0;
        r31 += x3 * b1;
      }
      store4(c0, r00), store4(c0 + 4, r01), store4(c1, r10), store4(c1 + 4, r11);
      store4(c2, r20), store4(c2 + 4, r21), store4(c3, r30), store4(c3 + 4, r31);
    }
    for (; i < M; ++i) {
      double* c = C + i * ldc + j;
      v4d r0 = load4(c), r1 = load4(c + 4);
      for (std::size_t k = 0; k < K; ++k) {
        const v4d x = splat(A[i * lda + k]);
        r0 += x * load4(B + k * ldb + j);
        r1 += x * load4(B + k * ldb + j + 4);
      }
      store4(c, r0), store4(c + 4, r1);
    }
  }
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t jj = j; jj < N; ++jj) {
      double acc = C[i * ldc + jj];
      for (std::size_t k = 0; k < K; ++k) acc += A[i * lda + k] * B[k * ldb + jj];
      C[i * ldc + jj] = acc;
    }
}

std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  return t;
}

// Output length rounded up to whole 8-column panels.
std::size_t padded(std::size_t n) { return (n + 7) / 8 * 8; }

Tensor conv1d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, const ConvGeometry& g) {
  Tensor out({g.batch, g.out_channels, g.out_length});
  const std::size_t rows = g.in_channels * g.kernel;
  const std::size_t n = g.out_length;
  const std::size_t ld = padded(n);
  std::vector<double> cols, acc(g.out_channels * ld);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(x.data().data() + b * g.in_channels * g.length, g, ld, cols);
    for (std::size_t o = 0; o < g.out_channels; ++o)
      std::fill(acc.begin() + o * ld, acc.begin() + (o + 1) * ld, bias ? (*bias)[o] : 0.0);
    gemm(g.out_channels, ld, rows, w.data().data(), rows, cols.data(), ld, acc.data(), ld);
    double* ob = out.data().data() + b * g.out_channels * n;
    for (std::size_t o = 0; o < g.out_channels; ++o) std::copy_n(acc.begin() + o * ld, n, ob + o * n);
  }
  return out;
}

void conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& upstream, const ConvGeometry& g, Tensor* dx,
                     Tensor* dw, Tensor* db) {
  const double* gd = upstream.data().data();
  const std::size_t rows = g.in_channels * g.kernel;
  const std::size_t n = g.out_length;
  const std::size_t ld = padded(n);
  const std::vector<double> wt = dx ? transpose(w.data().data(), g.out_channels, rows) : std::vector<double>{};
  std::vector<double> cols, dcols, gpad(dx ? g.out_channels * ld : 0, 0.0);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* gb = gd + b * g.out_channels * n;
    if (db) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        double total = 0.0;
        for (std::size_t t = 0; t < n; ++t) total += gb[o * n + t];
        (*db)[o] += total;
      }
    }
    if (dw) {
      im2col_transposed(x.data().data() + b * g.in_channels * g.length, g, cols);
      gemm(g.out_channels, rows, n, gb, n, cols.data(), rows, dw->data().data(), rows);
    }
    if (dx) {
      for (std::size_t o = 0; o < g.out_channels; ++o) std::copy_n(gb + o * n, n, gpad.begin() + o * ld);
      dcols.assign(rows * ld, 0.0);
      gemm(rows, ld, g.out_channels, wt.data(), g.out_channels, gpad.data(), ld, dcols.data(), ld);
      col2im(dcols, g, ld, dx->data().data() + b * g.in_channels * g.length);
    }
  }
}

// Views a rank-1 or rank-2 tensor as rows x cols.
std::pair<std::size_t, std::size_t> as_matrix(OpKind kind, const Tensor& t) {
  if (t.rank() == 1) return {1, t.extent(0)};
  if (t.rank() == 2) return {t.extent(0), t.extent(1)};
  mismatch(kind, "expects rank 1 or 2, got shape " + shape_string(t.shape()));
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("tape: reference " + std::to_string(v.id) + " is not on this tape");
  return nodes_[v.id];
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite value");
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor value) {
  if (!value.all_finite()) throw NumericError("leaf: non-finite parameter value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_parameter = true;
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  OpAttributes attrs;
  attrs.factor = factor;
  return record(OpKind::scale, {a}, attrs);
}

Var Tape::conv1d(Var x, Var kernel, std::size_t stride, std::size_t padding) {
  OpAttributes attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  return record(OpKind::conv1d, {x, kernel}, attrs);
}

Var Tape::conv1d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  OpAttributes attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  return record(OpKind::conv1d, {x, kernel, bias}, attrs);
}

Var Tape::conv1d_same(Var x, Var kernel, Var bias) {
  OpAttributes attrs;
  attrs.same_padding = true;
  return record(OpKind::conv1d, {x, kernel, bias}, attrs);
}

Var Tape::squared_distance(Var a, Var b, DistanceMode mode) {
  OpAttributes attrs;
  attrs.distance = mode;
  return record(OpKind::squared_distance, {a, b}, attrs);
}

Var Tape::log(Var a, double floor) {
  OpAttributes attrs;
  attrs.log_floor = floor;
  return record(OpKind::log, {a}, attrs);
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

OpKind Tape::kind(Var v) const { return node(v).kind; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::record(OpKind kind, std::span<const Var> inputs, const OpAttributes& attrs) {
  if (kind == OpKind::leaf || kind == OpKind::custom)
    throw ContractError(std::string("record: use constant()/parameter()/custom() for ") + std::string(op_name(kind)));
  for (Var v : inputs) node(v);
  Node n;
  n.kind = kind;
  n.attrs = attrs;
  n.value = forward(kind, inputs, n.attrs);
  if (!n.value.all_finite()) throw NumericError(std::string(op_name(kind)) + ": produced a non-finite value");
  for (Var v : inputs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  return push(std::move(n));
}

Var Tape::custom(std::span<const Var> inputs, Tensor value, CustomBackward backward) {
  if (!value.all_finite()) throw NumericError("custom: produced a non-finite value");
  Node n;
  n.kind = OpKind::custom;
  n.value = std::move(value);
  n.custom_backward = std::move(backward);
  for (Var v : inputs) {
    node(v);
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  return push(std::move(n));
}

Tensor Tape::forward(OpKind kind, std::span<const Var> inputs, OpAttributes& attrs) {
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi)
      mismatch(kind, "expects " + std::to_string(lo) + (lo == hi ? "" : ".." + std::to_string(hi)) + " inputs, got " +
                         std::to_string(inputs.size()));
  };
  auto in = [&](std::size_t i) -> const Tensor& { return nodes_[inputs[i].id].value; };

  switch (kind) {
    case OpKind::add:
      arity(2, 2);
      return elementwise(kind, in(0), in(1), [](double a, double b) { return a + b; });
    case OpKind::sub:
      arity(2, 2);
      return elementwise(kind, in(0), in(1), [](double a, double b) { return a - b; });
    case OpKind::mul:
      arity(2, 2);
      return elementwise(kind, in(0), in(1), [](double a, double b) { return a * b; });
    case OpKind::scale: {
      arity(1, 1);
      Tensor out = in(0);
      for (double& v : out.data()) v *= attrs.factor;
      return out;
    }
    case OpKind::matmul: {
      arity(2, 2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      require_rank(kind, a, 2, "left operand");
      require_rank(kind, b, 2, "right operand");
      const std::size_t n = a.extent(0), inner = a.extent(1), m = b.extent(1);
      if (b.extent(0) != inner)
        mismatch(kind, "inner dimensions differ: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
      Tensor out({n, m});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < inner; ++k) {
          const double aik = a[i * inner + k];
          for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aik * b[k * m + j];
        }
      return out;
    }
    case OpKind::conv1d: {
      arity(2, 3);
      const ConvGeometry g = conv_geometry(in(0), in(1), attrs);
      const Tensor* bias = nullptr;
      if (inputs.size() == 3) {
        bias = &in(2);
        if (bias->rank() != 1 || bias->extent(0) != g.out_channels)
          mismatch(kind, "bias shape " + shape_string(bias->shape()) + " does not match " +
                             std::to_string(g.out_channels) + " output channels");
      }
      return conv1d_forward(in(0), in(1), bias, g);
    }
    case OpKind::relu: {
      arity(1, 1);
      Tensor out = in(0);
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case OpKind::global_avg_pool: {
      arity(1, 1);
      const Tensor& x = in(0);
      require_rank(kind, x, 3, "input");
      const std::size_t rows = x.extent(0) * x.extent(1), len = x.extent(2);
      Tensor out({x.extent(0), x.extent(1)});
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t t = 0; t < len; ++t) total += x[r * len + t];
        out[r] = total / static_cast<double>(len);
      }
      return out;
    }
    case OpKind::squared_distance: {
      arity(2, 2);
      const auto [na, da] = as_matrix(kind, in(0));
      const auto [nb, db] = as_matrix(kind, in(1));
      if (da != db) mismatch(kind, "embedding dims differ: " + std::to_string(da) + " vs " + std::to_string(db));
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (attrs.distance == DistanceMode::rowwise) {
        if (na != nb) mismatch(kind, "rowwise mode needs equal row counts, got " + std::to_string(na) + " and " + std::to_string(nb));
        Tensor out({na});
        for (std::size_t i = 0; i < na; ++i) {
          double total = 0.0;
          for (std::size_t d = 0; d < da; ++d) {
            const double diff = a[i * da + d] - b[i * da + d];
            total += diff * diff;
          }
          out[i] = total;
        }
        return out;
      }
      Tensor out = (in(0).rank() == 1 && in(1).rank() == 1) ? Tensor({1}) : Tensor({na, nb});
      for (std::size_t i = 0; i < na; ++i)
        for (std::size_t j = 0; j < nb; ++j) {
          double total = 0.0;
          for (std::size_t d = 0; d < da; ++d) {
            const double diff = a[i * da + d] - b[j * da + d];
            total += diff * diff;
          }
          out[i * nb + j] = total;
        }
      return out;
    }
    case OpKind::log_sum_exp: {
      arity(1, 1);
      const auto [rows, cols] = as_matrix(kind, in(0));
      const Tensor& x = in(0);
      Tensor out({rows});
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * cols;
        const double peak = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += std::exp(row[c] - peak);
        out[r] = peak + std::log(total);
      }
      return out;
    }
    case OpKind::softmax: {
      arity(1, 1);
      const auto [rows, cols] = as_matrix(kind, in(0));
      Tensor out = in(0);
      for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data().data() + r * cols;
        const double peak = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          row[c] = std::exp(row[c] - peak);
          total += row[c];
        }
        for (std::size_t c = 0; c < cols; ++c) row[c] /= total;
      }
      return out;
    }
    case OpKind::log: {
      arity(1, 1);
      Tensor out = in(0);
      for (double& v : out.data()) {
        if (v < 0.0) throw NumericError("log: negative input " + std::to_string(v));
        if (v < attrs.log_floor) {
          ++log_floor_hits_;
          v = attrs.log_floor;
        }
        v = std::log(v);
      }
      return out;
    }
    case OpKind::sum: {
      arity(1, 1);
      double total = 0.0;
      for (double v : in(0).data()) total += v;
      return Tensor::scalar(total);
    }
    case OpKind::leaf:
    case OpKind::custom:
      break;
  }
  throw ContractError("record: unsupported op");
}

Gradients Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(root.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  for (std::size_t i = 0; i <= loss.id; ++i)
    if (nodes_[i].requires_grad) nodes_[i].grad = Tensor(nodes_[i].value.shape());
  if (nodes_[loss.id].requires_grad) nodes_[loss.id].grad[0] = 1.0;

  for (std::size_t i = loss.id + 1; i-- > 0;)
    if (nodes_[i].requires_grad && nodes_[i].kind != OpKind::leaf) propagate(i);

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.is_parameter) continue;
    out.by_node_.emplace(i, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

void Tape::propagate(std::size_t index) {
  Node& n = nodes_[index];
  const Tensor& g = n.grad;
  auto input = [&](std::size_t i) -> Node& { return nodes_[n.inputs[i]]; };
  auto target = [&](std::size_t i) -> Tensor* {
    Node& in = input(i);
    return in.requires_grad ? &in.grad : nullptr;
  };

  switch (n.kind) {
    case OpKind::add:
    case OpKind::sub: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      const double sign = n.kind == OpKind::add ? 1.0 : -1.0;
      if (Tensor* ga = target(0)) accumulate_binary(*ga, g, a.size() == 1 && b.size() != 1, [](std::size_t) { return 1.0; });
      if (Tensor* gb = target(1))
        accumulate_binary(*gb, g, b.size() == 1 && a.size() != 1, [sign](std::size_t) { return sign; });
      break;
    }
    case OpKind::mul: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      const bool a_scalar = a.size() == 1 && b.size() != 1;
      const bool b_scalar = b.size() == 1 && a.size() != 1;
      if (Tensor* ga = target(0))
        accumulate_binary(*ga, g, a_scalar, [&](std::size_t i) { return b_scalar ? b[0] : b[i]; });
      if (Tensor* gb = target(1))
        accumulate_binary(*gb, g, b_scalar, [&](std::size_t i) { return a_scalar ? a[0] : a[i]; });
      break;
    }
    case OpKind::scale: {
      if (Tensor* ga = target(0))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.attrs.factor * g[i];
      break;
    }
    case OpKind::matmul: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      const std::size_t rows = a.extent(0), inner = a.extent(1), cols = b.extent(1);
      if (Tensor* ga = target(0))
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < inner; ++k) {
            double total = 0.0;
            for (std::size_t j = 0; j < cols; ++j) total += g[i * cols + j] * b[k * cols + j];
            (*ga)[i * inner + k] += total;
          }
      if (Tensor* gb = target(1))
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t k = 0; k < inner; ++k) {
            const double aik = a[i * inner + k];
            for (std::size_t j = 0; j < cols; ++j) (*gb)[k * cols + j] += aik * g[i * cols + j];
          }
      break;
    }
    case OpKind::conv1d: {
      const Tensor& x = input(0).value;
      const Tensor& w = input(1).value;
      const ConvGeometry geo = conv_geometry(x, w, n.attrs);
      Tensor* gb = n.inputs.size() == 3 ? target(2) : nullptr;
      conv1d_backward(x, w, g, geo, target(0), target(1), gb);
      break;
    }
    case OpKind::relu: {
      const Tensor& x = input(0).value;
      if (Tensor* gx = target(0))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) (*gx)[i] += g[i];
      break;
    }
    case OpKind::global_avg_pool: {
      const Tensor& x = input(0).value;
      if (Tensor* gx = target(0)) {
        const std::size_t rows = x.extent(0) * x.extent(1), len = x.extent(2);
        const double inv = 1.0 / static_cast<double>(len);
        for (std::size_t r = 0; r < rows; ++r) {
          const double share = g[r] * inv;
          for (std::size_t t = 0; t < len; ++t) (*gx)[r * len + t] += share;
        }
      }
      break;
    }
    case OpKind::squared_distance: {
      const Tensor& a = input(0).value;
      const Tensor& b = input(1).value;
      const auto [na, dim] = as_matrix(OpKind::squared_distance, a);
      const auto nb = as_matrix(OpKind::squared_distance, b).first;
      Tensor* ga = target(0);
      Tensor* gb = target(1);
      auto pair_grad = [&](std::size_t i, std::size_t j, double up) {
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = 2.0 * up * (a[i * dim + d] - b[j * dim + d]);
          if (ga) (*ga)[i * dim + d] += diff;
          if (gb) (*gb)[j * dim + d] -= diff;
        }
      };
      if (n.attrs.distance == DistanceMode::rowwise) {
        for (std::size_t i = 0; i < na; ++i) pair_grad(i, i, g[i]);
      } else {
        for (std::size_t i = 0; i < na; ++i)
          for (std::size_t j = 0; j < nb; ++j) pair_grad(i, j, g[i * nb + j]);
      }
      break;
    }
    case OpKind::log_sum_exp: {
      const Tensor& x = input(0).value;
      if (Tensor* gx = target(0)) {
        const auto [rows, cols] = as_matrix(OpKind::log_sum_exp, x);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            (*gx)[r * cols + c] += g[r] * std::exp(x[r * cols + c] - n.value[r]);
      }
      break;
    }
    case OpKind::softmax: {
      if (Tensor* gx = target(0)) {
        const auto [rows, cols] = as_matrix(OpKind::softmax, n.value);
        const Tensor& p = n.value;
        for (std::size_t r = 0; r < rows; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * p[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += p[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
      break;
    }
    case OpKind::log: {
      const Tensor& x = input(0).value;
      if (Tensor* gx = target(0))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] >= n.attrs.log_floor) (*gx)[i] += g[i] / x[i];
      break;
    }
    case OpKind::sum: {
      if (Tensor* gx = target(0))
        for (double& v : gx->data()) v += g[0];
      break;
    }
    case OpKind::custom: {
      std::vector<Tensor*> grads;
      grads.reserve(n.inputs.size());
      for (std::size_t i = 0; i < n.inputs.size(); ++i) grads.push_back(target(i));
      n.custom_backward(g, grads);
      break;
    }
    case OpKind::leaf:
      break;
  }
}

}  // namespace posr::ad
