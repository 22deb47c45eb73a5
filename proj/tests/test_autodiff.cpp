#include <cmath>
#include <random>

#include "doctest.h"
#include "posr/errors.hpp"
#include "posr/grad_check.hpp"
#include "posr/tape.hpp"

using namespace posr;
using namespace posr::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Reduces any tensor to a scalar with a fixed random weighting so every output
// coordinate feeds the checked gradient.
Var weighted_total(Tape& tape, Var v, std::mt19937_64& rng) {
  const Var w = tape.constant(random_tensor(tape.value(v).shape(), rng, 0.5, 1.5));
  return tape.sum(tape.mul(v, w));
}

}  // namespace

TEST_CASE("conv1d with identity kernel leaves the signal unchanged") {
  Tape tape;
  const Tensor signal({1, 1, 5}, {1.0, -2.0, 3.5, 0.0, 4.0});
  const Var x = tape.constant(signal);
  const Var k = tape.constant(Tensor({1, 1, 1}, {1.0}));
  CHECK(tape.value(tape.conv1d(x, k, 1, 0)) == signal);
}

TEST_CASE("relu and squared distance on hand values") {
  Tape tape;
  const Var a = tape.constant(Tensor::vector({-1.0, 0.0, 2.0}));
  CHECK(tape.value(tape.relu(a)).values() == std::vector<double>{0.0, 0.0, 2.0});

  const Var p = tape.constant(Tensor::vector({3.0, 4.0}));
  const Var o = tape.constant(Tensor::vector({0.0, 0.0}));
  CHECK(tape.value(tape.squared_distance(p, o)).item() == 25.0);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tape tape;
  const Var x = tape.parameter(Tensor::vector({0.0, 1.0, -1.0}));
  const auto grads = tape.backward(tape.sum(tape.relu(x)));
  CHECK(grads[x].values() == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("backward of squared norm is 2x") {
  Tape tape;
  const Var x = tape.parameter(Tensor::vector({1.0, 2.0}));
  const Var zero = tape.constant(Tensor::vector({0.0, 0.0}));
  const auto grads = tape.backward(tape.squared_distance(x, zero));
  CHECK(grads[x].values() == std::vector<double>{2.0, 4.0});
}

TEST_CASE("constant loss yields zero gradients for every parameter") {
  Tape tape;
  const Var x = tape.parameter(Tensor::vector({1.0, 2.0}));
  const Var w = tape.parameter(Tensor({2, 2}, 0.5));
  const Var c = tape.constant(Tensor::scalar(3.0));
  const auto grads = tape.backward(tape.scale(c, 2.0));
  CHECK(grads.size() == 2);
  CHECK(grads[x].values() == std::vector<double>{0.0, 0.0});
  CHECK(grads[w].values() == std::vector<double>(4, 0.0));
}

TEST_CASE("reverse pass of an identity map returns the upstream gradient") {
  Tape tape;
  const Var x = tape.parameter(Tensor::vector({0.3, -0.7, 1.1}));
  const Var id = tape.conv1d(tape.constant(Tensor({1, 1, 3}, {0.3, -0.7, 1.1})), tape.constant(Tensor({1, 1, 1}, {1.0})));
  (void)id;
  const Var same = tape.scale(x, 1.0);
  const Var up = tape.constant(Tensor::vector({2.0, -3.0, 5.0}));
  const auto grads = tape.backward(tape.sum(tape.mul(same, up)));
  CHECK(grads[x].values() == std::vector<double>{2.0, -3.0, 5.0});
}

TEST_CASE("non-scalar loss is a contract error") {
  Tape tape;
  const Var x = tape.parameter(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(tape.relu(x)), ContractError);
}

TEST_CASE("shape mismatches name the op and the dims") {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({2, 2}));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), ConformanceError);
  CHECK_THROWS_AS(tape.add(a, b), ConformanceError);
  const Var x = tape.constant(Tensor({1, 1, 4}));
  const Var k = tape.constant(Tensor({1, 1, 5}));
  CHECK_THROWS_WITH_AS(tape.conv1d(x, k), doctest::Contains("kernel length 5"), ConformanceError);
}

TEST_CASE("scalar-tensor broadcasting is the only broadcast") {
  Tape tape;
  const Var s = tape.parameter(Tensor::scalar(2.0));
  const Var v = tape.parameter(Tensor::vector({1.0, 2.0, 3.0}));
  const Var prod = tape.mul(s, v);
  CHECK(tape.value(prod).values() == std::vector<double>{2.0, 4.0, 6.0});
  const auto grads = tape.backward(tape.sum(prod));
  CHECK(grads[s].item() == 6.0);
  CHECK(grads[v].values() == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("non-finite inputs surface as numeric errors") {
  Tape tape;
  CHECK_THROWS_AS(tape.parameter(Tensor::vector({1.0, std::nan("")})), NumericError);
  const Var big = tape.constant(Tensor::vector({1e308}));
  CHECK_THROWS_AS(tape.scale(big, 10.0), NumericError);
}

TEST_CASE("log clamps at the floor and counts the hits") {
  Tape tape;
  const Var p = tape.parameter(Tensor::vector({0.0, 0.5}));
  const Var l = tape.log(p);
  CHECK(tape.log_floor_hits() == 1);
  CHECK(tape.value(l)[0] == doctest::Approx(std::log(1e-12)));
  const auto grads = tape.backward(tape.sum(l));
  CHECK(grads[p][0] == 0.0);
  CHECK(grads[p][1] == doctest::Approx(2.0));
}

TEST_CASE("log-sum-exp and softmax use the max-shifted form") {
  Tape tape;
  const Var x = tape.constant(Tensor::vector({0.0, -1000.0}));
  CHECK(tape.value(tape.log_sum_exp(x)).item() == doctest::Approx(0.0));
  const Tensor p = tape.value(tape.softmax(x));
  CHECK(p[0] == doctest::Approx(1.0));
  CHECK(p[1] >= 0.0);
}

TEST_CASE("forward evaluation is bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tape tape;
    const Var x = tape.constant(random_tensor({2, 2, 32}, rng));
    const Var w = tape.parameter(random_tensor({4, 2, 5}, rng));
    const Var b = tape.parameter(random_tensor({4}, rng));
    const Var h = tape.global_avg_pool(tape.relu(tape.conv1d_same(x, w, b)));
    return tape.value(h);
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check on x^2 at 3") {
  const ScalarProgram square = [](Tape& tape, std::span<const Var> p) { return tape.sum(tape.mul(p[0], p[0])); };
  const auto report = grad_check(square, {Tensor::scalar(3.0)}, 1e-5, 1e-4);
  REQUIRE(report.coordinates.size() == 1);
  CHECK(report.coordinates[0].analytic == 6.0);
  CHECK(report.coordinates[0].numeric == doctest::Approx(6.0).epsilon(1e-8));
  CHECK(report.passed);
}

TEST_CASE("grad_check rejects non-positive steps and non-finite objectives") {
  const ScalarProgram f = [](Tape& tape, std::span<const Var> p) { return tape.sum(p[0]); };
  CHECK_THROWS_AS(grad_check(f, {Tensor::scalar(1.0)}, 0.0, 1e-4), ContractError);
  const ScalarProgram blowup = [](Tape& tape, std::span<const Var> p) {
    // exp(log-sum-exp) overflows near 710
    return tape.scale(tape.log_sum_exp(p[0]), 1e308);
  };
  CHECK_THROWS_AS(grad_check(blowup, {Tensor::vector({800.0, 0.0})}, 1e-5, 1e-4), NumericError);
}

TEST_CASE("grad_check flags a corrupted adjoint on exactly that coordinate") {
  // y = sum(x_i^2) with a custom op whose backward is wrong for coordinate 2.
  const ScalarProgram f = [](Tape& tape, std::span<const Var> p) {
    const Tensor& x = tape.value(p[0]);
    Tensor y = x;
    for (double& v : y.data()) v = v * v;
    const Var sq = tape.custom(p, y, [x](const Tensor& up, std::span<Tensor* const> grads) {
      for (std::size_t i = 0; i < x.size(); ++i) (*grads[0])[i] += up[i] * 2.0 * x[i] * (i == 2 ? 1.5 : 1.0);
    });
    return tape.sum(sq);
  };
  const auto report = grad_check(f, {Tensor::vector({0.5, -1.0, 2.0, 0.25})}, 1e-5, 1e-4);
  CHECK_FALSE(report.passed);
  const auto failures = report.failures();
  REQUIRE(failures.size() == 1);
  CHECK(failures[0].index == 2);
  CHECK(report.worst == 2);
}

TEST_CASE("every primitive matches central differences over 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    CAPTURE(seed);
    std::mt19937_64 rng(seed);
    const std::uint64_t weight_seed = rng();
    auto check = [&](const char* name, std::vector<Tensor> theta, auto body) {
      CAPTURE(name);
      const ScalarProgram f = [&](Tape& tape, std::span<const Var> p) {
        std::mt19937_64 wr(weight_seed);
        return weighted_total(tape, body(tape, p), wr);
      };
      const auto report = grad_check(f, theta, 1e-5, 1e-4);
      CHECK_MESSAGE(report.passed, "max rel err " << report.max_relative_error);
    };

    check("add", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.add(p[0], p[1]); });
    check("sub", {random_tensor({4}, rng), random_tensor({1}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.sub(p[0], p[1]); });
    check("scale", {random_tensor({3}, rng)}, [](Tape& t, std::span<const Var> p) { return t.scale(p[0], -2.5); });
    check("mul", {random_tensor({2, 2}, rng), random_tensor({2, 2}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.mul(p[0], p[1]); });
    check("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.matmul(p[0], p[1]); });
    check("conv1d", {random_tensor({2, 2, 9}, rng), random_tensor({3, 2, 3}, rng), random_tensor({3}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.conv1d(p[0], p[1], p[2], 1, 1); });
    check("conv1d-strided", {random_tensor({1, 2, 11}, rng), random_tensor({2, 2, 4}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.conv1d(p[0], p[1], 3, 2); });
    check("relu", {random_tensor({6}, rng)}, [](Tape& t, std::span<const Var> p) { return t.relu(p[0]); });
    check("global_avg_pool", {random_tensor({2, 3, 5}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.global_avg_pool(p[0]); });
    check("squared_distance", {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.squared_distance(p[0], p[1]); });
    check("squared_distance-rowwise", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
          [](Tape& t, std::span<const Var> p) { return t.squared_distance(p[0], p[1], DistanceMode::rowwise); });
    check("log_sum_exp", {random_tensor({2, 5}, rng, -3.0, 3.0)},
          [](Tape& t, std::span<const Var> p) { return t.log_sum_exp(p[0]); });
    check("log", {random_tensor({4}, rng, 0.1, 2.0)}, [](Tape& t, std::span<const Var> p) { return t.log(p[0]); });
    check("softmax", {random_tensor({2, 4}, rng, -2.0, 2.0)},
          [](Tape& t, std::span<const Var> p) { return t.softmax(p[0]); });
    check("sum", {random_tensor({2, 3}, rng)}, [](Tape& t, std::span<const Var> p) { return t.sum(p[0]); });
  }
}

TEST_CASE("conv1d + relu + dense composite matches finite differences") {
  std::mt19937_64 rng(2024);
  const Tensor x = random_tensor({2, 2, 24}, rng);
  const ScalarProgram f = [&](Tape& tape, std::span<const Var> p) {
    const Var in = tape.constant(x);
    const Var h = tape.relu(tape.conv1d(in, p[0], p[1], 2, 0));
    const Var pooled = tape.global_avg_pool(h);
    const Var out = tape.matmul(pooled, p[2]);
    return tape.sum(tape.mul(out, out));
  };
  const auto report = grad_check(f, {random_tensor({4, 2, 5}, rng), random_tensor({4}, rng), random_tensor({4, 3}, rng)},
                                 1e-5, 1e-4);
  CHECK_MESSAGE(report.passed, "max rel err " << report.max_relative_error);
}
