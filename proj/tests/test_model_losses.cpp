#include <cmath>
#include <random>

#include "doctest.h"
#include "posr/errors.hpp"
#include "posr/grad_check.hpp"
#include "posr/losses.hpp"
#include "posr/model.hpp"

using namespace posr;
using doctest::Approx;

namespace {

BackboneSpec small_spec() {
  BackboneSpec s;
  s.channels = 4;
  s.stem_kernel = 5;
  s.stem_stride = 2;
  s.block_kernel = 3;
  s.blocks = 1;
  s.embed_dim = 3;
  return s;
}

Tensor random_input(std::size_t batch, std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor x({batch, 2, length});
  for (double& v : x.data()) v = n(rng);
  return x;
}

}  // namespace

TEST_CASE("zero parameters embed every input at the origin") {
  const auto spec = small_spec();
  std::vector<Tensor> params;
  for (const auto& shape : FeatureExtractor(FeatureExtractor::initialize(spec, 1)).parameter_shapes())
    params.emplace_back(shape);
  const FeatureExtractor net(spec, params);
  const Tensor z = net.embed(random_input(2, 40, 3));
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("embedding is deterministic and not shift invariant") {
  const auto net = FeatureExtractor::initialize(small_spec(), 11);
  const Tensor x = random_input(1, 40, 5);
  CHECK(net.embed(x) == net.embed(x));
  CHECK(FeatureExtractor::initialize(small_spec(), 11).embed(x) == net.embed(x));

  Tensor shifted({1, 2, 40});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 40; ++t) shifted[c * 40 + (t + 1) % 40] = x[c * 40 + t];
  CHECK(net.embed(shifted) != net.embed(x));
}

TEST_CASE("input shorter than the stem is a conformance error") {
  const auto net = FeatureExtractor::initialize(small_spec(), 1);
  CHECK_THROWS_AS(net.embed(random_input(1, 4, 1)), ConformanceError);
  CHECK_THROWS_AS(net.embed(Tensor({1, 3, 40})), ConformanceError);
}

TEST_CASE("parameters with the wrong shape are rejected") {
  auto params = FeatureExtractor::initialize(small_spec(), 1).parameters();
  params.back() = Tensor({4, 4});
  CHECK_THROWS_AS(FeatureExtractor(small_spec(), params), ConformanceError);
}

TEST_CASE("distances to prototypes") {
  const PrototypeBank bank(Tensor({3, 2}, {0.0, 0.0, 3.0, 4.0, 1.0, 1.0}));
  CHECK(distances(std::vector{3.0, 4.0}, bank) == std::vector<double>{25.0, 0.0, 13.0});
  CHECK(distances(std::vector{1.0, 0.0}, bank)[0] == 1.0);
  CHECK_THROWS_AS(distances(std::vector{1.0}, bank), ConformanceError);
}

TEST_CASE("prototype initialisation") {
  CHECK(PrototypeBank::initialize(3, 2, 7).tensor() == PrototypeBank::initialize(3, 2, 7).tensor());
  const auto bank = PrototypeBank::initialize(10, 128, 1);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = i + 1; j < 10; ++j) {
      const auto a = bank.prototype(i);
      const auto b = bank.prototype(j);
      CHECK_FALSE(std::equal(a.begin(), a.end(), b.begin()));
    }
  CHECK_THROWS_AS(PrototypeBank::initialize(1, 8, 1), ContractError);
}

TEST_CASE("distance softmax") {
  const auto equal = distance_softmax(std::vector{2.0, 2.0, 2.0}, 1.0);
  for (double p : equal) CHECK(p == Approx(1.0 / 3.0).epsilon(1e-15));

  const auto two = distance_softmax(std::vector{0.0, std::log(2.0)}, 1.0);
  CHECK(two[0] == Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(two[1] == Approx(1.0 / 3.0).epsilon(1e-15));

  const auto far = distance_softmax(std::vector{0.0, 1000.0}, 1.0);
  CHECK(far[0] == 1.0);
  CHECK(far[1] >= 0.0);
  CHECK(far[1] < 1e-300);

  CHECK_THROWS_AS(distance_softmax(std::vector<double>{0.0, NAN}, 1.0), NumericError);
}

TEST_CASE("dce loss") {
  CHECK(dce_loss(std::vector{0.5, 0.5}, std::vector{1.0, 0.0}) == Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(dce_loss(std::vector{2.0 / 3.0, 1.0 / 3.0}, std::vector{1.0, 0.0}) ==
        Approx(std::log(1.5)).epsilon(1e-15));

  // With y = p the loss is the entropy of p; for a fixed label no prediction
  // does better (Gibbs).
  const std::vector p{0.5, 0.3, 0.2};
  const double entropy = -(0.5 * std::log(0.5) + 0.3 * std::log(0.3) + 0.2 * std::log(0.2));
  CHECK(dce_loss(p, p) == Approx(entropy).epsilon(1e-15));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> q{u(rng), u(rng), u(rng)};
    const double s = q[0] + q[1] + q[2];
    for (double& v : q) v /= s;
    CHECK(dce_loss(q, p) >= dce_loss(p, p) - 1e-15);
  }

  std::size_t hits = 0;
  CHECK(dce_loss(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}, &hits) == Approx(-std::log(kLogFloor)));
  CHECK(hits == 1);
}

TEST_CASE("prototype and consistency losses") {
  CHECK(prototype_loss(std::vector{1.0, 2.0}, std::vector{1.0, 2.0}) == 0.0);
  CHECK(prototype_loss(std::vector{3.0, 4.0}, std::vector{0.0, 0.0}) == 25.0);
  CHECK(prototype_loss(std::vector{2.0, -1.0}, std::vector{0.5, 1.0}) * 4.0 ==
        prototype_loss(std::vector{4.0, -2.0}, std::vector{1.0, 2.0}));
  CHECK_THROWS_AS(prototype_loss(std::vector{1.0}, std::vector{1.0, 2.0}), ConformanceError);

  CHECK(consistency_loss(std::vector{0.3, 0.7}, std::vector{0.3, 0.7}) == 0.0);
  CHECK(consistency_loss(std::vector{1.0, 0.0}, std::vector{0.0, 1.0}) == 2.0);
  CHECK(consistency_loss(std::vector{1.5, -2.0}, std::vector{0.25, 3.0}) ==
        consistency_loss(std::vector{0.25, 3.0}, std::vector{1.5, -2.0}));
  CHECK_THROWS_AS(consistency_loss(std::vector{1.0}, std::vector{1.0, 2.0}), ConformanceError);
}

TEST_CASE("total weighs the components") {
  const LossComponents c{1.0, 2.0, 3.0};
  CHECK(c.total(LossConfig{1.0, 0.1, 0.5}) == Approx(2.7).epsilon(1e-15));
  CHECK(c.total(LossConfig{1.0, 0.0, 0.0}) == 1.0);
}

TEST_CASE("batch objective on the tape matches the scalar forms") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  Tensor z({3, 2}), zaug({3, 2}), m({2, 2});
  for (Tensor* t : {&z, &zaug, &m})
    for (double& v : t->data()) v = n(rng);
  const std::vector<std::size_t> labels{0, 1, 1};
  Tensor soft({3, 2}, {0.8, 0.2, 0.1, 0.9, 0.3, 0.7});

  for (const LossConfig cfg : {LossConfig{1.0, 0.1, 0.5}, LossConfig{1.0, 0.0, 0.0}}) {
    ad::Tape tape;
    const auto loss = total_loss(tape, tape.constant(z), tape.constant(m), soft, labels, cfg, tape.constant(zaug));
    double dce = 0.0, proto = 0.0, cons = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::span<const double> zi = z.data().subspan(2 * i, 2);
      const std::span<const double> ai = zaug.data().subspan(2 * i, 2);
      const std::vector<double> d{prototype_loss(zi, m.data().subspan(0, 2)), prototype_loss(zi, m.data().subspan(2, 2))};
      dce += dce_loss(distance_softmax(d, 1.0), soft.data().subspan(2 * i, 2)) / 3.0;
      proto += d[labels[i]] / 3.0;
      cons += consistency_loss(zi, ai) / 3.0;
    }
    CHECK(tape.value(loss.dce).item() == Approx(dce).epsilon(1e-13));
    CHECK(tape.value(loss.prototype).item() == Approx(proto).epsilon(1e-13));
    CHECK(tape.value(*loss.consistency).item() == Approx(cons).epsilon(1e-13));
    const double total = dce + cfg.lambda1 * proto + cfg.lambda2 * cons;
    CHECK(tape.value(loss.total).item() == Approx(total).epsilon(1e-13));
    if (cfg.lambda1 == 0.0) CHECK(tape.value(loss.total).item() == tape.value(loss.dce).item());
  }
}

TEST_CASE("toy two-class objective passes the gradient check") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  std::vector<Tensor> theta{Tensor({2, 3}), Tensor({2, 3}), Tensor({2, 3})};
  for (auto& t : theta)
    for (double& v : t.data()) v = n(rng);
  const Tensor soft({2, 2}, {0.8, 0.2, 0.2, 0.8});
  const std::vector<std::size_t> labels{0, 1};
  const auto report = ad::grad_check(
      [&](ad::Tape& tape, std::span<const ad::Var> p) {
        return total_loss(tape, p[0], p[1], soft, labels, LossConfig{}, p[2]).total;
      },
      theta, 1e-5, 1e-4);
  CHECK(report.passed);
}
