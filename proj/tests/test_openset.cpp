#include <cmath>

#include "doctest.h"
#include "posr/errors.hpp"
#include "posr/openset.hpp"

using namespace posr;

namespace {

ThresholdTable table_with_taus(std::vector<double> taus) {
  ThresholdTable t;
  for (double tau : taus) t.classes.push_back({tau, 0.0, tau, 2});
  return t;
}

Decision with_margin(std::size_t best, double margin) {
  Decision d;
  d.best = best;
  d.second = best == 0 ? 1 : 0;
  d.margin = margin;
  return d;
}

}  // namespace

TEST_CASE("margin between the two best scores") {
  auto m = margin_from_distances(std::vector{1.0, 4.0});
  CHECK(m.scores == std::vector<double>{-1.0, -4.0});
  CHECK(m.best == 0);
  CHECK(m.second == 1);
  CHECK(m.margin == 3.0);

  m = margin_from_distances(std::vector{2.0, 2.0, 2.0});
  CHECK(m.margin == 0.0);
  CHECK(m.best == 0);
  CHECK(m.second == 1);

  m = margin_from_distances(std::vector{2.0, 5.0, 9.0});
  CHECK(m.best == 0);
  CHECK(m.second == 1);
  CHECK(m.margin == 3.0);

  m = margin_from_distances(std::vector{9.0, 5.0, 2.0});
  CHECK(m.best == 2);
  CHECK(m.second == 1);
}

TEST_CASE("calibration uses the sample standard deviation") {
  const auto t = threshold_from_scores(std::vector{1.0, 2.0, 3.0}, 1.0);
  CHECK(t.mu == 2.0);
  CHECK(t.sigma == 1.0);
  CHECK(t.tau == 1.0);
  CHECK(t.count == 3);

  for (double kappa : {1.0, 2.5, 10.0}) {
    const auto flat = threshold_from_scores(std::vector{0.1, 0.1, 0.1}, kappa);
    CHECK(flat.sigma == 0.0);
    CHECK(flat.tau == 0.1);
  }
}

TEST_CASE("calibration table per class and pooled") {
  const std::vector<std::vector<double>> scores{{1.0, 2.0, 3.0}, {4.0, 6.0}};
  auto t = calibrate_from_scores(scores, {});
  CHECK(t.tau(0) == 1.0);
  CHECK(t.classes[1].mu == 5.0);
  CHECK(t.classes[1].sigma == std::sqrt(2.0));

  CalibrationOptions pooled;
  pooled.pooled = true;
  t = calibrate_from_scores(scores, pooled);
  CHECK(t.tau(0) == t.tau(1));
  CHECK(t.classes[0].mu == 3.2);
}

TEST_CASE("calibration errors") {
  CHECK_THROWS_AS(calibrate_from_scores({{1.0, 2.0}, {3.0}}, {}), CalibrationError);
  try {
    calibrate_from_scores({{1.0, 2.0}, {3.0}}, {});
  } catch (const CalibrationError& e) {
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
  CalibrationOptions low;
  low.kappa = 0.5;
  CHECK_THROWS_AS(calibrate_from_scores({{1.0, 2.0}, {3.0, 4.0}}, low), ConfigError);
}

TEST_CASE("rejection uses a strict inequality") {
  const auto table = table_with_taus({1.0, 1.0});
  // distances chosen so that the margin is exactly 3, 0.5 and 1.
  auto d = decide_from_distances(std::vector{1.0, 4.0}, table);
  CHECK_FALSE(d.unknown());
  CHECK(d.predicted == 0);
  d = decide_from_distances(std::vector{1.5, 1.0}, table);
  CHECK(d.unknown());
  d = decide_from_distances(std::vector{3.0, 2.0}, table);
  CHECK(d.margin == 1.0);
  CHECK(d.predicted == 1);
  d = decide_from_distances(std::vector{3.0, 2.0}, table_with_taus({1.0, std::nextafter(1.0, 2.0)}));
  CHECK(d.unknown());
}

TEST_CASE("metrics") {
  std::vector<Decision> decisions{with_margin(0, 5.0), with_margin(1, 5.0), with_margin(0, 0.1), with_margin(1, 0.2)};
  decisions[0].predicted = 0;
  decisions[1].predicted = 1;
  const std::vector<Truth> truth{{0}, {1}, {kUnknown}, {kUnknown}};
  const auto m = evaluate(decisions, truth, 2);
  CHECK(*m.known_accuracy == 1.0);
  CHECK(*m.rejection_rate == 1.0);
  CHECK(*m.auroc == 1.0);
  CHECK(m.confusion[2][2] == 2);

  const std::vector<Decision> knowns_only(decisions.begin(), decisions.begin() + 2);
  const std::vector<Truth> known_truth(truth.begin(), truth.begin() + 2);
  const auto k = evaluate(knowns_only, known_truth, 2);
  CHECK_FALSE(k.rejection_rate.has_value());
  CHECK_FALSE(k.auroc.has_value());
  CHECK(k.known_accuracy.has_value());
}

TEST_CASE("auroc counts ties as one half") {
  CHECK(*auroc(std::vector{1.0, 2.0}, std::vector{1.0, 0.0}) == 0.875);
  CHECK(*auroc(std::vector{0.0}, std::vector{1.0}) == 0.0);
  CHECK_FALSE(auroc(std::vector<double>{}, std::vector{1.0}).has_value());
}

TEST_CASE("operating points reach the target known accuracy") {
  ThresholdTable table;
  table.classes = {{4.0, 1.0, 3.0, 4}, {4.0, 2.0, 2.0, 4}};
  // acceptance kappas of the correct knowns: 0, 1, 0.5, 1.5; of the unknowns: 2, 0.75
  std::vector<Decision> decisions{with_margin(0, 4.0), with_margin(0, 3.0), with_margin(1, 3.0),
                                  with_margin(1, 1.0), with_margin(0, 2.0), with_margin(1, 2.5)};
  const std::vector<Truth> truth{{0}, {0}, {1}, {1}, {kUnknown}, {kUnknown}};

  auto k = matched_kappa(decisions, truth, table, 0.75);
  CHECK(k.kappa == 1.0);
  CHECK(k.known_accuracy == 0.75);
  CHECK(*k.rejection_rate == 0.5);

  k = matched_kappa(decisions, truth, table, 1.0);
  CHECK(k.kappa == 1.5);
  CHECK(*k.rejection_rate == 0.5);

  auto g = operating_point(decisions, truth, 0.5);
  CHECK(g.threshold == 3.0);
  CHECK(g.known_accuracy == 0.75);
  CHECK(*g.rejection_rate == 1.0);
}
