#include "posr/openset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "posr/errors.hpp"
#include "posr/losses.hpp"

namespace posr {

std::string_view to_string(DecisionMode mode) { return mode == DecisionMode::margin ? "margin" : "probability"; }

DecisionMode parse_decision_mode(std::string_view text) {
  if (text == "margin") return DecisionMode::margin;
  if (text == "probability") return DecisionMode::probability;
  throw ConfigError("openset.mode must be margin|probability, got '" + std::string(text) + "'");
}

MarginResult margin_from_distances(std::span<const double> distances) {
  if (distances.size() < 2) throw ContractError("margin: need at least 2 classes");
  MarginResult r;
  r.scores.resize(distances.size());
  for (std::size_t k = 0; k < distances.size(); ++k) r.scores[k] = -distances[k];
  r.best = 0;
  for (std::size_t k = 1; k < r.scores.size(); ++k)
    if (r.scores[k] > r.scores[r.best]) r.best = k;
  r.second = r.best == 0 ? 1 : 0;
  for (std::size_t k = 0; k < r.scores.size(); ++k)
    if (k != r.best && r.scores[k] > r.scores[r.second]) r.second = k;
  r.margin = r.scores[r.best] - r.scores[r.second];
  return r;
}

MarginResult margin(std::span<const double> z, const PrototypeBank& bank) {
  const auto d = distances(z, bank);
  return margin_from_distances(d);
}

ClassThreshold threshold_from_scores(std::span<const double> scores, double kappa) {
  if (scores.size() < 2) throw CalibrationError("calibrate: need at least 2 scores to estimate a spread");
  const double n = static_cast<double>(scores.size());
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  if (*lo == *hi) return ClassThreshold{*lo, 0.0, *lo, scores.size()};
  const double mu = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : scores) ss += (s - mu) * (s - mu);
  ClassThreshold t;
  t.mu = mu;
  t.sigma = std::sqrt(ss / (n - 1.0));
  t.tau = mu - kappa * t.sigma;
  t.count = scores.size();
  return t;
}

ThresholdTable calibrate_from_scores(const std::vector<std::vector<double>>& per_class, const CalibrationOptions& options) {
  if (!(options.kappa >= 1.0)) throw ConfigError("openset.kappa must be >= 1.0, got " + std::to_string(options.kappa));
  if (per_class.size() < 2) throw ContractError("calibrate: need at least 2 classes");
  for (std::size_t k = 0; k < per_class.size(); ++k)
    if (per_class[k].size() < 2)
      throw CalibrationError("calibrate: class " + std::to_string(k) + " has " + std::to_string(per_class[k].size()) +
                             " correctly classified validation samples, need at least 2");

  ThresholdTable table;
  table.kappa = options.kappa;
  table.pooled = options.pooled;
  table.mode = options.mode;
  table.gamma = options.gamma;
  if (options.pooled) {
    std::vector<double> all;
    for (const auto& scores : per_class) all.insert(all.end(), scores.begin(), scores.end());
    table.classes.assign(per_class.size(), threshold_from_scores(all, options.kappa));
  } else {
    for (const auto& scores : per_class) table.classes.push_back(threshold_from_scores(scores, options.kappa));
  }
  for (std::size_t k = 0; k < table.classes.size(); ++k)
    if (table.classes[k].tau < 0.0 && options.mode == DecisionMode::margin)
      std::clog << "warning: class " << k << " threshold tau = " << table.classes[k].tau
                << " is negative; this class never rejects\n";
  return table;
}

ThresholdTable calibrate(const Tensor& embeddings, std::span<const std::size_t> labels, const PrototypeBank& bank,
                         const CalibrationOptions& options) {
  if (embeddings.rank() != 2 || embeddings.extent(1) != bank.dim())
    throw ConformanceError("calibrate: embeddings " + shape_string(embeddings.shape()) + " do not match prototype dim " +
                           std::to_string(bank.dim()));
  if (labels.size() != embeddings.extent(0)) throw ContractError("calibrate: one label per embedding required");
  std::vector<std::vector<double>> per_class(bank.classes());
  const std::size_t dim = bank.dim();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto d = distances(embeddings.data().subspan(i * dim, dim), bank);
    const auto m = margin_from_distances(d);
    if (labels[i] >= bank.classes() || m.best != labels[i]) continue;
    if (options.mode == DecisionMode::margin) {
      per_class[labels[i]].push_back(m.margin);
    } else {
      const auto p = distance_softmax(d, options.gamma);
      per_class[labels[i]].push_back(*std::max_element(p.begin(), p.end()));
    }
  }
  return calibrate_from_scores(per_class, options);
}

Decision decide_from_distances(std::span<const double> distances, const ThresholdTable& table) {
  if (table.classes.size() != distances.size())
    throw ConformanceError("decide: threshold table covers " + std::to_string(table.classes.size()) + " classes, got " +
                           std::to_string(distances.size()) + " distances");
  MarginResult m = margin_from_distances(distances);
  Decision d;
  d.best = m.best;
  d.second = m.second;
  d.margin = m.margin;
  d.scores = std::move(m.scores);
  const auto p = distance_softmax(distances, table.gamma);
  d.max_probability = p[d.best];
  const double score = table.mode == DecisionMode::margin ? d.margin : d.max_probability;
  d.predicted = score < table.tau(d.best) ? kUnknown : d.best;
  return d;
}

Decision decide(std::span<const double> z, const PrototypeBank& bank, const ThresholdTable& table) {
  const auto d = distances(z, bank);
  return decide_from_distances(d, table);
}

std::optional<double> auroc(std::span<const double> positive, std::span<const double> negative) {
  if (positive.empty() || negative.empty()) return std::nullopt;
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(positive.size() + negative.size());
  for (double s : positive) items.push_back({s, true});
  for (double s : negative) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Mann-Whitney U with midranks.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t)
      if (items[t].positive) rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(positive.size()), nn = static_cast<double>(negative.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

Metrics evaluate(std::span<const Decision> decisions, std::span<const Truth> truth, std::size_t classes) {
  if (decisions.size() != truth.size()) throw ContractError("evaluate: one truth entry per decision required");
  Metrics m;
  m.confusion.assign(classes + 1, std::vector<std::size_t>(classes + 1, 0));
  std::size_t correct = 0, closed_correct = 0, rejected = 0;
  std::vector<double> known_margins, unknown_margins;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const Decision& d = decisions[i];
    const std::size_t row = truth[i].known() ? truth[i].label : classes;
    if (row > classes) throw ContractError("evaluate: truth label out of range");
    const std::size_t col = d.unknown() ? classes : d.predicted;
    ++m.confusion[row][col];
    if (truth[i].known()) {
      ++m.knowns;
      if (d.predicted == truth[i].label) ++correct;
      if (d.best == truth[i].label) ++closed_correct;
      known_margins.push_back(d.margin);
    } else {
      ++m.unknowns;
      if (d.unknown()) ++rejected;
      unknown_margins.push_back(d.margin);
    }
  }
  if (m.knowns) {
    m.known_accuracy = static_cast<double>(correct) / static_cast<double>(m.knowns);
    m.closed_set_accuracy = static_cast<double>(closed_correct) / static_cast<double>(m.knowns);
  }
  if (m.unknowns) m.rejection_rate = static_cast<double>(rejected) / static_cast<double>(m.unknowns);
  m.auroc = auroc(known_margins, unknown_margins);
  return m;
}

OperatingPoint operating_point(std::span<const Decision> decisions, std::span<const Truth> truth,
                               double target_known_accuracy) {
  if (decisions.size() != truth.size()) throw ContractError("operating_point: one truth entry per decision required");
  std::vector<double> correct_margins;
  std::vector<double> unknown_margins;
  std::size_t knowns = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (truth[i].known()) {
      ++knowns;
      if (decisions[i].best == truth[i].label) correct_margins.push_back(decisions[i].margin);
    } else {
      unknown_margins.push_back(decisions[i].margin);
    }
  }
  if (knowns == 0) throw ContractError("operating_point: no known samples");
  std::sort(correct_margins.begin(), correct_margins.end(), std::greater<>());

  OperatingPoint op;
  const auto needed = static_cast<std::size_t>(std::ceil(target_known_accuracy * static_cast<double>(knowns) - 1e-9));
  if (needed == 0) {
    op.threshold = correct_margins.empty() ? 0.0 : std::nextafter(correct_margins.front(), INFINITY);
  } else if (needed > correct_margins.size()) {
    op.threshold = 0.0;
  } else {
    op.threshold = correct_margins[needed - 1];
  }
  std::size_t accepted = 0;
  for (double m : correct_margins)
    if (m >= op.threshold) ++accepted;
  op.known_accuracy = static_cast<double>(accepted) / static_cast<double>(knowns);
  if (!unknown_margins.empty()) {
    std::size_t rejected = 0;
    for (double m : unknown_margins)
      if (m < op.threshold) ++rejected;
    op.rejection_rate = static_cast<double>(rejected) / static_cast<double>(unknown_margins.size());
  }
  return op;
}

namespace {

// Smallest kappa at which the decision is accepted; -inf/+inf when sigma is 0.
double acceptance_kappa(const Decision& d, const ThresholdTable& table) {
  const ClassThreshold& c = table.classes.at(d.best);
  if (c.sigma > 0.0) return (c.mu - d.margin) / c.sigma;
  return d.margin >= c.mu ? -INFINITY : INFINITY;
}

}  // namespace

KappaOperatingPoint matched_kappa(std::span<const Decision> decisions, std::span<const Truth> truth,
                                  const ThresholdTable& table, double target_known_accuracy) {
  if (decisions.size() != truth.size()) throw ContractError("matched_kappa: one truth entry per decision required");
  if (table.mode != DecisionMode::margin) throw ContractError("matched_kappa: only defined for margin decisions");
  std::vector<double> correct;
  std::vector<double> unknown;
  std::size_t knowns = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const double k = acceptance_kappa(decisions[i], table);
    if (truth[i].known()) {
      ++knowns;
      if (decisions[i].best == truth[i].label) correct.push_back(k);
    } else {
      unknown.push_back(k);
    }
  }
  if (knowns == 0) throw ContractError("matched_kappa: no known samples");
  std::sort(correct.begin(), correct.end());

  KappaOperatingPoint op;
  const auto needed = static_cast<std::size_t>(std::ceil(target_known_accuracy * static_cast<double>(knowns) - 1e-9));
  const auto finite_max = [&] {
    double m = 0.0;
    for (double k : correct)
      if (std::isfinite(k)) m = std::max(m, k);
    return m;
  };
  if (needed == 0)
    op.kappa = correct.empty() ? 0.0 : std::nextafter(correct.front(), -INFINITY);
  else if (needed > correct.size())
    op.kappa = finite_max();
  else
    op.kappa = std::isfinite(correct[needed - 1]) ? correct[needed - 1] : finite_max();
  std::size_t accepted = 0;
  for (double k : correct)
    if (op.kappa >= k) ++accepted;
  op.known_accuracy = static_cast<double>(accepted) / static_cast<double>(knowns);
  if (!unknown.empty()) {
    std::size_t rejected = 0;
    for (double k : unknown)
      if (op.kappa < k) ++rejected;
    op.rejection_rate = static_cast<double>(rejected) / static_cast<double>(unknown.size());
  }
  return op;
}

}  // namespace posr
