#include "posr/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>

#include "posr/checkpoint.hpp"
#include "posr/config.hpp"
#include "posr/errors.hpp"

namespace posr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string real(std::optional<double> v) {
  if (!v) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::optional<double> median_of(const std::vector<SplitEvaluation>& trials,
                                const std::function<std::optional<double>(const SplitEvaluation&)>& get) {
  std::vector<double> values;
  for (const auto& t : trials) {
    const auto v = get(t);
    if (!v) return std::nullopt;
    values.push_back(*v);
  }
  if (values.empty()) return std::nullopt;
  return median(std::move(values));
}

}  // namespace

MetricsRow metrics_row(std::string run, const SplitEvaluation& evaluation, double target_known_accuracy) {
  return median_row(std::move(run), {evaluation}, target_known_accuracy);
}

MetricsRow median_row(std::string run, const std::vector<SplitEvaluation>& trials, double target_known_accuracy) {
  if (trials.empty()) throw ContractError("median_row: no trials");
  MetricsRow row;
  row.run = std::move(run);
  row.trials = trials.size();
  row.target_known_accuracy = target_known_accuracy;
  row.known_accuracy = median_of(trials, [](const auto& e) { return e.metrics.known_accuracy; });
  row.closed_set_accuracy = median_of(trials, [](const auto& e) { return e.metrics.closed_set_accuracy; });
  row.rejection_rate = median_of(trials, [](const auto& e) { return e.metrics.rejection_rate; });
  row.auroc = median_of(trials, [](const auto& e) { return e.metrics.auroc; });
  row.knowns = trials.front().metrics.knowns;
  row.unknowns = trials.front().metrics.unknowns;
  if (row.knowns > 0) {
    row.matched_kappa = median_of(trials, [](const auto& e) { return std::optional(e.matched.kappa); });
    row.matched_known_accuracy = median_of(trials, [](const auto& e) { return std::optional(e.matched.known_accuracy); });
    row.matched_rejection_rate = median_of(trials, [](const auto& e) { return e.matched.rejection_rate; });
    row.global_threshold = median_of(trials, [](const auto& e) { return std::optional(e.global.threshold); });
    row.global_known_accuracy = median_of(trials, [](const auto& e) { return std::optional(e.global.known_accuracy); });
    row.global_rejection_rate = median_of(trials, [](const auto& e) { return e.global.rejection_rate; });
  }
  return row;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out =
      "run,lambda2,alpha,trials,target_known_accuracy,known_accuracy,closed_set_accuracy,rejection_rate,auroc,knowns,"
      "unknowns,matched_kappa,matched_known_accuracy,matched_rejection_rate,global_threshold,global_known_accuracy,"
      "global_rejection_rate\n";
  for (const auto& r : rows) {
    const std::string fields[] = {r.run,
                                  real(r.lambda2),
                                  real(r.alpha),
                                  std::to_string(r.trials),
                                  real(r.target_known_accuracy),
                                  real(r.known_accuracy),
                                  real(r.closed_set_accuracy),
                                  real(r.rejection_rate),
                                  real(r.auroc),
                                  std::to_string(r.knowns),
                                  std::to_string(r.unknowns),
                                  real(r.matched_kappa),
                                  real(r.matched_known_accuracy),
                                  real(r.matched_rejection_rate),
                                  real(r.global_threshold),
                                  real(r.global_known_accuracy),
                                  real(r.global_rejection_rate)};
    for (std::size_t i = 0; i < std::size(fields); ++i) {
      if (i) out += ',';
      out += fields[i];
    }
    out += '\n';
  }
  return out;
}

namespace {

struct Options {
  std::string config;
  std::string out;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string data;
  std::string checkpoint;
  std::string split = "test";
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f.flush()) throw IoError("write failed: " + path.string());
}

// Creates the output directory; an existing non-empty one needs --force.
fs::path prepare_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out DIR is required");
  const fs::path dir = o.out;
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir, ec)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir, ec) && !o.force)
      throw ConfigError(dir.string() + " is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

ExperimentConfig load_config(const Options& o) {
  std::vector<std::string> overrides;
  if (o.seed) {
    const std::string s = std::to_string(*o.seed);
    overrides = {"fleet.seed=" + s, "data.seed=" + s, "train.seed=" + s};
  }
  overrides.insert(overrides.end(), o.overrides.begin(), o.overrides.end());
  const fs::path file = o.config;
  return resolve_config(o.config.empty() ? nullptr : &file, overrides);
}

Dataset synthesize(const ExperimentConfig& c) {
  const auto fleet = make_fleet(c.fleet.known, c.fleet.unknown, c.fleet.seed, c.fleet.ranges);
  return build_dataset(fleet, c.data, c.fleet.ranges);
}

Dataset obtain_dataset(const Options& o, const ExperimentConfig& c) {
  return o.data.empty() ? synthesize(c) : load_dataset(o.data);
}

json confusion_json(const Metrics& m, const std::vector<std::size_t>& class_devices) {
  json labels = json::array();
  for (std::size_t d : class_devices) labels.push_back("device-" + std::to_string(d));
  labels.push_back("unknown");
  return {{"rows", "true class"}, {"columns", "predicted class"}, {"labels", labels}, {"matrix", m.confusion}};
}

void write_evaluation(const fs::path& dir, const SplitEvaluation& ev, const MetricsRow& row,
                      const std::vector<std::size_t>& class_devices) {
  write_text(dir / "metrics.csv", metrics_csv({row}));
  write_text(dir / "confusion.json", dump(confusion_json(ev.metrics, class_devices)));
}

MetricsRow model_row(const TrainConfig& config, const SplitEvaluation& ev, double target) {
  MetricsRow row = metrics_row("model", ev, target);
  row.lambda2 = config.loss.lambda2;
  row.alpha = config.smoothing == SmoothingMode::none ? std::nullopt : std::optional(config.alpha);
  return row;
}

json report_json(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"dce", e.dce},
                      {"prototype", e.prototype},
                      {"consistency", e.consistency},
                      {"total", e.total},
                      {"val_accuracy", e.val_accuracy},
                      {"seconds", e.seconds}});
  return {{"config", train_to_json(r.config)},
          {"parameter_count", r.parameter_count},
          {"seconds", r.seconds},
          {"checkpoint", r.checkpoint_path},
          {"epochs", epochs}};
}

std::string report_csv(const TrainReport& r) {
  std::string out = "epoch,dce,prototype,consistency,total,val_accuracy,seconds\n";
  for (const auto& e : r.epochs)
    out += std::to_string(e.epoch) + ',' + real(e.dce) + ',' + real(e.prototype) + ',' + real(e.consistency) + ',' +
           real(e.total) + ',' + real(e.val_accuracy) + ',' + real(e.seconds) + '\n';
  return out;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load_config(o);
  const fs::path dir = prepare_out(o);
  const Dataset d = synthesize(c);
  save_dataset(dir, d);
  write_config(dir / "config.json", c);
  const auto& n = d.manifest().counts;
  out << "wrote " << d.size() << " slices (" << n.train << " train, " << n.val << " val, " << n.test << " test) to "
      << dir.string() << "\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load_config(o);
  const fs::path dir = prepare_out(o);
  const Dataset d = obtain_dataset(o, c);
  write_config(dir / "config.json", c);

  FitOptions fo;
  fo.checkpoint = dir / "checkpoint.json";
  fo.on_epoch = [&](const EpochStats& s) {
    out << "epoch " << s.epoch << " loss " << real(s.total) << " val_acc " << real(s.val_accuracy) << "\n";
  };
  const FitResult r = fit(c.train, d, fo);
  write_text(dir / "report.json", dump(report_json(r.report)));
  write_text(dir / "report.csv", report_csv(r.report));
  if (!r.report.checkpoint_error.empty()) throw IoError("checkpoint not written: " + r.report.checkpoint_error);

  const SampleCache samples(d);
  const SplitEvaluation ev = evaluate_split(r.model, samples, Split::test, c.target_known_accuracy);
  write_evaluation(dir, ev, model_row(c.train, ev, c.target_known_accuracy), d.known_devices());
  out << "known_accuracy " << real(ev.metrics.known_accuracy) << " rejection_rate " << real(ev.metrics.rejection_rate)
      << "\n";
  return 0;
}

Checkpoint checkpoint_for(const Options& o, const Dataset& d) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint PATH is required");
  Checkpoint ck = load_checkpoint(o.checkpoint);
  if (ck.class_devices != d.known_devices())
    throw ContractError("checkpoint classes do not match the known devices of the dataset");
  return ck;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load_config(o);
  const fs::path dir = prepare_out(o);
  const Dataset d = obtain_dataset(o, c);
  const Checkpoint ck = checkpoint_for(o, d);
  const SampleCache samples(d);
  const SplitEvaluation ev = evaluate_split(ck.model(), samples, Split::test, c.target_known_accuracy);
  write_evaluation(dir, ev, model_row(ck.config, ev, c.target_known_accuracy), ck.class_devices);
  out << "known_accuracy " << real(ev.metrics.known_accuracy) << " rejection_rate " << real(ev.metrics.rejection_rate)
      << "\n";
  return 0;
}

struct Cell {
  Arm arm;
  std::optional<double> lambda2;
  std::optional<double> alpha;
};

int cmd_ablate(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load_config(o);
  const fs::path dir = prepare_out(o);
  const Dataset d = obtain_dataset(o, c);
  write_config(dir / "config.json", c);

  std::vector<Cell> cells;
  for (Arm arm : c.ablation.arms) {
    std::vector<std::optional<double>> l2{std::nullopt}, al{std::nullopt};
    if (arm_uses_consistency(arm)) l2.assign(c.ablation.lambda2.begin(), c.ablation.lambda2.end());
    if (arm_uses_smoothing(arm)) al.assign(c.ablation.alpha.begin(), c.ablation.alpha.end());
    for (auto l : l2)
      for (auto a : al) cells.push_back({arm, l, a});
  }

  // Cells run one after another; trials inside a cell share the worker pool.
  std::vector<MetricsRow> rows;
  for (const Cell& cell : cells) {
    const TrainConfig tc = arm_config(c.train, cell.arm, cell.lambda2.value_or(0.0), cell.alpha.value_or(c.train.alpha));
    const auto outcomes = run_trials(tc, d, c.train.trials, c.target_known_accuracy, worker_threads());
    std::vector<SplitEvaluation> evs;
    for (const auto& t : outcomes) evs.push_back(t.evaluation);
    MetricsRow row = median_row(std::string(to_string(cell.arm)), evs, c.target_known_accuracy);
    row.lambda2 = cell.lambda2;
    row.alpha = cell.alpha;
    out << row.run << " lambda2=" << real(row.lambda2) << " alpha=" << real(row.alpha)
        << " known_accuracy=" << real(row.known_accuracy) << " rejection_rate=" << real(row.rejection_rate) << "\n";
    rows.push_back(row);
    if (outcomes.size() > 1) {
      // best trial by final validation accuracy, so the pick never looks at test data
      std::size_t best = 0;
      for (std::size_t i = 1; i < outcomes.size(); ++i)
        if (outcomes[i].report.epochs.back().val_accuracy > outcomes[best].report.epochs.back().val_accuracy) best = i;
      MetricsRow b = metrics_row(row.run + "/best", evs[best], c.target_known_accuracy);
      b.lambda2 = cell.lambda2;
      b.alpha = cell.alpha;
      rows.push_back(std::move(b));
    }
  }
  write_text(dir / "ablation.csv", metrics_csv(rows));
  return 0;
}

int cmd_export(const Options& o, std::ostream& out) {
  const ExperimentConfig c = load_config(o);
  const fs::path dir = prepare_out(o);
  const Dataset d = obtain_dataset(o, c);
  const Checkpoint ck = checkpoint_for(o, d);
  const Split split = parse_split(o.split);
  const auto ids = d.indices(split);
  const SampleCache samples(d);
  const Tensor z = embed_samples(ck.state.extractor, samples, ids);
  const std::size_t dim = z.extent(1);

  std::string csv = "sample,device,label";
  for (std::size_t j = 0; j < dim; ++j) csv += ",z" + std::to_string(j);
  csv += '\n';
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const std::size_t label = d.label(ids[r]);
    csv += std::to_string(ids[r]) + ',' + std::to_string(d.manifest().entries[ids[r]].device_id) + ',' +
           (label == kUnknown ? std::string("unknown") : std::to_string(label));
    for (std::size_t j = 0; j < dim; ++j) csv += ',' + real(z[r * dim + j]);
    csv += '\n';
  }
  write_text(dir / "embeddings.csv", csv);
  out << "wrote " << ids.size() << " embeddings to " << (dir / "embeddings.csv").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototype-learning open-set recognition of RF emitters", "proto_osr"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  const auto common = [&](CLI::App* sub, bool model_input) {
    sub->add_option("--config", o.config, "experiment config (JSON)");
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_flag("--force", o.force, "overwrite a non-empty output directory");
    sub->add_option("--seed", seed, "seed for fleet, data and training");
    sub->add_option("--set", o.overrides, "override a config key, e.g. train.epochs=5")->allow_extra_args(false);
    if (model_input) sub->add_option("--data", o.data, "dataset directory written by generate");
  };
  auto* gen = app.add_subcommand("generate", "synthesize a dataset");
  common(gen, false);
  auto* train = app.add_subcommand("train", "fit a model and calibrate its thresholds");
  common(train, true);
  auto* eval = app.add_subcommand("evaluate", "open-set metrics of a checkpoint on the test split");
  common(eval, true);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint written by train")->required();
  auto* ablate = app.add_subcommand("ablate", "metrics grid over loss variants");
  common(ablate, true);
  auto* exp = app.add_subcommand("export-embeddings", "write embeddings and labels as CSV");
  common(exp, true);
  exp->add_option("--checkpoint", o.checkpoint, "checkpoint written by train")->required();
  exp->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  if (app.get_subcommands().front()->count("--seed")) o.seed = seed;
  try {
    if (gen->parsed()) return cmd_generate(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (eval->parsed()) return cmd_evaluate(o, out);
    if (ablate->parsed()) return cmd_ablate(o, out);
    return cmd_export(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace posr
