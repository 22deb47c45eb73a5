#include "posr/checkpoint.hpp"

#include <fstream>

#include "json.hpp"
#include "posr/config.hpp"
#include "posr/errors.hpp"

namespace posr {

using json = nlohmann::json;

namespace {

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"values", t.values()}}; }

Tensor tensor_from(const json& j) { return Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>()); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const TrainingState& s = ck.state;
  json j;
  j["format"] = kCheckpointFormat;
  j["config"] = train_to_json(ck.config);
  j["epochs_completed"] = s.epochs_completed;
  j["class_devices"] = ck.class_devices;

  json params = json::array();
  const auto names = s.extractor.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    json p = tensor_json(s.extractor.parameters()[i]);
    p["name"] = names[i];
    params.push_back(p);
  }
  TrainConfig shape;
  shape.backbone = s.extractor.spec();
  j["backbone"] = train_to_json(shape)["model"];
  j["parameters"] = params;
  j["prototypes"] = tensor_json(s.prototypes.tensor());

  json table = {{"kappa", ck.thresholds.kappa},
                {"pooled", ck.thresholds.pooled},
                {"mode", std::string(to_string(ck.thresholds.mode))},
                {"gamma", ck.thresholds.gamma}};
  json classes = json::array();
  for (const auto& c : ck.thresholds.classes)
    classes.push_back({{"mu", c.mu}, {"sigma", c.sigma}, {"tau", c.tau}, {"count", c.count}});
  table["classes"] = classes;
  j["thresholds"] = table;

  json records = json::array();
  for (const auto& [id, q] : s.smoothing.records()) records.push_back({{"id", id}, {"q", q}});
  j["smoothing"] = {{"mode", std::string(to_string(s.smoothing.mode()))},
                    {"alpha", s.smoothing.alpha()},
                    {"classes", s.smoothing.classes()},
                    {"records", records}};

  json m = json::array(), v = json::array();
  for (const auto& t : s.optimizer.m) m.push_back(tensor_json(t));
  for (const auto& t : s.optimizer.v) v.push_back(tensor_json(t));
  j["adam"] = {{"t", s.optimizer.t}, {"m", m}, {"v", v}};

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("load_checkpoint: " + path.string() + ": " + e.what(), e.byte);
  }
  try {
    if (j.at("format") != kCheckpointFormat)
      throw FormatError("load_checkpoint: unsupported format tag " + j.at("format").dump(), 0);
    Checkpoint ck;
    ck.config = train_from_json(j.at("config"));
    ck.class_devices = j.at("class_devices").get<std::vector<std::size_t>>();

    json backbone_doc{{"model", j.at("backbone")}};
    const BackboneSpec spec = train_from_json(backbone_doc).backbone;
    std::vector<Tensor> params;
    for (const auto& p : j.at("parameters")) params.push_back(tensor_from(p));
    TrainingState& s = ck.state;
    s.extractor = FeatureExtractor(spec, std::move(params));
    s.prototypes = PrototypeBank(tensor_from(j.at("prototypes")));
    s.epochs_completed = j.at("epochs_completed");

    const auto& t = j.at("thresholds");
    ck.thresholds.kappa = t.at("kappa");
    ck.thresholds.pooled = t.at("pooled");
    ck.thresholds.mode = parse_decision_mode(t.at("mode").get<std::string>());
    ck.thresholds.gamma = t.at("gamma");
    for (const auto& c : t.at("classes"))
      ck.thresholds.classes.push_back({c.at("mu"), c.at("sigma"), c.at("tau"), c.at("count")});
    if (ck.thresholds.classes.size() != s.prototypes.classes())
      throw FormatError("load_checkpoint: threshold table and prototype bank disagree on the class count", 0);

    const auto& sm = j.at("smoothing");
    std::map<std::size_t, std::vector<double>> records;
    for (const auto& r : sm.at("records")) records[r.at("id")] = r.at("q").get<std::vector<double>>();
    s.smoothing = SmoothingState::restore(parse_smoothing_mode(sm.at("mode").get<std::string>()), sm.at("alpha"),
                                          sm.at("classes"), std::move(records));

    const auto& a = j.at("adam");
    s.optimizer.t = a.at("t");
    for (const auto& m : a.at("m")) s.optimizer.m.push_back(tensor_from(m));
    for (const auto& v : a.at("v")) s.optimizer.v.push_back(tensor_from(v));
    return ck;
  } catch (const json::exception& e) {
    throw FormatError("load_checkpoint: " + path.string() + ": " + e.what(), 0);
  }
}

}  // namespace posr
