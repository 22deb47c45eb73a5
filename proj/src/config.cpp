#include "posr/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "posr/errors.hpp"

namespace posr {

using json = nlohmann::json;

namespace {

json pair_json(const auto& r) { return json::array({r.first, r.second}); }

// Walks a fully merged document and converts each field, reporting the dotted
// path of whatever fails.
class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  const json& at(std::string_view path) const {
    const json* node = &root_;
    std::size_t begin = 0;
    while (begin <= path.size()) {
      const std::size_t dot = std::min(path.find('.', begin), path.size());
      const std::string key(path.substr(begin, dot - begin));
      if (!node->is_object() || !node->contains(key)) throw ConfigError(std::string(path) + ": missing");
      node = &(*node)[key];
      begin = dot + 1;
    }
    return *node;
  }

  template <typename T>
  T get(std::string_view path) const {
    const json& j = at(path);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!j.is_number()) throw ConfigError(std::string(path) + ": expected a number, got " + j.dump());
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) throw ConfigError(std::string(path) + ": expected true or false, got " + j.dump());
      } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
          throw ConfigError(std::string(path) + ": expected a non-negative integer, got " + j.dump());
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) throw ConfigError(std::string(path) + ": expected a string, got " + j.dump());
      }
      return j.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string(path) + ": " + e.what());
    }
  }

  template <typename T>
  std::pair<T, T> range(std::string_view path) const {
    const json& j = at(path);
    if (!j.is_array() || j.size() != 2) throw ConfigError(std::string(path) + ": expected [min, max], got " + j.dump());
    const std::string p(path);
    const json pair{{"lo", j[0]}, {"hi", j[1]}};
    const Reader sub(pair);
    return {sub.wrap<T>("lo", p + "[0]"), sub.wrap<T>("hi", p + "[1]")};
  }

  template <typename T>
  std::vector<T> list(std::string_view path) const {
    const json& j = at(path);
    if (!j.is_array()) throw ConfigError(std::string(path) + ": expected a list, got " + j.dump());
    std::vector<T> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
      const json item{{"v", j[i]}};
      const Reader sub(item);
      out.push_back(sub.wrap<T>("v", std::string(path) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

 private:
  template <typename T>
  T wrap(std::string_view key, const std::string& shown) const {
    try {
      return get<T>(key);
    } catch (const ConfigError& e) {
      std::string msg = e.what();
      throw ConfigError(shown + msg.substr(key.size()));
    }
  }

  const json& root_;
};

// Copies `patch` into `base`, refusing keys the defaults do not have.
void merge_strict(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError(path + ": unknown key");
    json& slot = base[key];
    if (slot.is_object())
      merge_strict(slot, value, path);
    else
      slot = value;
  }
}

json augment_json(const AugmentSpec& a) {
  return {{"rotation", {{"enabled", a.rotation.enabled}, {"phases", a.rotation.phases}, {"continuous", a.rotation.continuous}}},
          {"permutation",
           {{"enabled", a.permutation.enabled},
            {"min_segments", a.permutation.min_segments},
            {"max_segments", a.permutation.max_segments}}}};
}

json backbone_json(const BackboneSpec& b) {
  return {{"channels", b.channels},         {"stem_kernel", b.stem_kernel}, {"stem_stride", b.stem_stride},
          {"block_kernel", b.block_kernel}, {"blocks", b.blocks},           {"embed_dim", b.embed_dim}};
}

// Train, loss, smoothing, augment, model and openset sections.
void put_train(json& j, const TrainConfig& t) {
  j["train"] = {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.adam.learning_rate},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"epsilon", t.adam.epsilon},
                {"lr_schedule", t.lr_schedule},
                {"seed", t.seed},
                {"trials", t.trials},
                {"fresh_prediction_pass", t.fresh_prediction_pass}};
  j["loss"] = {{"gamma", t.loss.gamma}, {"lambda1", t.loss.lambda1}, {"lambda2", t.loss.lambda2}};
  j["smoothing"] = {{"mode", std::string(to_string(t.smoothing))}, {"alpha", t.alpha}};
  j["augment"] = augment_json(t.augment);
  j["model"] = backbone_json(t.backbone);
  j["openset"] = {{"kappa", t.calibration.kappa},
                  {"pooled", t.calibration.pooled},
                  {"mode", std::string(to_string(t.calibration.mode))}};
}

template <typename F>
auto parse_enum(const Reader& r, std::string_view path, F parse) {
  const auto text = r.get<std::string>(path);
  try {
    return parse(text);
  } catch (const Error& e) {
    throw ConfigError(std::string(path) + ": " + e.what());
  }
}

TrainConfig read_train(const Reader& r) {
  TrainConfig t;
  t.epochs = r.get<std::size_t>("train.epochs");
  t.batch_size = r.get<std::size_t>("train.batch_size");
  t.adam.learning_rate = r.get<double>("train.learning_rate");
  t.adam.beta1 = r.get<double>("train.beta1");
  t.adam.beta2 = r.get<double>("train.beta2");
  t.adam.epsilon = r.get<double>("train.epsilon");
  t.lr_schedule = r.get<std::string>("train.lr_schedule");
  t.seed = r.get<std::uint64_t>("train.seed");
  t.trials = r.get<std::size_t>("train.trials");
  t.fresh_prediction_pass = r.get<bool>("train.fresh_prediction_pass");
  t.loss.gamma = r.get<double>("loss.gamma");
  t.loss.lambda1 = r.get<double>("loss.lambda1");
  t.loss.lambda2 = r.get<double>("loss.lambda2");
  t.smoothing = parse_enum(r, "smoothing.mode", parse_smoothing_mode);
  t.alpha = r.get<double>("smoothing.alpha");
  t.augment.rotation.enabled = r.get<bool>("augment.rotation.enabled");
  t.augment.rotation.phases = r.list<double>("augment.rotation.phases");
  t.augment.rotation.continuous = r.get<bool>("augment.rotation.continuous");
  t.augment.permutation.enabled = r.get<bool>("augment.permutation.enabled");
  t.augment.permutation.min_segments = r.get<std::size_t>("augment.permutation.min_segments");
  t.augment.permutation.max_segments = r.get<std::size_t>("augment.permutation.max_segments");
  t.backbone.channels = r.get<std::size_t>("model.channels");
  t.backbone.stem_kernel = r.get<std::size_t>("model.stem_kernel");
  t.backbone.stem_stride = r.get<std::size_t>("model.stem_stride");
  t.backbone.block_kernel = r.get<std::size_t>("model.block_kernel");
  t.backbone.blocks = r.get<std::size_t>("model.blocks");
  t.backbone.embed_dim = r.get<std::size_t>("model.embed_dim");
  t.calibration.kappa = r.get<double>("openset.kappa");
  t.calibration.pooled = r.get<bool>("openset.pooled");
  t.calibration.mode = parse_enum(r, "openset.mode", parse_decision_mode);
  t.calibration.gamma = t.loss.gamma;
  return t;
}

// Rethrows module validation errors as config errors.
template <typename F>
void checked(F f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

json train_defaults() {
  json j;
  put_train(j, default_config().train);
  return j;
}

}  // namespace

std::string_view to_string(Arm arm) {
  switch (arm) {
    case Arm::gcpl: return "gcpl";
    case Arm::consistency: return "consistency";
    case Arm::online_ls: return "online_ls";
    case Arm::conventional_ls: return "conventional_ls";
    case Arm::ipl: return "ipl";
  }
  return "?";
}

Arm parse_arm(std::string_view text) {
  for (Arm a : {Arm::gcpl, Arm::consistency, Arm::online_ls, Arm::conventional_ls, Arm::ipl})
    if (text == to_string(a)) return a;
  throw ConfigError("unknown ablation arm '" + std::string(text) +
                    "' (expected gcpl, consistency, online_ls, conventional_ls or ipl)");
}

BackboneSpec desk_backbone() {
  BackboneSpec b;
  b.channels = 32;
  b.stem_kernel = 16;
  b.stem_stride = 8;
  b.block_kernel = 5;
  b.blocks = 1;
  b.embed_dim = 32;
  return b;
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.train.backbone = desk_backbone();
  return c;
}

void ExperimentConfig::validate() const {
  checked([&] {
    if (fleet.known < 2) throw ConfigError("fleet.known: need at least 2 known devices");
    if (fleet.unknown < 1) throw ConfigError("fleet.unknown: need at least 1 unknown device");
    fleet.ranges.validate();
    if (data.length < 1 || data.length > data.burst_length)
      throw ConfigError("data.length: must be in [1, data.burst_length]");
    if (data.slices_per_burst < 1) throw ConfigError("data.slices_per_burst: must be >= 1");
    burst_split(data.bursts_per_device);
    train.validate(data.length);
    if (train.smoothing != SmoothingMode::none) {
      const bool online = train.smoothing == SmoothingMode::online;
      if (!(train.alpha > 0.0) || train.alpha >= (online ? 1.0 - SmoothingState::kPMin : 1.0))
        throw ConfigError(online ? "smoothing.alpha: online smoothing needs 0 < alpha < 0.4 so that p_min = 0.6 < p_max = 1 - alpha"
                                 : "smoothing.alpha: must be in (0, 1)");
    }
    if (!(target_known_accuracy > 0.0 && target_known_accuracy <= 1.0))
      throw ConfigError("openset.target_known_accuracy: must be in (0, 1]");
    if (ablation.arms.empty()) throw ConfigError("ablation.arms: empty");
    if (ablation.lambda2.empty()) throw ConfigError("ablation.lambda2: empty");
    if (ablation.alpha.empty()) throw ConfigError("ablation.alpha: empty");
  });
}

json to_json(const ExperimentConfig& c) {
  json j;
  const auto& r = c.fleet.ranges;
  j["fleet"] = {{"known", c.fleet.known},
                {"unknown", c.fleet.unknown},
                {"seed", c.fleet.seed},
                {"ranges",
                 {{"gain_imbalance_db", pair_json(r.gain_imbalance_db)},
                  {"phase_skew", pair_json(r.phase_skew)},
                  {"cfo", pair_json(r.cfo)},
                  {"dc_magnitude", pair_json(r.dc_magnitude)},
                  {"pa_coefficient", pair_json(r.pa_coefficient)},
                  {"transient_length", pair_json(r.transient_length)}}}};
  const auto& d = c.data;
  j["data"] = {{"bursts_per_device", d.bursts_per_device},
               {"slices_per_burst", d.slices_per_burst},
               {"length", d.length},
               {"burst_length", d.burst_length},
               {"snr_db", std::isinf(d.snr_db) ? json(nullptr) : json(d.snr_db)},
               {"seed", d.seed},
               {"include_transients", d.include_transients},
               {"normalize", d.normalize},
               {"random_carrier_phase", d.random_carrier_phase}};
  put_train(j, c.train);
  j["openset"]["target_known_accuracy"] = c.target_known_accuracy;
  json arms = json::array();
  for (Arm a : c.ablation.arms) arms.push_back(std::string(to_string(a)));
  j["ablation"] = {{"arms", arms}, {"lambda2", c.ablation.lambda2}, {"alpha", c.ablation.alpha}};
  return j;
}

ExperimentConfig from_json(const json& doc) {
  json merged = to_json(default_config());
  merge_strict(merged, doc, "");
  const Reader r(merged);
  ExperimentConfig c;
  c.fleet.known = r.get<std::size_t>("fleet.known");
  c.fleet.unknown = r.get<std::size_t>("fleet.unknown");
  c.fleet.seed = r.get<std::uint64_t>("fleet.seed");
  c.fleet.ranges.gain_imbalance_db = r.range<double>("fleet.ranges.gain_imbalance_db");
  c.fleet.ranges.phase_skew = r.range<double>("fleet.ranges.phase_skew");
  c.fleet.ranges.cfo = r.range<double>("fleet.ranges.cfo");
  c.fleet.ranges.dc_magnitude = r.range<double>("fleet.ranges.dc_magnitude");
  c.fleet.ranges.pa_coefficient = r.range<double>("fleet.ranges.pa_coefficient");
  c.fleet.ranges.transient_length = r.range<std::size_t>("fleet.ranges.transient_length");
  c.data.bursts_per_device = r.get<std::size_t>("data.bursts_per_device");
  c.data.slices_per_burst = r.get<std::size_t>("data.slices_per_burst");
  c.data.length = r.get<std::size_t>("data.length");
  c.data.burst_length = r.get<std::size_t>("data.burst_length");
  c.data.snr_db = r.at("data.snr_db").is_null() ? INFINITY : r.get<double>("data.snr_db");
  c.data.seed = r.get<std::uint64_t>("data.seed");
  c.data.include_transients = r.get<bool>("data.include_transients");
  c.data.normalize = r.get<bool>("data.normalize");
  c.data.random_carrier_phase = r.get<bool>("data.random_carrier_phase");
  c.train = read_train(r);
  c.target_known_accuracy = r.get<double>("openset.target_known_accuracy");
  c.ablation.arms.clear();
  for (const auto& name : r.list<std::string>("ablation.arms")) {
    try {
      c.ablation.arms.push_back(parse_arm(name));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("ablation.arms: ") + e.what());
    }
  }
  c.ablation.lambda2 = r.list<double>("ablation.lambda2");
  c.ablation.alpha = r.list<double>("ablation.alpha");
  return c;
}

json train_to_json(const TrainConfig& config) {
  json j;
  put_train(j, config);
  return j;
}

TrainConfig train_from_json(const json& doc) {
  json merged = train_defaults();
  merge_strict(merged, doc, "");
  return read_train(Reader(merged));
}

void apply_override(json& doc, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("--set: expected KEY=VALUE, got '" + std::string(assignment) + "'");
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const std::size_t dot = key.rfind('.', end - 1);
    const std::size_t begin = dot == std::string::npos ? 0 : dot + 1;
    const std::string part = key.substr(begin, end - begin);
    if (part.empty()) throw ConfigError("--set: malformed key '" + key + "'");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  json defaults = to_json(default_config());
  merge_strict(defaults, patch, "");
  // Apply onto doc without the default check again, creating sections as needed.
  json* node = &doc;
  std::size_t begin = 0;
  for (;;) {
    const std::size_t dot = key.find('.', begin);
    const std::string part = key.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (!node->is_object()) *node = json::object();
    begin = dot + 1;
  }
}

ExperimentConfig resolve_config(const std::filesystem::path* file, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("config: cannot open " + file->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config: " + file->string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig c = from_json(doc);
  c.validate();
  return c;
}

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

void write_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << dump(to_json(config));
  if (!out) throw IoError("write failed for " + path.string());
}

bool arm_uses_consistency(Arm arm) { return arm == Arm::consistency || arm == Arm::ipl; }
bool arm_uses_smoothing(Arm arm) { return arm == Arm::online_ls || arm == Arm::conventional_ls || arm == Arm::ipl; }

TrainConfig arm_config(const TrainConfig& base, Arm arm, double lambda2, double alpha) {
  TrainConfig c = base;
  c.loss.lambda2 = arm_uses_consistency(arm) ? lambda2 : 0.0;
  if (!arm_uses_consistency(arm)) c.augment = AugmentSpec::disabled();
  switch (arm) {
    case Arm::online_ls:
    case Arm::ipl: c.smoothing = SmoothingMode::online; break;
    case Arm::conventional_ls: c.smoothing = SmoothingMode::conventional; break;
    default: c.smoothing = SmoothingMode::none; break;
  }
  c.alpha = arm_uses_smoothing(arm) ? alpha : base.alpha;
  return c;
}

}  // namespace posr
