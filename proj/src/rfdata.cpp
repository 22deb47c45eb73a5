#include "posr/rfdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "json.hpp"
#include "posr/errors.hpp"
#include "posr/openset.hpp"
#include "posr/random.hpp"

namespace posr {

using json = nlohmann::json;

void DeviceProfile::validate(std::size_t burst_length) const {
  const double values[] = {gain_imbalance_db, phase_skew, cfo, dc_offset.real(), dc_offset.imag(), pa_coefficient};
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("device " + std::to_string(id) + ": non-finite impairment");
  if (!(std::abs(cfo) < 0.01)) throw ConfigError("device " + std::to_string(id) + ": |cfo| must be below 0.01");
  if (pa_coefficient < 0.0) throw ConfigError("device " + std::to_string(id) + ": pa coefficient must be >= 0");
  if (transient_length * 4 >= burst_length)
    throw ConfigError("device " + std::to_string(id) + ": transient length " + std::to_string(transient_length) +
                      " must be below burst length / 4");
}

void ImpairmentRanges::validate() const {
  auto check = [](const auto& range, const char* name) {
    if (range.first > range.second)
      throw ConfigError(std::string("impairment range ") + name + ": min exceeds max");
  };
  check(gain_imbalance_db, "gain_imbalance_db");
  check(phase_skew, "phase_skew");
  check(cfo, "cfo");
  check(dc_magnitude, "dc_magnitude");
  check(pa_coefficient, "pa_coefficient");
  check(transient_length, "transient_length");
  if (std::max(std::abs(cfo.first), std::abs(cfo.second)) >= 0.01) throw ConfigError("impairment range cfo must lie within (-0.01, 0.01)");
  if (pa_coefficient.first < 0.0) throw ConfigError("impairment range pa_coefficient must be non-negative");
  if (dc_magnitude.first < 0.0) throw ConfigError("impairment range dc_magnitude must be non-negative");
}

ImpairmentRanges ImpairmentRanges::ideal() {
  ImpairmentRanges r;
  r.gain_imbalance_db = {0.0, 0.0};
  r.phase_skew = {0.0, 0.0};
  r.cfo = {0.0, 0.0};
  r.dc_magnitude = {0.0, 0.0};
  r.pa_coefficient = {0.0, 0.0};
  r.transient_length = {64, 64};
  return r;
}

std::vector<DeviceProfile> make_fleet(std::size_t n_known, std::size_t n_unknown, std::uint64_t seed,
                                      const ImpairmentRanges& ranges) {
  if (n_known < 2) throw ContractError("make_fleet: need at least 2 known devices");
  if (n_unknown < 1) throw ContractError("make_fleet: need at least 1 unknown device");
  ranges.validate();
  auto rng = make_stream({seed, 0x666c656574ULL});
  auto uniform = [&](const std::pair<double, double>& r) {
    return r.first == r.second ? r.first : std::uniform_real_distribution<double>(r.first, r.second)(rng);
  };
  std::vector<DeviceProfile> fleet;
  for (std::size_t i = 0; i < n_known + n_unknown; ++i) {
    DeviceProfile d;
    d.id = i;
    d.known = i < n_known;
    d.gain_imbalance_db = uniform(ranges.gain_imbalance_db);
    d.phase_skew = uniform(ranges.phase_skew);
    d.cfo = uniform(ranges.cfo);
    d.dc_offset = std::polar(uniform(ranges.dc_magnitude), uniform({0.0, 2.0 * std::numbers::pi}));
    d.pa_coefficient = uniform(ranges.pa_coefficient);
    d.transient_length = std::uniform_int_distribution<std::size_t>(ranges.transient_length.first,
                                                                    ranges.transient_length.second)(rng);
    fleet.push_back(d);
  }
  return fleet;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

IqSequence IQBurst::as_sequence() const {
  IqSequence out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = {samples[i].real(), samples[i].imag()};
  return out;
}

std::vector<double> rrc_taps(double roll_off, std::size_t samples_per_symbol, std::size_t span_symbols) {
  const std::size_t count = span_symbols * samples_per_symbol + 1;
  const double center = static_cast<double>(count - 1) / 2.0;
  const double pi = std::numbers::pi;
  const double b = roll_off;
  std::vector<double> h(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = (static_cast<double>(i) - center) / static_cast<double>(samples_per_symbol);
    if (t == 0.0) {
      h[i] = 1.0 + b * (4.0 / pi - 1.0);
    } else if (b > 0.0 && std::abs(std::abs(t) - 1.0 / (4.0 * b)) < 1e-12) {
      h[i] = b / std::sqrt(2.0) *
             ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * b)) + (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * b)));
    } else {
      h[i] = (std::sin(pi * t * (1.0 - b)) + 4.0 * b * t * std::cos(pi * t * (1.0 + b))) /
             (pi * t * (1.0 - (4.0 * b * t) * (4.0 * b * t)));
    }
  }
  double energy = 0.0;
  for (double v : h) energy += v * v;
  const double norm = 1.0 / std::sqrt(energy);
  for (double& v : h) v *= norm;
  return h;
}

SynthesisTrace synthesize_trace(const DeviceProfile& profile, std::uint64_t payload_seed, std::size_t length,
                                const SynthesisOptions& options) {
  if (length < 256) throw ContractError("synthesize_burst: burst length must be at least 256");
  profile.validate(length);
  if (std::isnan(options.snr_db)) throw NumericError("synthesize_burst: SNR is NaN");

  const std::size_t sps = kSamplesPerSymbol;
  const auto h = rrc_taps();
  const std::size_t delay = kFilterSpanSymbols * sps;
  auto rng = make_stream({payload_seed, 0x7061796c6f6164ULL});

  SynthesisTrace trace;
  trace.symbol_offset = kFilterSpanSymbols;
  const std::size_t n_symbols = (length + delay) / sps + 1;
  const double a = 1.0 / std::sqrt(2.0);
  std::uniform_int_distribution<int> bit(0, 1);
  trace.symbols.resize(n_symbols);
  for (auto& s : trace.symbols) s = {bit(rng) ? a : -a, bit(rng) ? a : -a};

  const double gain = std::sqrt(static_cast<double>(sps));
  trace.clean.assign(length, {0.0, 0.0});
  for (std::size_t n = 0; n < length; ++n) {
    // taps with (n + delay - k * sps) in [0, h.size())
    const std::size_t pos = n + delay;
    const std::size_t k_hi = pos / sps;
    const std::size_t k_lo = pos >= h.size() - 1 ? (pos - (h.size() - 1) + sps - 1) / sps : 0;
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t k = k_lo; k <= k_hi && k < n_symbols; ++k) acc += trace.symbols[k] * h[pos - k * sps];
    trace.clean[n] = gain * acc;
  }

  const double g = std::pow(10.0, profile.gain_imbalance_db / 20.0);
  const double cs = std::cos(profile.phase_skew), sn = std::sin(profile.phase_skew);
  trace.carrier_phase =
      options.random_carrier_phase ? std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng) : 0.0;
  const std::size_t ramp = profile.transient_length;

  trace.impaired.resize(length);
  for (std::size_t n = 0; n < length; ++n) {
    std::complex<double> x = trace.clean[n];
    x *= 1.0 - profile.pa_coefficient * std::norm(x);
    x = {x.real(), g * (x.imag() * cs - x.real() * sn)};
    x += profile.dc_offset;
    x *= std::polar(1.0, 2.0 * std::numbers::pi * profile.cfo * static_cast<double>(n) + trace.carrier_phase);
    double envelope = 1.0;
    if (ramp > 0) {
      if (n < ramp) envelope = static_cast<double>(n) / static_cast<double>(ramp);
      if (n >= length - ramp) envelope = static_cast<double>(length - 1 - n) / static_cast<double>(ramp);
    }
    trace.impaired[n] = envelope * x;
  }

  if (std::isfinite(options.snr_db)) {
    double power = 0.0;
    for (std::size_t n = ramp; n < length - ramp; ++n) power += std::norm(trace.impaired[n]);
    power /= static_cast<double>(length - 2 * ramp);
    const double sigma = std::sqrt(power / std::pow(10.0, options.snr_db / 10.0) / 2.0);
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& s : trace.impaired) s += std::complex<double>(noise(rng), noise(rng));
  }
  for (const auto& s : trace.impaired)
    if (!std::isfinite(s.real()) || !std::isfinite(s.imag())) throw NumericError("synthesize_burst: non-finite sample");
  return trace;
}

IQBurst synthesize_burst(const DeviceProfile& profile, std::uint64_t payload_seed, std::size_t length, double snr_db) {
  const auto trace = synthesize_trace(profile, payload_seed, length, SynthesisOptions{snr_db, true});
  IQBurst burst;
  burst.device_id = profile.id;
  burst.known = profile.known;
  burst.split = profile.known ? Split::train : Split::test;
  burst.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i)
    burst.samples[i] = {static_cast<float>(trace.impaired[i].real()), static_cast<float>(trace.impaired[i].imag())};
  return burst;
}

SplitCounts burst_split(std::size_t bursts) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(bursts)));
  c.val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(bursts)));
  if (c.train + c.val >= bursts || c.train == 0 || c.val == 0)
    throw ConfigError("dataset: " + std::to_string(bursts) +
                      " bursts per device cannot be split 3:1:1 with every split nonempty (need at least 5)");
  c.test = bursts - c.train - c.val;
  return c;
}

Dataset::Dataset(DatasetManifest manifest, std::vector<IQBurst> samples)
    : manifest_(std::move(manifest)), samples_(std::move(samples)) {
  if (manifest_.entries.size() != samples_.size())
    throw ContractError("dataset: manifest lists " + std::to_string(manifest_.entries.size()) + " samples, store has " +
                        std::to_string(samples_.size()));
  std::size_t max_id = 0;
  for (const auto& d : manifest_.devices) max_id = std::max(max_id, d.id);
  class_of_device_.assign(max_id + 1, kUnknown);
  for (const auto& d : manifest_.devices) {
    if (!d.known) continue;
    class_of_device_[d.id] = known_devices_.size();
    known_devices_.push_back(d.id);
  }
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.samples.size() != manifest_.options.length)
      throw ContractError("dataset: sample " + std::to_string(i) + " has length " + std::to_string(s.samples.size()));
    if (s.device_id >= class_of_device_.size()) throw ContractError("dataset: sample references an unlisted device");
    if (!s.known && s.split != Split::test) throw ContractError("dataset: unknown-device sample outside the test split");
  }
}

std::size_t Dataset::label(std::size_t i) const {
  const auto& s = samples_.at(i);
  return s.known ? class_of_device_.at(s.device_id) : kUnknown;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples_.size(); ++i)
    if (samples_[i].split == split) out.push_back(i);
  return out;
}

Dataset build_dataset(const std::vector<DeviceProfile>& fleet, const DatasetOptions& options,
                      const ImpairmentRanges& ranges) {
  if (fleet.empty()) throw ContractError("build_dataset: empty fleet");
  const SplitCounts per_device = burst_split(options.bursts_per_device);
  std::size_t max_transient = 0;
  for (const auto& d : fleet) {
    d.validate(options.burst_length);
    max_transient = std::max(max_transient, d.transient_length);
  }
  if (options.slices_per_burst == 0) throw ConfigError("dataset: slices_per_burst must be positive");
  if (options.length < 16) throw ConfigError("dataset: slice length too short");

  DatasetManifest manifest;
  manifest.devices = fleet;
  manifest.options = options;
  manifest.ranges = ranges;
  std::vector<IQBurst> samples;

  for (const auto& device : fleet) {
    const std::size_t lo = options.include_transients ? 0 : device.transient_length;
    const std::size_t hi_end = options.include_transients ? options.burst_length : options.burst_length - device.transient_length;
    if (hi_end < lo + options.length)
      throw ConfigError("dataset: slice length " + std::to_string(options.length) + " does not fit the " +
                        std::to_string(hi_end - lo) + "-sample steady state of device " + std::to_string(device.id));

    std::vector<Split> split_of(options.bursts_per_device, Split::test);
    if (device.known) {
      std::vector<std::size_t> order(options.bursts_per_device);
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      auto rng = make_stream({options.seed, device.id, 0x73706c6974ULL});
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < order.size(); ++i)
        split_of[order[i]] = i < per_device.train ? Split::train
                             : i < per_device.train + per_device.val ? Split::val
                                                                     : Split::test;
    }

    for (std::size_t b = 0; b < options.bursts_per_device; ++b) {
      const auto trace = synthesize_trace(device, stream_seed({options.seed, device.id, b}), options.burst_length,
                                          SynthesisOptions{options.snr_db, options.random_carrier_phase});
      auto rng = make_stream({options.seed, device.id, b, 0x736c696365ULL});
      std::uniform_int_distribution<std::size_t> start(lo, hi_end - options.length);
      for (std::size_t s = 0; s < options.slices_per_burst; ++s) {
        const std::size_t at = start(rng);
        double scale = 1.0;
        if (options.normalize) {
          double power = 0.0;
          for (std::size_t t = 0; t < options.length; ++t) power += std::norm(trace.impaired[at + t]);
          power /= static_cast<double>(options.length);
          if (power > 0.0) scale = 1.0 / std::sqrt(power);
        }
        IQBurst slice;
        slice.device_id = device.id;
        slice.burst_index = b;
        slice.split = split_of[b];
        slice.known = device.known;
        slice.samples.resize(options.length);
        for (std::size_t t = 0; t < options.length; ++t) {
          const auto v = trace.impaired[at + t] * scale;
          slice.samples[t] = {static_cast<float>(v.real()), static_cast<float>(v.imag())};
        }
        manifest.entries.push_back({device.id, b, slice.split});
        switch (slice.split) {
          case Split::train: ++manifest.counts.train; break;
          case Split::val: ++manifest.counts.val; break;
          case Split::test: ++manifest.counts.test; break;
        }
        samples.push_back(std::move(slice));
      }
    }
  }
  return Dataset(std::move(manifest), std::move(samples));
}

namespace {

constexpr char kMagic[4] = {'P', 'I', 'Q', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

void write_iq(const std::filesystem::path& path, const std::vector<IQBurst>& bursts) {
  const std::size_t length = bursts.empty() ? 0 : bursts.front().samples.size();
  for (const auto& b : bursts)
    if (b.samples.size() != length) throw ConformanceError("write_iq: all bursts must share one length");
  if (length > std::numeric_limits<std::uint32_t>::max() || bursts.size() > std::numeric_limits<std::uint32_t>::max())
    throw ConformanceError("write_iq: store too large for a 32-bit header");
  std::string buffer(kMagic, 4);
  put_u32(buffer, static_cast<std::uint32_t>(length));
  put_u32(buffer, static_cast<std::uint32_t>(bursts.size()));
  put_u32(buffer, 0);
  buffer.reserve(16 + bursts.size() * length * 8);
  for (const auto& b : bursts)
    for (const auto& s : b.samples) {
      put_u32(buffer, std::bit_cast<std::uint32_t>(s.real()));
      put_u32(buffer, std::bit_cast<std::uint32_t>(s.imag()));
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_iq: cannot open " + path.string());
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  if (!out) throw IoError("write_iq: write failed for " + path.string());
}

std::vector<IQBurst> load_iq(const std::filesystem::path& path, const IqFormat& format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_iq: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw FormatError("load_iq: truncated header in " + path.string(), bytes.size());
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("load_iq: bad magic, expected PIQ1", 0);
  const std::size_t length = get_u32(bytes, 4);
  const std::size_t count = get_u32(bytes, 8);
  const std::size_t expected = 16 + count * length * 8;
  if (bytes.size() < expected)
    throw FormatError("load_iq: truncated payload, header promises " + std::to_string(count) + " bursts of " +
                          std::to_string(length) + " samples",
                      bytes.size());
  if (bytes.size() > expected)
    throw FormatError("load_iq: sample-count mismatch, " + std::to_string(bytes.size() - expected) + " trailing bytes",
                      expected);

  const DatasetManifest manifest = read_manifest(format.manifest);
  if (manifest.entries.size() != count)
    throw FormatError("load_iq: manifest labels " + std::to_string(manifest.entries.size()) + " bursts, store holds " +
                          std::to_string(count),
                      8);
  if (manifest.options.length != length)
    throw FormatError("load_iq: manifest length " + std::to_string(manifest.options.length) + " differs from store length " +
                          std::to_string(length),
                      4);

  std::vector<bool> known(manifest.devices.size(), false);
  for (const auto& d : manifest.devices) {
    if (d.id >= known.size()) known.resize(d.id + 1, false);
    known[d.id] = d.known;
  }
  std::vector<IQBurst> bursts(count);
  std::size_t at = 16;
  for (std::size_t b = 0; b < count; ++b) {
    auto& burst = bursts[b];
    const auto& entry = manifest.entries[b];
    if (entry.device_id >= known.size()) throw FormatError("load_iq: manifest entry references an unknown device", 8);
    burst.device_id = entry.device_id;
    burst.burst_index = entry.burst_index;
    burst.split = entry.split;
    burst.known = known[entry.device_id];
    burst.samples.resize(length);
    for (std::size_t t = 0; t < length; ++t, at += 8)
      burst.samples[t] = {std::bit_cast<float>(get_u32(bytes, at)), std::bit_cast<float>(get_u32(bytes, at + 4))};
  }
  return bursts;
}

namespace {

json range_json(const std::pair<double, double>& r) { return json::array({r.first, r.second}); }

template <typename T>
std::pair<T, T> range_from(const json& j) {
  return {j.at(0).get<T>(), j.at(1).get<T>()};
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  json j;
  j["format"] = m.format;
  const auto& o = m.options;
  j["options"] = {{"bursts_per_device", o.bursts_per_device}, {"slices_per_burst", o.slices_per_burst},
                  {"length", o.length},                       {"burst_length", o.burst_length},
                  {"snr_db", o.snr_db},                       {"seed", o.seed},
                  {"include_transients", o.include_transients}, {"normalize", o.normalize},
                  {"random_carrier_phase", o.random_carrier_phase}};
  j["ranges"] = {{"gain_imbalance_db", range_json(m.ranges.gain_imbalance_db)},
                 {"phase_skew", range_json(m.ranges.phase_skew)},
                 {"cfo", range_json(m.ranges.cfo)},
                 {"dc_magnitude", range_json(m.ranges.dc_magnitude)},
                 {"pa_coefficient", range_json(m.ranges.pa_coefficient)},
                 {"transient_length", json::array({m.ranges.transient_length.first, m.ranges.transient_length.second})}};
  json devices = json::array();
  for (const auto& d : m.devices)
    devices.push_back({{"id", d.id},
                       {"known", d.known},
                       {"gain_imbalance_db", d.gain_imbalance_db},
                       {"phase_skew", d.phase_skew},
                       {"cfo", d.cfo},
                       {"dc_offset", json::array({d.dc_offset.real(), d.dc_offset.imag()})},
                       {"pa_coefficient", d.pa_coefficient},
                       {"transient_length", d.transient_length}});
  j["devices"] = devices;
  j["counts"] = {{"train", m.counts.train}, {"val", m.counts.val}, {"test", m.counts.test}};
  json entries = json::array();
  for (const auto& e : m.entries) entries.push_back(json::array({e.device_id, e.burst_index, std::string(to_string(e.split))}));
  j["samples"] = entries;

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("write_manifest: cannot open " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("write_manifest: write failed for " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("read_manifest: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("read_manifest: ") + e.what(), e.byte);
  }
  try {
    DatasetManifest m;
    m.format = j.at("format").get<std::string>();
    if (m.format != kManifestFormat) throw FormatError("read_manifest: unsupported format tag '" + m.format + "'", 0);
    const auto& o = j.at("options");
    m.options.bursts_per_device = o.at("bursts_per_device");
    m.options.slices_per_burst = o.at("slices_per_burst");
    m.options.length = o.at("length");
    m.options.burst_length = o.at("burst_length");
    m.options.snr_db = o.at("snr_db").is_null() ? INFINITY : o.at("snr_db").get<double>();
    m.options.seed = o.at("seed");
    m.options.include_transients = o.at("include_transients");
    m.options.normalize = o.at("normalize");
    m.options.random_carrier_phase = o.at("random_carrier_phase");
    const auto& r = j.at("ranges");
    m.ranges.gain_imbalance_db = range_from<double>(r.at("gain_imbalance_db"));
    m.ranges.phase_skew = range_from<double>(r.at("phase_skew"));
    m.ranges.cfo = range_from<double>(r.at("cfo"));
    m.ranges.dc_magnitude = range_from<double>(r.at("dc_magnitude"));
    m.ranges.pa_coefficient = range_from<double>(r.at("pa_coefficient"));
    m.ranges.transient_length = range_from<std::size_t>(r.at("transient_length"));
    for (const auto& d : j.at("devices")) {
      DeviceProfile p;
      p.id = d.at("id");
      p.known = d.at("known");
      p.gain_imbalance_db = d.at("gain_imbalance_db");
      p.phase_skew = d.at("phase_skew");
      p.cfo = d.at("cfo");
      p.dc_offset = {d.at("dc_offset").at(0).get<double>(), d.at("dc_offset").at(1).get<double>()};
      p.pa_coefficient = d.at("pa_coefficient");
      p.transient_length = d.at("transient_length");
      m.devices.push_back(p);
    }
    m.counts = {j.at("counts").at("train"), j.at("counts").at("val"), j.at("counts").at("test")};
    for (const auto& e : j.at("samples"))
      m.entries.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(), parse_split(e.at(2).get<std::string>())});
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("read_manifest: ") + e.what(), 0);
  }
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  write_iq(dir / "iq.bin", dataset.samples());
  write_manifest(dir / "manifest.json", dataset.manifest());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  auto bursts = load_iq(dir / "iq.bin", IqFormat{dir / "manifest.json"});
  return Dataset(read_manifest(dir / "manifest.json"), std::move(bursts));
}

}  // namespace posr
