#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posr/iq.hpp"

namespace posr {

/// Hardware impairments that fingerprint one emitter.
struct DeviceProfile {
  std::size_t id = 0;
  bool known = true;
  double gain_imbalance_db = 0.0;
  double phase_skew = 0.0;  // radians
  double cfo = 0.0;         // cycles per sample
  std::complex<double> dc_offset{0.0, 0.0};
  double pa_coefficient = 0.0;  // y = x (1 - c |x|^2)
  std::size_t transient_length = 0;

  void validate(std::size_t burst_length) const;
  bool operator==(const DeviceProfile&) const = default;
};

/// Closed ranges the fleet generator draws impairments from.
struct ImpairmentRanges {
  std::pair<double, double> gain_imbalance_db{-6.0, 6.0};
  std::pair<double, double> phase_skew{-0.6, 0.6};
  std::pair<double, double> cfo{-0.0095, 0.0095};
  std::pair<double, double> dc_magnitude{0.0, 1.5};
  std::pair<double, double> pa_coefficient{0.0, 0.25};
  std::pair<std::size_t, std::size_t> transient_length{32, 128};

  void validate() const;
  /// All impairments zero: every device emits the same ideal waveform.
  static ImpairmentRanges ideal();
  bool operator==(const ImpairmentRanges&) const = default;
};

/// n_known known devices followed by n_unknown unknown ones, pairwise distinct.
std::vector<DeviceProfile> make_fleet(std::size_t n_known, std::size_t n_unknown, std::uint64_t seed,
                                      const ImpairmentRanges& ranges = {});

enum class Split { train, val, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// One complex baseband sequence with its provenance: a synthesized burst, or
/// a slice of one (the network input x).
struct IQBurst {
  std::vector<std::complex<float>> samples;
  std::size_t device_id = 0;
  std::size_t burst_index = 0;
  Split split = Split::test;
  bool known = true;

  IqSequence as_sequence() const;
};

inline constexpr std::size_t kSamplesPerSymbol = 8;
inline constexpr double kRollOff = 0.35;
inline constexpr std::size_t kFilterSpanSymbols = 8;

/// Root-raised-cosine taps (unit energy) for the common QPSK waveform.
std::vector<double> rrc_taps(double roll_off = kRollOff, std::size_t samples_per_symbol = kSamplesPerSymbol,
                             std::size_t span_symbols = kFilterSpanSymbols);

struct SynthesisTrace {
  std::vector<std::complex<double>> symbols;
  IqSequence clean;     // pulse-shaped QPSK before impairments, unit average power
  IqSequence impaired;  // after the full impairment chain and noise
  double carrier_phase = 0.0;
  /// clean[n] = sqrt(sps) * sum_k symbols[k] * h[n + symbol_offset * sps - k * sps]
  std::size_t symbol_offset = 0;
};

struct SynthesisOptions {
  double snr_db = 20.0;  // +inf disables noise
  bool random_carrier_phase = true;
};

/// Random QPSK, RRC pulse shaping, then PA nonlinearity, IQ imbalance, DC
/// offset, CFO phasor, ON/OFF ramps and AWGN, in that order.
SynthesisTrace synthesize_trace(const DeviceProfile& profile, std::uint64_t payload_seed, std::size_t length,
                                const SynthesisOptions& options);

IQBurst synthesize_burst(const DeviceProfile& profile, std::uint64_t payload_seed, std::size_t length, double snr_db);

struct DatasetOptions {
  std::size_t bursts_per_device = 20;
  std::size_t slices_per_burst = 10;
  std::size_t length = 1024;        // slice length L
  std::size_t burst_length = 4096;  // full burst incl. transients
  double snr_db = 20.0;
  std::uint64_t seed = 1;
  bool include_transients = false;  // slice anywhere, not only in the steady state
  bool normalize = true;            // scale every slice to unit average power
  bool random_carrier_phase = true;

  bool operator==(const DatasetOptions&) const = default;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  bool operator==(const SplitCounts&) const = default;
};

inline constexpr std::string_view kManifestFormat = "proto-osr.manifest.v1";

struct DatasetManifest {
  std::string format{kManifestFormat};
  std::vector<DeviceProfile> devices;
  DatasetOptions options;
  ImpairmentRanges ranges;
  SplitCounts counts;  // slices per split
  /// Per stored slice: device id, burst index, split. Parallel to the IQ store.
  struct Entry {
    std::size_t device_id = 0;
    std::size_t burst_index = 0;
    Split split = Split::test;
    bool operator==(const Entry&) const = default;
  };
  std::vector<Entry> entries;

  bool operator==(const DatasetManifest&) const = default;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetManifest manifest, std::vector<IQBurst> samples);

  const DatasetManifest& manifest() const noexcept { return manifest_; }
  const std::vector<IQBurst>& samples() const noexcept { return samples_; }
  const IQBurst& sample(std::size_t i) const { return samples_.at(i); }
  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t classes() const noexcept { return known_devices_.size(); }
  std::size_t length() const noexcept { return manifest_.options.length; }

  /// Class index of sample i, or kUnknown for unknown devices.
  std::size_t label(std::size_t i) const;
  /// Device id of each class index.
  const std::vector<std::size_t>& known_devices() const noexcept { return known_devices_; }

  std::vector<std::size_t> indices(Split split) const;

 private:
  DatasetManifest manifest_;
  std::vector<IQBurst> samples_;
  std::vector<std::size_t> known_devices_;
  std::vector<std::size_t> class_of_device_;
};

/// Synthesizes bursts, splits known devices 3:1:1 at burst level, puts unknown
/// devices entirely into test, and slices every burst.
Dataset build_dataset(const std::vector<DeviceProfile>& fleet, const DatasetOptions& options,
                      const ImpairmentRanges& ranges = {});

/// Burst counts (train, val, test) for a known device.
SplitCounts burst_split(std::size_t bursts_per_device);

// IQ store: 16-byte header ("PIQ1", u32 L, u32 count, u32 reserved) then
// count * L interleaved little-endian float32 (I, Q) pairs.
void write_iq(const std::filesystem::path& path, const std::vector<IQBurst>& bursts);

struct IqFormat {
  std::filesystem::path manifest;  // sidecar JSON with device labels and splits
};

std::vector<IQBurst> load_iq(const std::filesystem::path& path, const IqFormat& format);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Writes <dir>/iq.bin and <dir>/manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace posr
