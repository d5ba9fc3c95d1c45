#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// Synthetic guided-wave acquisitions on a square plate with four corner
// transducers, the band-pass compression chain, and dataset assembly.
//
// Coordinates are millimetres, centred on the plate, x to the right and y up.
// Transducers sit at the corners of the inner square and are numbered
// counterclockwise from the lower left, matching the dihedral corner labels.
// Times are microseconds unless a name says otherwise.
namespace platesym::signals {

using Point = std::array<double, 2>;

inline constexpr std::size_t kPairs = 16;

struct PlateConfig {
  double side_mm = 610.0;
  double thickness_mm = 1.2;
  double transducer_span_mm = 350.0;
  double load_side_mm = 40.0;
  std::size_t grid_points = 51;
  double grid_extent_mm = 250.0;
  double frequency_khz = 300.0;
  double cycles = 5.0;
  double record_ms = 0.4;
  std::size_t samples = 10000;
  std::size_t baselines = 6;

  // Phenomenological propagation model.
  double a0_velocity = 2.25;  // mm/us
  double s0_velocity = 5.4;
  double s0_amplitude = 0.25;
  double dispersion_per_mm = 1.0e-3;  // burst length grows as (1 + k d)
  double reflection_coefficient = 0.6;
  double a0_attenuation = 0.35;  // fraction lost across a full load chord
  double s0_attenuation = 0.1;
  double scatter_amplitude = 0.1;
  double noise_std = 0.01;
  double amplitude_jitter = 0.005;  // per acquisition, relative

  double sample_period_us() const { return record_ms * 1000.0 / static_cast<double>(samples); }
  double grid_pitch_mm() const;
  std::vector<Point> grid() const;
  Point transducer(int corner) const;
  /// Ready-made arrival of S0 along an edge, the earliest wave at any receiver.
  double first_arrival_us() const;
  void validate() const;
};

/// Deviations from an ideal square plate. All zeros means exact D4 symmetry.
struct SymmetryBreakSpec {
  double anisotropy = 0.0;          // v(theta) = v (1 + a cos 2 theta)
  double gain_jitter = 0.0;         // relative std of per-transducer gain
  double phase_jitter_us = 0.0;     // std of per-transducer trigger delay
  double edge_irregularity_mm = 0.0;  // std of per-edge position offset

  bool is_zero() const {
    return anisotropy == 0.0 && gain_jitter == 0.0 && phase_jitter_us == 0.0 &&
           edge_irregularity_mm == 0.0;
  }
  /// Small but nonzero values used for weakly broken synthetic plates.
  static SymmetryBreakSpec weak();
};

/// One fixed draw of the plate imperfections.
struct PlateRealization {
  double anisotropy = 0.0;
  std::array<double, 4> gain{1.0, 1.0, 1.0, 1.0};
  std::array<double, 4> delay_us{};
  std::array<double, 4> edge_offset_mm{};  // left, right, bottom, top; + moves outward
};

PlateRealization realize(const SymmetryBreakSpec& sym, std::uint64_t seed);

/// Carrier of the actuation. A healthy generator emits the configured burst.
struct Excitation {
  double frequency_khz = 300.0;
  double cycles = 5.0;
  double amplitude = 1.0;
};

/// Raw acquisition: V[r][s][t], receiver-major, samples per pair.
struct RawAdjacency {
  std::size_t samples = 0;
  std::vector<double> values;
  std::span<const double> pair(int r, int s) const {
    return {values.data() + (static_cast<std::size_t>(r) * 4 + s) * samples, samples};
  }
};

/// Noise-free superposition of direct, reflected and (with a load) attenuated
/// and scattered wavepackets for every sender-receiver pair.
RawAdjacency propagate(const PlateConfig& plate, const PlateRealization& real,
                       const std::optional<Point>& load, const Excitation& ex);

/// propagate() plus Gaussian noise and acquisition amplitude jitter; the plate
/// imperfections and the noise are both drawn from `seed`.
RawAdjacency synthesize(const PlateConfig& plate, const std::optional<Point>& load,
                        const SymmetryBreakSpec& sym, std::uint64_t seed);

/// The generated actuation voltage over the record window.
std::vector<double> excitation_waveform(const PlateConfig& plate, const Excitation& ex);

// ---- compression -------------------------------------------------------------

struct CompressConfig {
  std::size_t band_first_bin = 72;  // 180 kHz at 2.5 kHz resolution
  std::size_t band_last_bin = 167;  // 417.5 kHz, the last bin inside 420 kHz
  std::size_t band_length = 192;
  std::size_t trim = 34;
  bool remove_mean = true;

  std::size_t band_bins() const { return band_last_bin - band_first_bin + 1; }
  std::size_t output_length() const { return band_length - trim; }
  void validate(std::size_t raw_samples) const;
};

/// Keeps FFTW bins [first, last] of the raw record, places them at bins 1..n
/// of a band_length-point spectrum (DC empty), inverts onto band_length
/// samples at unchanged amplitude, and drops the first `trim`.
class Compressor {
 public:
  Compressor(std::size_t raw_samples, CompressConfig cfg = {});
  ~Compressor();
  Compressor(const Compressor&) = delete;
  Compressor& operator=(const Compressor&) = delete;

  const CompressConfig& config() const { return cfg_; }
  std::size_t raw_samples() const { return n_; }

  void compress(std::span<const double> raw, std::span<double> out);
  std::vector<double> compress(std::span<const double> raw);
  /// |X_k| over the band, scaled like compress().
  std::vector<double> band_magnitudes(std::span<const double> raw);

 private:
  void forward(std::span<const double> raw);

  std::size_t n_;
  CompressConfig cfg_;
  double* in_ = nullptr;
  void* out_ = nullptr;  // fftw_complex*
  void* plan_ = nullptr;
  std::vector<double> cos_, sin_;  // inverse DFT twiddles, band_length entries
};

std::vector<double> compress(std::span<const double> raw, const CompressConfig& cfg = {});

/// Compresses all 16 pairs of a raw acquisition into [4, 4, output_length].
std::vector<double> compress_adjacency(Compressor& c, const RawAdjacency& raw);

/// Elementwise v - b over equally sized adjacency signals.
std::vector<double> baseline_subtract(std::span<const double> v, std::span<const double> b);

/// Sample range [first, last) of the compressed sequence covering t0..t1 ms.
struct WindowRange {
  std::size_t first = 0;
  std::size_t last = 0;
};
WindowRange window_samples(double t0_ms, double t1_ms, const CompressConfig& cfg = {},
                           double record_ms = 0.4);
/// Zeroes every time sample outside the window; blocks of `len` samples.
void apply_window(std::span<double> x, std::size_t len, WindowRange w);

// ---- datasets ----------------------------------------------------------------

/// Injected bad acquisitions, for exercising curation.
struct DefectSpec {
  std::size_t spectral = 0;   // generator emitted the wrong waveform
  std::size_t received = 0;   // one receiver channel grossly mis-scaled
  std::size_t amplitude = 0;  // spike in the record
};

struct SynthConfig {
  PlateConfig plate;
  SymmetryBreakSpec sym;
  CompressConfig compress;
  DefectSpec defects;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const PlateConfig& p);
void from_json(const nlohmann::json& j, PlateConfig& p);
void to_json(nlohmann::json& j, const SymmetryBreakSpec& s);
void from_json(const nlohmann::json& j, SymmetryBreakSpec& s);
void to_json(nlohmann::json& j, const CompressConfig& c);
void from_json(const nlohmann::json& j, CompressConfig& c);
void to_json(nlohmann::json& j, const DefectSpec& d);
void from_json(const nlohmann::json& j, DefectSpec& d);
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct Dataset {
  nlohmann::json meta = nlohmann::json::object();
  std::size_t time_len = 158;
  std::vector<Point> positions;   // N load centres
  std::vector<double> damaged;    // [N, 4, 4, T] compressed
  std::vector<double> baselines;  // [M, 4, 4, T] compressed
  std::vector<double> spectra;    // [N + M, bins] excitation band magnitudes
  std::size_t spectrum_bins = 0;

  std::size_t size() const { return positions.size(); }
  std::size_t baseline_count() const { return baselines.size() / stride(); }
  std::size_t stride() const { return kPairs * time_len; }
  std::span<const double> example(std::size_t i) const { return {damaged.data() + i * stride(), stride()}; }
  std::span<const double> baseline(std::size_t j) const { return {baselines.data() + j * stride(), stride()}; }
  void validate() const;
};

/// Generates the grid of loaded acquisitions and the baselines. Position i
/// draws from its own stream keyed by (seed, i), so the parallel and serial
/// paths produce identical bytes.
Dataset synthesize_dataset(const SynthConfig& cfg, bool parallel = true);

struct CurationThresholds {
  double spectral = 0.5;   // ||S - mean S|| / ||mean S||
  double received = 2.0;   // max over paths of ||V_rs - mean V_rs|| / ||mean V_rs||
  double amplitude = 4.0;  // max |V - B| over its median across examples
};

struct CurationReport {
  std::size_t spectral = 0, received = 0, amplitude = 0;
  std::vector<std::size_t> removed;  // original indices
  nlohmann::json to_json() const;
};

/// Applies the three filters in order and drops flagged examples; the report
/// is also appended to dataset.meta["curation"].
CurationReport curate(Dataset& ds, const CurationThresholds& th = {});

/// Labelled examples for one task, [count, 4, 4, T] inputs.
struct TaskSet {
  std::size_t time_len = 158;
  std::vector<double> inputs;
  std::vector<double> targets;     // 2 per example (mm) or 1 (label)
  std::vector<std::size_t> group;  // examples sharing a group are averaged at test time
  std::size_t count() const { return group.size(); }
  std::size_t target_size() const { return count() ? targets.size() / count() : 0; }
  std::span<const double> input(std::size_t i) const {
    return {inputs.data() + i * kPairs * time_len, kPairs * time_len};
  }
};

/// Location i with every baseline subtracted: one group of M views each.
TaskSet localization_set(const Dataset& ds, std::span<const std::size_t> locations);

/// Undamaged examples as normalised convex combinations of the baselines.
struct BalancedDetection {
  std::vector<double> undamaged;  // [K, 4, 4, T]
  std::vector<std::vector<double>> coefficients;
};
BalancedDetection balance_detection(const Dataset& ds, std::uint64_t seed);
std::vector<double> combine_baselines(const Dataset& ds, std::span<const double> coeffs);

/// Raw damaged examples (label 1) and balanced undamaged ones (label 0).
/// With `subtract`, each example becomes one group of M views, one per
/// baseline removed, as in localization_set.
TaskSet detection_set(const Dataset& ds, const BalancedDetection& bal,
                      std::span<const std::size_t> damaged, std::span<const std::size_t> undamaged,
                      bool subtract = false);

struct Split {
  std::vector<std::size_t> train, test;
};
/// Shuffles 0..n-1 with the seed and puts round(ratio * n) in train; both
/// halves are returned sorted.
Split split(std::size_t n, double ratio, std::uint64_t seed);

// ---- container ---------------------------------------------------------------
//
// Byte layout of a .pwds file (integers little-endian):
//   [0, 8)     magic "PLATEWDS"
//   [8, 12)    u32 version (1)
//   [12, 20)   u64 header length H
//   [20, 20+H) JSON header: {"meta", "time_len", "spectrum_bins",
//              "tensors": [{"name", "shape"}...]}
//   then each tensor as f64 little-endian in header order:
//   positions [N, 2], damaged [N, 4, 4, T], baselines [M, 4, 4, T],
//   spectra [N + M, bins].

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

/// Reads a directory holding positions.csv (x,y per line, mm), signals.f64
/// ([N, 4, 4, T] little-endian) and baselines.f64 ([M, 4, 4, T]). Returns
/// nullopt when any of the files is absent.
std::optional<Dataset> import_directory(const std::filesystem::path& dir, std::size_t time_len = 158);

/// splitmix64 finaliser used to derive independent streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace platesym::signals
