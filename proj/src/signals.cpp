#include "platesym/signals.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fftw3.h>

namespace platesym::signals {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

// FFTW's planner is not reentrant; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct Square {
  double cx, cy, half;
};

// Length of the part of segment p -> q inside the square (Liang-Barsky).
double chord(Point p, Point q, const Square& sq) {
  double t0 = 0.0, t1 = 1.0;
  const double d[2] = {q[0] - p[0], q[1] - p[1]};
  const double lo[2] = {sq.cx - sq.half, sq.cy - sq.half};
  const double hi[2] = {sq.cx + sq.half, sq.cy + sq.half};
  for (int a = 0; a < 2; ++a) {
    if (d[a] == 0.0) {
      if (p[a] < lo[a] || p[a] > hi[a]) return 0.0;
      continue;
    }
    double ta = (lo[a] - p[a]) / d[a], tb = (hi[a] - p[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 <= t0) return 0.0;
  return (t1 - t0) * std::sqrt(d[0] * d[0] + d[1] * d[1]);
}

double distance(Point a, Point b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  return std::sqrt(dx * dx + dy * dy);
}

// cos(2 theta) of the direction a -> b.
double cos2(Point a, Point b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  const double n = dx * dx + dy * dy;
  return n == 0.0 ? 0.0 : (dx * dx - dy * dy) / n;
}

struct Packet {
  double centre_us;
  double amplitude;
  double duration_us;
};

void add_packet(std::span<double> out, double dt, double freq_mhz, const Packet& p) {
  const double half = 0.5 * p.duration_us;
  const auto n0 = static_cast<long>(std::ceil((p.centre_us - half) / dt));
  const auto n1 = static_cast<long>(std::floor((p.centre_us + half) / dt));
  const long last = static_cast<long>(out.size()) - 1;
  for (long n = std::max(0L, n0); n <= std::min(last, n1); ++n) {
    const double tau = static_cast<double>(n) * dt - p.centre_us;
    const double u = tau / p.duration_us;
    if (std::abs(u) >= 0.5) continue;
    out[static_cast<std::size_t>(n)] +=
        p.amplitude * 0.5 * (1.0 + std::cos(kTwoPi * u)) * std::sin(kTwoPi * freq_mhz * tau);
  }
}

template <typename T>
void put_le(std::ostream& os, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& is) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("dataset: truncated file");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void write_f64(std::ostream& os, std::span<const double> v) {
  for (double x : v) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(x));
}

std::vector<double> read_f64(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return v;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  const double hi = *mid;
  return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

constexpr char kMagic[8] = {'P', 'L', 'A', 'T', 'E', 'W', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kBaselineStream = std::uint64_t{1} << 32;
constexpr std::uint64_t kDefectStream = std::uint64_t{2} << 32;

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---- plate -------------------------------------------------------------------

double PlateConfig::grid_pitch_mm() const {
  return grid_points > 1 ? grid_extent_mm / static_cast<double>(grid_points - 1) : 0.0;
}

std::vector<Point> PlateConfig::grid() const {
  // Integer numerators keep the lattice exactly symmetric about the centre.
  std::vector<double> axis(grid_points, 0.0);
  const double m = static_cast<double>(grid_points) - 1.0;
  for (std::size_t i = 0; i < grid_points && grid_points > 1; ++i) {
    axis[i] = grid_extent_mm * (2.0 * static_cast<double>(i) - m) / (2.0 * m);
  }
  std::vector<Point> pts;
  pts.reserve(grid_points * grid_points);
  for (double y : axis)
    for (double x : axis) pts.push_back({x, y});
  return pts;
}

Point PlateConfig::transducer(int corner) const {
  const double h = 0.5 * transducer_span_mm;
  switch (corner & 3) {
    case 0: return {-h, -h};
    case 1: return {h, -h};
    case 2: return {h, h};
    default: return {-h, h};
  }
}

double PlateConfig::first_arrival_us() const { return transducer_span_mm / s0_velocity; }

void PlateConfig::validate() const {
  require(side_mm > transducer_span_mm && transducer_span_mm > 0, "plate: transducers must fit on the plate");
  require(load_side_mm > 0, "plate: load side must be positive");
  require(grid_points >= 1, "plate: grid needs at least one point");
  require(grid_extent_mm >= 0 && 0.5 * (grid_extent_mm + load_side_mm) <= 0.5 * side_mm,
          "plate: load grid must lie on the plate");
  require(frequency_khz > 0 && cycles > 0, "plate: bad excitation");
  require(samples >= 2 && record_ms > 0, "plate: bad record window");
  require(a0_velocity > 0 && s0_velocity > 0, "plate: velocities must be positive");
  require(noise_std >= 0 && amplitude_jitter >= 0, "plate: noise levels must be non-negative");
  require(baselines >= 1, "plate: at least one baseline acquisition is needed");
}

SymmetryBreakSpec SymmetryBreakSpec::weak() {
  SymmetryBreakSpec s;
  s.anisotropy = 0.02;
  s.gain_jitter = 0.05;
  s.phase_jitter_us = 0.1;
  s.edge_irregularity_mm = 2.0;
  return s;
}

PlateRealization realize(const SymmetryBreakSpec& sym, std::uint64_t seed) {
  require(sym.anisotropy > -1.0 && sym.anisotropy < 1.0, "symmetry break: |anisotropy| must be < 1");
  require(sym.gain_jitter >= 0 && sym.phase_jitter_us >= 0 && sym.edge_irregularity_mm >= 0,
          "symmetry break: jitter levels must be non-negative");
  PlateRealization r;
  r.anisotropy = sym.anisotropy;
  std::mt19937_64 rng(mix_seed(seed, ~std::uint64_t{0}));
  std::normal_distribution<double> nd(0.0, 1.0);
  // Always draw, so the realisation for one level is a scaled copy of another.
  for (int k = 0; k < 4; ++k) r.gain[k] = 1.0 + sym.gain_jitter * nd(rng);
  for (int k = 0; k < 4; ++k) r.delay_us[k] = sym.phase_jitter_us * nd(rng);
  for (int k = 0; k < 4; ++k) r.edge_offset_mm[k] = sym.edge_irregularity_mm * nd(rng);
  return r;
}

// ---- propagation -------------------------------------------------------------

std::vector<double> excitation_waveform(const PlateConfig& plate, const Excitation& ex) {
  std::vector<double> w(plate.samples, 0.0);
  const double duration = ex.cycles / (ex.frequency_khz / 1000.0);
  add_packet(w, plate.sample_period_us(), ex.frequency_khz / 1000.0,
             {0.5 * duration, ex.amplitude, duration});
  return w;
}

RawAdjacency propagate(const PlateConfig& plate, const PlateRealization& real,
                       const std::optional<Point>& load, const Excitation& ex) {
  plate.validate();
  const double hs = 0.5 * plate.side_mm;
  const double hl = 0.5 * plate.load_side_mm;
  if (load) {
    require(std::abs((*load)[0]) + hl <= hs && std::abs((*load)[1]) + hl <= hs,
            "synthesize: load footprint lies outside the plate");
  }
  const double dt = plate.sample_period_us();
  const double freq = ex.frequency_khz / 1000.0;
  const double d0 = ex.cycles / freq;
  const double ref = plate.transducer_span_mm;
  const double a = real.anisotropy;

  RawAdjacency raw;
  raw.samples = plate.samples;
  raw.values.assign(kPairs * plate.samples, 0.0);

  const std::array<double, 4> edge{-hs - real.edge_offset_mm[0], hs + real.edge_offset_mm[1],
                                   -hs - real.edge_offset_mm[2], hs + real.edge_offset_mm[3]};
  std::optional<Square> sq;
  if (load) sq = Square{(*load)[0], (*load)[1], hl};

  struct Mode {
    double velocity, amplitude, attenuation;
  };
  const Mode modes[2] = {{plate.a0_velocity, 1.0, plate.a0_attenuation},
                         {plate.s0_velocity, plate.s0_amplitude, plate.s0_attenuation}};

  for (int r = 0; r < 4; ++r) {
    const Point rp = plate.transducer(r);
    for (int s = 0; s < 4; ++s) {
      const Point sp = plate.transducer(s);
      std::span<double> out(raw.values.data() + static_cast<std::size_t>(r * 4 + s) * plate.samples,
                            plate.samples);
      const double gain = ex.amplitude * real.gain[r] * real.gain[s];
      const double emit = 0.5 * d0 + real.delay_us[r] + real.delay_us[s];

      auto ray = [&](double length, double loss, double scale, const Mode& m, double c2) {
        const double spread = 1.0 + plate.dispersion_per_mm * length;
        const double v = m.velocity * (1.0 + a * c2);
        const double amp = gain * scale * m.amplitude * std::sqrt(ref / std::max(length, hl)) *
                           (1.0 - m.attenuation * std::min(loss, plate.load_side_mm) / plate.load_side_mm) /
                           std::sqrt(spread);
        add_packet(out, dt, freq, {emit + length / v, amp, d0 * spread});
      };

      for (const auto& m : modes) {
        if (r != s) {
          const double loss = sq ? chord(sp, rp, *sq) : 0.0;
          ray(distance(sp, rp), loss, 1.0, m, cos2(sp, rp));
        }
        // First-order image sources, one per edge.
        for (int e = 0; e < 4; ++e) {
          Point img = sp;
          const int axis = e / 2;
          img[axis] = 2.0 * edge[e] - sp[axis];
          double loss = 0.0;
          if (sq) {
            Square mirror = *sq;
            (axis == 0 ? mirror.cx : mirror.cy) = 2.0 * edge[e] - (axis == 0 ? sq->cx : sq->cy);
            loss = chord(img, rp, *sq) + chord(img, rp, mirror);
          }
          ray(distance(img, rp), loss, plate.reflection_coefficient, m, cos2(img, rp));
        }
      }

      if (load) {
        // Weak A0 packet re-radiated from the load centre.
        const Point lp = *load;
        const double d1 = distance(sp, lp), d2 = distance(lp, rp);
        const double v1 = modes[0].velocity * (1.0 + a * cos2(sp, lp));
        const double v2 = modes[0].velocity * (1.0 + a * cos2(lp, rp));
        const double spread = 1.0 + plate.dispersion_per_mm * (d1 + d2);
        // Phase-inverted, like the shadow a forward scatterer casts.
        const double amp = -gain * plate.scatter_amplitude *
                           std::sqrt(ref / std::max(d1, hl)) * std::sqrt(ref / std::max(d2, hl)) /
                           std::sqrt(spread);
        add_packet(out, dt, freq, {emit + d1 / v1 + d2 / v2, amp, d0 * spread});
      }
    }
  }
  return raw;
}

namespace {

// One acquisition: plate response, amplitude jitter and sensor noise.
RawAdjacency acquire(const PlateConfig& plate, const PlateRealization& real,
                     const std::optional<Point>& load, Excitation ex, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  ex.amplitude *= 1.0 + plate.amplitude_jitter * nd(rng);
  auto raw = propagate(plate, real, load, ex);
  if (plate.noise_std > 0.0) {
    for (auto& v : raw.values) v += plate.noise_std * nd(rng);
  }
  return raw;
}

Excitation nominal(const PlateConfig& plate) { return {plate.frequency_khz, plate.cycles, 1.0}; }

}  // namespace

RawAdjacency synthesize(const PlateConfig& plate, const std::optional<Point>& load,
                        const SymmetryBreakSpec& sym, std::uint64_t seed) {
  const auto real = realize(sym, seed);
  std::mt19937_64 rng(mix_seed(seed, 0));
  return acquire(plate, real, load, nominal(plate), rng);
}

// ---- compression -------------------------------------------------------------

void CompressConfig::validate(std::size_t raw_samples) const {
  require(band_first_bin >= 1 && band_last_bin >= band_first_bin, "compress: empty band");
  require(band_last_bin <= raw_samples / 2, "compress: band exceeds the Nyquist bin");
  require(band_bins() <= band_length / 2, "compress: band does not fit the output spectrum");
  require(trim < band_length, "compress: trim removes the whole sequence");
}

Compressor::Compressor(std::size_t raw_samples, CompressConfig cfg) : n_(raw_samples), cfg_(cfg) {
  cfg_.validate(n_);
  std::lock_guard lock(planner_mutex());
  in_ = fftw_alloc_real(n_);
  auto* out = fftw_alloc_complex(n_ / 2 + 1);
  out_ = out;
  plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), in_, out, FFTW_ESTIMATE);
  if (!plan_) throw std::runtime_error("compress: FFTW planning failed");
  const std::size_t L = cfg_.band_length;
  cos_.resize(L);
  sin_.resize(L);
  for (std::size_t k = 0; k < L; ++k) {
    cos_[k] = std::cos(kTwoPi * static_cast<double>(k) / static_cast<double>(L));
    sin_[k] = std::sin(kTwoPi * static_cast<double>(k) / static_cast<double>(L));
  }
}

Compressor::~Compressor() {
  std::lock_guard lock(planner_mutex());
  if (plan_) fftw_destroy_plan(static_cast<fftw_plan>(plan_));
  fftw_free(in_);
  fftw_free(out_);
}

void Compressor::forward(std::span<const double> raw) {
  require(raw.size() == n_, "compress: expected " + std::to_string(n_) + " samples, got " +
                                std::to_string(raw.size()));
  std::copy(raw.begin(), raw.end(), in_);
  fftw_execute(static_cast<fftw_plan>(plan_));
}

void Compressor::compress(std::span<const double> raw, std::span<double> out) {
  require(out.size() == cfg_.output_length(), "compress: output buffer has wrong length");
  forward(raw);
  const auto* X = static_cast<const fftw_complex*>(out_);
  const std::size_t L = cfg_.band_length, nb = cfg_.band_bins();
  const double scale = static_cast<double>(L) / static_cast<double>(n_);
  for (std::size_t n = cfg_.trim; n < L; ++n) {
    double acc = 0.0;
    for (std::size_t k = 1; k <= nb; ++k) {
      const auto& x = X[cfg_.band_first_bin + k - 1];
      const std::size_t ph = (k * n) % L;
      const double w = 2 * k == L ? 1.0 : 2.0;  // Nyquist bin keeps its real part only
      acc += w * (x[0] * cos_[ph] - (2 * k == L ? 0.0 : x[1] * sin_[ph]));
    }
    out[n - cfg_.trim] = acc * scale / static_cast<double>(L);
  }
  if (cfg_.remove_mean) {
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size());
    for (auto& v : out) v -= mean;
  }
}

std::vector<double> Compressor::compress(std::span<const double> raw) {
  std::vector<double> out(cfg_.output_length());
  compress(raw, out);
  return out;
}

std::vector<double> Compressor::band_magnitudes(std::span<const double> raw) {
  forward(raw);
  const auto* X = static_cast<const fftw_complex*>(out_);
  std::vector<double> m(cfg_.band_bins());
  for (std::size_t k = 0; k < m.size(); ++k) {
    const auto& x = X[cfg_.band_first_bin + k];
    m[k] = 2.0 * std::hypot(x[0], x[1]) / static_cast<double>(n_);
  }
  return m;
}

std::vector<double> compress(std::span<const double> raw, const CompressConfig& cfg) {
  Compressor c(raw.size(), cfg);
  return c.compress(raw);
}

std::vector<double> compress_adjacency(Compressor& c, const RawAdjacency& raw) {
  require(raw.samples == c.raw_samples(), "compress: acquisition length does not match the compressor");
  const std::size_t T = c.config().output_length();
  std::vector<double> out(kPairs * T);
  for (int r = 0; r < 4; ++r)
    for (int s = 0; s < 4; ++s)
      c.compress(raw.pair(r, s), std::span<double>(out.data() + static_cast<std::size_t>(r * 4 + s) * T, T));
  return out;
}

std::vector<double> baseline_subtract(std::span<const double> v, std::span<const double> b) {
  require(v.size() == b.size(), "baseline_subtract: shape mismatch");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - b[i];
  return out;
}

WindowRange window_samples(double t0_ms, double t1_ms, const CompressConfig& cfg, double record_ms) {
  require(t0_ms >= 0.0 && t1_ms <= record_ms + 1e-12 && t0_ms < t1_ms,
          "window: must satisfy 0 <= t0 < t1 <= record length");
  const double L = static_cast<double>(cfg.band_length);
  const auto edge = [&](double t) {
    const long idx = static_cast<long>(std::floor(t / record_ms * L)) - static_cast<long>(cfg.trim);
    return static_cast<std::size_t>(std::clamp(idx, 0L, static_cast<long>(cfg.output_length())));
  };
  WindowRange w{edge(t0_ms), edge(t1_ms)};
  require(w.first < w.last, "window: lies entirely before the retained samples");
  return w;
}

void apply_window(std::span<double> x, std::size_t len, WindowRange w) {
  require(len > 0 && x.size() % len == 0, "window: buffer is not a whole number of sequences");
  require(w.first < w.last && w.last <= len, "window: range outside sequence");
  for (std::size_t b = 0; b < x.size(); b += len) {
    for (std::size_t t = 0; t < w.first; ++t) x[b + t] = 0.0;
    for (std::size_t t = w.last; t < len; ++t) x[b + t] = 0.0;
  }
}

// ---- configs -----------------------------------------------------------------

void to_json(nlohmann::json& j, const PlateConfig& p) {
  j = {{"side_mm", p.side_mm},
       {"thickness_mm", p.thickness_mm},
       {"transducer_span_mm", p.transducer_span_mm},
       {"load_side_mm", p.load_side_mm},
       {"grid_points", p.grid_points},
       {"grid_extent_mm", p.grid_extent_mm},
       {"frequency_khz", p.frequency_khz},
       {"cycles", p.cycles},
       {"record_ms", p.record_ms},
       {"samples", p.samples},
       {"baselines", p.baselines},
       {"a0_velocity", p.a0_velocity},
       {"s0_velocity", p.s0_velocity},
       {"s0_amplitude", p.s0_amplitude},
       {"dispersion_per_mm", p.dispersion_per_mm},
       {"reflection_coefficient", p.reflection_coefficient},
       {"a0_attenuation", p.a0_attenuation},
       {"s0_attenuation", p.s0_attenuation},
       {"scatter_amplitude", p.scatter_amplitude},
       {"noise_std", p.noise_std},
       {"amplitude_jitter", p.amplitude_jitter}};
}

void from_json(const nlohmann::json& j, PlateConfig& p) {
  const PlateConfig d;
  p.side_mm = j.value("side_mm", d.side_mm);
  p.thickness_mm = j.value("thickness_mm", d.thickness_mm);
  p.transducer_span_mm = j.value("transducer_span_mm", d.transducer_span_mm);
  p.load_side_mm = j.value("load_side_mm", d.load_side_mm);
  p.grid_points = j.value("grid_points", d.grid_points);
  p.grid_extent_mm = j.value("grid_extent_mm", d.grid_extent_mm);
  p.frequency_khz = j.value("frequency_khz", d.frequency_khz);
  p.cycles = j.value("cycles", d.cycles);
  p.record_ms = j.value("record_ms", d.record_ms);
  p.samples = j.value("samples", d.samples);
  p.baselines = j.value("baselines", d.baselines);
  p.a0_velocity = j.value("a0_velocity", d.a0_velocity);
  p.s0_velocity = j.value("s0_velocity", d.s0_velocity);
  p.s0_amplitude = j.value("s0_amplitude", d.s0_amplitude);
  p.dispersion_per_mm = j.value("dispersion_per_mm", d.dispersion_per_mm);
  p.reflection_coefficient = j.value("reflection_coefficient", d.reflection_coefficient);
  p.a0_attenuation = j.value("a0_attenuation", d.a0_attenuation);
  p.s0_attenuation = j.value("s0_attenuation", d.s0_attenuation);
  p.scatter_amplitude = j.value("scatter_amplitude", d.scatter_amplitude);
  p.noise_std = j.value("noise_std", d.noise_std);
  p.amplitude_jitter = j.value("amplitude_jitter", d.amplitude_jitter);
}

void to_json(nlohmann::json& j, const SymmetryBreakSpec& s) {
  j = {{"anisotropy", s.anisotropy},
       {"gain_jitter", s.gain_jitter},
       {"phase_jitter_us", s.phase_jitter_us},
       {"edge_irregularity_mm", s.edge_irregularity_mm}};
}

void from_json(const nlohmann::json& j, SymmetryBreakSpec& s) {
  s.anisotropy = j.value("anisotropy", 0.0);
  s.gain_jitter = j.value("gain_jitter", 0.0);
  s.phase_jitter_us = j.value("phase_jitter_us", 0.0);
  s.edge_irregularity_mm = j.value("edge_irregularity_mm", 0.0);
}

void to_json(nlohmann::json& j, const CompressConfig& c) {
  j = {{"band_first_bin", c.band_first_bin},
       {"band_last_bin", c.band_last_bin},
       {"band_length", c.band_length},
       {"trim", c.trim},
       {"remove_mean", c.remove_mean}};
}

void from_json(const nlohmann::json& j, CompressConfig& c) {
  const CompressConfig d;
  c.band_first_bin = j.value("band_first_bin", d.band_first_bin);
  c.band_last_bin = j.value("band_last_bin", d.band_last_bin);
  c.band_length = j.value("band_length", d.band_length);
  c.trim = j.value("trim", d.trim);
  c.remove_mean = j.value("remove_mean", d.remove_mean);
}

void to_json(nlohmann::json& j, const DefectSpec& d) {
  j = {{"spectral", d.spectral}, {"received", d.received}, {"amplitude", d.amplitude}};
}

void from_json(const nlohmann::json& j, DefectSpec& d) {
  d.spectral = j.value("spectral", std::size_t{0});
  d.received = j.value("received", std::size_t{0});
  d.amplitude = j.value("amplitude", std::size_t{0});
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"plate", c.plate}, {"symmetry_break", c.sym}, {"compress", c.compress},
       {"defects", c.defects}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.plate = j.value("plate", PlateConfig{});
  c.sym = j.value("symmetry_break", SymmetryBreakSpec{});
  c.compress = j.value("compress", CompressConfig{});
  c.defects = j.value("defects", DefectSpec{});
  c.seed = j.value("seed", std::uint64_t{0});
}

// ---- datasets ----------------------------------------------------------------

void Dataset::validate() const {
  const std::size_t n = positions.size();
  require(time_len > 0, "dataset: zero sequence length");
  require(damaged.size() == n * stride(), "dataset: damaged tensor does not match positions");
  require(baselines.size() % stride() == 0, "dataset: baseline tensor is not whole examples");
  if (spectrum_bins > 0) {
    require(spectra.size() == (n + baseline_count()) * spectrum_bins, "dataset: spectra do not match");
  } else {
    require(spectra.empty(), "dataset: spectra without a bin count");
  }
}

Dataset synthesize_dataset(const SynthConfig& cfg, bool parallel) {
  cfg.plate.validate();
  cfg.compress.validate(cfg.plate.samples);
  const auto real = realize(cfg.sym, cfg.seed);
  const auto grid = cfg.plate.grid();
  const std::size_t n = grid.size(), m = cfg.plate.baselines;
  const std::size_t T = cfg.compress.output_length();
  const std::size_t bins = cfg.compress.band_bins();

  // Defect assignment comes from its own stream so clean examples are
  // unaffected by how many defects are requested.
  enum class Defect { none, spectral, received, amplitude };
  std::vector<Defect> defect(n, Defect::none);
  {
    const std::size_t want = cfg.defects.spectral + cfg.defects.received + cfg.defects.amplitude;
    require(want <= n, "synthesize: more defects than locations");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, kDefectStream));
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t k = 0;
    for (std::size_t i = 0; i < cfg.defects.spectral; ++i) defect[order[k++]] = Defect::spectral;
    for (std::size_t i = 0; i < cfg.defects.received; ++i) defect[order[k++]] = Defect::received;
    for (std::size_t i = 0; i < cfg.defects.amplitude; ++i) defect[order[k++]] = Defect::amplitude;
  }

  Dataset ds;
  ds.time_len = T;
  ds.positions = grid;
  ds.damaged.assign(n * kPairs * T, 0.0);
  ds.baselines.assign(m * kPairs * T, 0.0);
  ds.spectrum_bins = bins;
  ds.spectra.assign((n + m) * bins, 0.0);

  // Job j < n is location j; the rest are baselines.
  auto run = [&](Compressor& comp, std::size_t j) {
    const bool base = j >= n;
    const std::uint64_t stream = base ? kBaselineStream + (j - n) : j;
    std::mt19937_64 rng(mix_seed(cfg.seed, stream));
    Excitation ex = nominal(cfg.plate);
    const Defect d = base ? Defect::none : defect[j];
    if (d == Defect::spectral) ex = {0.5 * cfg.plate.frequency_khz, 3.0, 1.0};
    std::optional<Point> load;
    if (!base) load = grid[j];
    const auto raw = acquire(cfg.plate, real, load, ex, rng);
    auto v = compress_adjacency(comp, raw);

    if (d == Defect::received) {
      for (std::size_t i = 2 * 4 * T; i < 3 * 4 * T; ++i) v[i] *= 5.0;
    }
    double* dst = base ? ds.baselines.data() + (j - n) * kPairs * T : ds.damaged.data() + j * kPairs * T;
    std::copy(v.begin(), v.end(), dst);
    const auto spec = comp.band_magnitudes(excitation_waveform(cfg.plate, ex));
    std::copy(spec.begin(), spec.end(), ds.spectra.data() + j * bins);
  };

  const long jobs = static_cast<long>(n + m);
  if (parallel) {
    std::exception_ptr error;
#pragma omp parallel
    {
      Compressor comp(cfg.plate.samples, cfg.compress);
#pragma omp for schedule(dynamic)
      for (long j = 0; j < jobs; ++j) {
        try {
          run(comp, static_cast<std::size_t>(j));
        } catch (...) {
#pragma omp critical
          if (!error) error = std::current_exception();
        }
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    Compressor comp(cfg.plate.samples, cfg.compress);
    for (long j = 0; j < jobs; ++j) run(comp, static_cast<std::size_t>(j));
  }

  // Spikes of ten times the typical load-induced excursion, on a diagonal path.
  if (cfg.defects.amplitude > 0) {
    std::vector<double> peaks;
    for (std::size_t i = 0; i < n; ++i) {
      if (defect[i] != Defect::none) continue;
      double pk = 0.0;
      const auto v = ds.example(i), b = ds.baseline(0);
      for (std::size_t k = 0; k < v.size(); ++k) pk = std::max(pk, std::abs(v[k] - b[k]));
      peaks.push_back(pk);
    }
    const double spike = 10.0 * median(peaks);
    for (std::size_t i = 0; i < n; ++i)
      if (defect[i] == Defect::amplitude) ds.damaged[i * kPairs * T + 2 * T + T / 2] += spike;
  }

  ds.meta["synth"] = cfg;
  ds.meta["curation"] = nlohmann::json::array();
  return ds;
}

nlohmann::json CurationReport::to_json() const {
  return {{"spectral", spectral}, {"received", received}, {"amplitude", amplitude}, {"removed", removed}};
}

CurationReport curate(Dataset& ds, const CurationThresholds& th) {
  ds.validate();
  CurationReport rep;
  const std::size_t n = ds.size(), T = ds.time_len, stride = ds.stride();
  std::vector<int> flag(n, 0);  // 0 keep, else the filter that removed it

  // (1) excitation spectrum against the fleet mean.
  if (ds.spectrum_bins > 0 && n > 0 && std::isfinite(th.spectral)) {
    const std::size_t nb = ds.spectrum_bins;
    std::vector<double> mean(nb, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < nb; ++k) mean[k] += ds.spectra[i * nb + k] / static_cast<double>(n);
    double mnorm = 0.0;
    for (double v : mean) mnorm += v * v;
    mnorm = std::sqrt(mnorm);
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      for (std::size_t k = 0; k < nb; ++k) d += std::pow(ds.spectra[i * nb + k] - mean[k], 2);
      if (mnorm > 0 && std::sqrt(d) / mnorm > th.spectral) flag[i] = 1;
    }
  }

  // (2) distance from the per-path mean of the remaining examples.
  if (std::isfinite(th.received)) {
    std::vector<double> mean(stride, 0.0);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (flag[i]) continue;
      ++kept;
      const auto v = ds.example(i);
      for (std::size_t k = 0; k < stride; ++k) mean[k] += v[k];
    }
    if (kept > 0) {
      for (auto& v : mean) v /= static_cast<double>(kept);
      for (std::size_t i = 0; i < n; ++i) {
        if (flag[i]) continue;
        const auto v = ds.example(i);
        double worst = 0.0;
        for (std::size_t p = 0; p < kPairs; ++p) {
          double d = 0.0, mn = 0.0;
          for (std::size_t t = 0; t < T; ++t) {
            d += std::pow(v[p * T + t] - mean[p * T + t], 2);
            mn += mean[p * T + t] * mean[p * T + t];
          }
          if (mn > 0) worst = std::max(worst, std::sqrt(d / mn));
        }
        if (worst > th.received) flag[i] = 2;
      }
    }
  }

  // (3) post-subtraction peak against the fleet median.
  if (std::isfinite(th.amplitude) && ds.baseline_count() > 0) {
    std::vector<double> peak(n, 0.0), pool;
    for (std::size_t i = 0; i < n; ++i) {
      if (flag[i]) continue;
      const auto v = ds.example(i);
      for (std::size_t b = 0; b < ds.baseline_count(); ++b) {
        const auto base = ds.baseline(b);
        for (std::size_t k = 0; k < stride; ++k) peak[i] = std::max(peak[i], std::abs(v[k] - base[k]));
      }
      pool.push_back(peak[i]);
    }
    const double med = median(pool);
    for (std::size_t i = 0; i < n; ++i)
      if (!flag[i] && med > 0 && peak[i] / med > th.amplitude) flag[i] = 3;
  }

  Dataset out;
  out.meta = ds.meta;
  out.time_len = T;
  out.spectrum_bins = ds.spectrum_bins;
  out.baselines = ds.baselines;
  const std::size_t nb = ds.spectrum_bins;
  for (std::size_t i = 0; i < n; ++i) {
    if (flag[i]) {
      rep.removed.push_back(i);
      (flag[i] == 1 ? rep.spectral : flag[i] == 2 ? rep.received : rep.amplitude)++;
      continue;
    }
    out.positions.push_back(ds.positions[i]);
    const auto v = ds.example(i);
    out.damaged.insert(out.damaged.end(), v.begin(), v.end());
    if (nb) out.spectra.insert(out.spectra.end(), ds.spectra.begin() + i * nb, ds.spectra.begin() + (i + 1) * nb);
  }
  if (nb) out.spectra.insert(out.spectra.end(), ds.spectra.begin() + n * nb, ds.spectra.end());
  if (!out.meta.contains("curation") || !out.meta["curation"].is_array()) {
    out.meta["curation"] = nlohmann::json::array();
  }
  auto entry = rep.to_json();
  entry["thresholds"] = {{"spectral", th.spectral}, {"received", th.received}, {"amplitude", th.amplitude}};
  out.meta["curation"].push_back(entry);
  ds = std::move(out);
  return rep;
}

TaskSet localization_set(const Dataset& ds, std::span<const std::size_t> locations) {
  require(ds.baseline_count() > 0, "localization: dataset has no baselines");
  TaskSet set;
  set.time_len = ds.time_len;
  const std::size_t m = ds.baseline_count(), stride = ds.stride();
  set.inputs.reserve(locations.size() * m * stride);
  for (std::size_t loc : locations) {
    require(loc < ds.size(), "localization: location index out of range");
    const auto v = ds.example(loc);
    for (std::size_t b = 0; b < m; ++b) {
      const auto base = ds.baseline(b);
      for (std::size_t k = 0; k < stride; ++k) set.inputs.push_back(v[k] - base[k]);
      set.targets.push_back(ds.positions[loc][0]);
      set.targets.push_back(ds.positions[loc][1]);
      set.group.push_back(loc);
    }
  }
  return set;
}

std::vector<double> combine_baselines(const Dataset& ds, std::span<const double> coeffs) {
  require(coeffs.size() == ds.baseline_count(), "combine_baselines: one coefficient per baseline");
  std::vector<double> out(ds.stride(), 0.0);
  for (std::size_t b = 0; b < coeffs.size(); ++b) {
    const auto base = ds.baseline(b);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += coeffs[b] * base[k];
  }
  return out;
}

BalancedDetection balance_detection(const Dataset& ds, std::uint64_t seed) {
  const std::size_t m = ds.baseline_count();
  require(m >= 2, "balance_detection: need at least two baselines");
  BalancedDetection bal;
  for (std::size_t b = 0; b < m; ++b) {
    std::vector<double> c(m, 0.0);
    c[b] = 1.0;
    bal.coefficients.push_back(std::move(c));
  }
  std::mt19937_64 rng(mix_seed(seed, kBaselineStream - 1));
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  while (bal.coefficients.size() < ds.size()) {
    std::vector<double> c(m);
    double sum = 0.0;
    for (auto& v : c) sum += (v = ud(rng));
    for (auto& v : c) v /= sum;
    bal.coefficients.push_back(std::move(c));
  }
  for (const auto& c : bal.coefficients) {
    const auto v = combine_baselines(ds, c);
    bal.undamaged.insert(bal.undamaged.end(), v.begin(), v.end());
  }
  return bal;
}

TaskSet detection_set(const Dataset& ds, const BalancedDetection& bal,
                      std::span<const std::size_t> damaged, std::span<const std::size_t> undamaged,
                      bool subtract) {
  TaskSet set;
  set.time_len = ds.time_len;
  const std::size_t stride = ds.stride();
  const std::size_t views = subtract ? ds.baseline_count() : 1;
  std::size_t example = 0;
  auto push = [&](const double* v, double label) {
    for (std::size_t b = 0; b < views; ++b) {
      const auto base = subtract ? ds.baseline(b) : std::span<const double>{};
      for (std::size_t k = 0; k < stride; ++k) set.inputs.push_back(subtract ? v[k] - base[k] : v[k]);
      set.targets.push_back(label);
      set.group.push_back(example);
    }
    ++example;
  };
  for (std::size_t i : damaged) {
    require(i < ds.size(), "detection: damaged index out of range");
    push(ds.example(i).data(), 1.0);
  }
  for (std::size_t i : undamaged) {
    require(i < bal.coefficients.size(), "detection: undamaged index out of range");
    push(bal.undamaged.data() + i * stride, 0.0);
  }
  return set;
}

Split split(std::size_t n, double ratio, std::uint64_t seed) {
  require(ratio > 0.0 && ratio < 1.0, "split: ratio must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, kDefectStream + 1));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<long>(k));
  s.test.assign(idx.begin() + static_cast<long>(k), idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---- container ---------------------------------------------------------------

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  const std::size_t n = ds.size(), m = ds.baseline_count(), T = ds.time_len;
  nlohmann::json header;
  header["meta"] = ds.meta;
  header["time_len"] = T;
  header["spectrum_bins"] = ds.spectrum_bins;
  header["tensors"] = nlohmann::json::array({
      {{"name", "positions"}, {"shape", {n, 2}}},
      {{"name", "damaged"}, {"shape", {n, 4, 4, T}}},
      {{"name", "baselines"}, {"shape", {m, 4, 4, T}}},
      {{"name", "spectra"}, {"shape", {n + m, ds.spectrum_bins}}},
  });
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<double> pos;
  for (const auto& p : ds.positions) pos.insert(pos.end(), p.begin(), p.end());
  write_f64(os, pos);
  write_f64(os, ds.damaged);
  write_f64(os, ds.baselines);
  write_f64(os, ds.spectra);
  if (!os) throw std::runtime_error("dataset: write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("dataset: " + path.string() + " is not a .pwds file");
  }
  if (get_le<std::uint32_t>(is) != kVersion) throw std::runtime_error("dataset: unsupported version");
  const auto hlen = get_le<std::uint64_t>(is);
  if (hlen > (std::uint64_t{1} << 32)) throw std::runtime_error("dataset: implausible header length");
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("dataset: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("dataset: bad header: ") + e.what());
  }
  Dataset ds;
  ds.meta = header.value("meta", nlohmann::json::object());
  ds.time_len = header.at("time_len").get<std::size_t>();
  ds.spectrum_bins = header.at("spectrum_bins").get<std::size_t>();
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    std::size_t count = 1;
    for (const auto& d : t.at("shape")) count *= d.get<std::size_t>();
    auto v = read_f64(is, count);
    if (name == "positions") {
      for (std::size_t i = 0; i + 1 < v.size(); i += 2) ds.positions.push_back({v[i], v[i + 1]});
    } else if (name == "damaged") {
      ds.damaged = std::move(v);
    } else if (name == "baselines") {
      ds.baselines = std::move(v);
    } else if (name == "spectra") {
      ds.spectra = std::move(v);
    }
  }
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(e.what());
  }
  return ds;
}

std::optional<Dataset> import_directory(const std::filesystem::path& dir, std::size_t time_len) {
  const auto pos_path = dir / "positions.csv", sig_path = dir / "signals.f64",
             base_path = dir / "baselines.f64";
  for (const auto& p : {pos_path, sig_path, base_path})
    if (!std::filesystem::exists(p)) return std::nullopt;

  Dataset ds;
  ds.time_len = time_len;
  std::ifstream pos(pos_path);
  std::string line;
  while (std::getline(pos, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    Point p;
    if (!(ls >> p[0] >> p[1])) continue;  // header row
    ds.positions.push_back(p);
  }
  auto read_all = [](const std::filesystem::path& p) {
    const auto bytes = std::filesystem::file_size(p);
    if (bytes % 8) throw std::runtime_error("import: " + p.string() + " is not a whole number of f64");
    std::ifstream is(p, std::ios::binary);
    return read_f64(is, bytes / 8);
  };
  ds.damaged = read_all(sig_path);
  ds.baselines = read_all(base_path);
  ds.meta["imported_from"] = dir.string();
  ds.meta["curation"] = nlohmann::json::array();
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("import: ") + e.what());
  }
  return ds;
}

}  // namespace platesym::signals
