#include "platesym/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "platesym/dihedral.hpp"

namespace platesym::analysis {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

bool kept(std::size_t pair, std::size_t t, const MaskConfig& mask) {
  if (!mask.include_diagonal && pair / 4 == pair % 4) return false;
  return t >= mask.first_sample;
}

double masked_norm(std::span<const double> v, std::size_t len, const MaskConfig& mask) {
  double s = 0.0;
  for (std::size_t p = 0; p < signals::kPairs; ++p)
    for (std::size_t t = 0; t < len; ++t)
      if (kept(p, t, mask)) s += v[p * len + t] * v[p * len + t];
  return std::sqrt(s);
}

double masked_distance(std::span<const double> a, std::span<const double> b, std::size_t len,
                       const MaskConfig& mask) {
  double s = 0.0;
  for (std::size_t p = 0; p < signals::kPairs; ++p)
    for (std::size_t t = 0; t < len; ++t)
      if (kept(p, t, mask)) {
        const double d = a[p * len + t] - b[p * len + t];
        s += d * d;
      }
  return std::sqrt(s);
}

Spread spread_of(const std::vector<double>& xs) {
  Spread s;
  s.count = xs.size();
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(v / static_cast<double>(xs.size()));
  return s;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

MaskConfig mask_from_meta(const signals::Dataset& ds) {
  MaskConfig m;
  if (ds.meta.contains("synth")) {
    const signals::SynthConfig cfg = ds.meta["synth"].get<signals::SynthConfig>();
    m.first_sample = arrival_sample(cfg.plate, cfg.compress);
  }
  if (ds.meta.contains("first_sample")) m.first_sample = ds.meta["first_sample"].get<std::size_t>();
  return m;
}

}  // namespace

std::size_t arrival_sample(const signals::PlateConfig& plate, const signals::CompressConfig& cc) {
  const double band_period_us = plate.record_ms * 1000.0 / static_cast<double>(cc.band_length);
  const double idx = std::floor(plate.first_arrival_us() / band_period_us) - static_cast<double>(cc.trim);
  return idx > 0 ? static_cast<std::size_t>(idx) : 0;
}

double baseline_equivariance_error(std::span<const double> v, std::size_t time_len, const MaskConfig& mask) {
  require(time_len > 0 && v.size() == signals::kPairs * time_len, "R0: signal must be [4, 4, T]");
  require(mask.first_sample < time_len, "R0: mask removes every sample");
  const double n = masked_norm(v, time_len, mask);
  require(n > 0.0, "R0: zero-norm signal");
  double acc = 0.0;
  for (auto g : dihedral::all_elements()) {
    if (g == dihedral::elements::e) continue;
    const auto gv = dihedral::act_on_adjacency(g, v, time_len);
    acc += masked_distance(v, gv, time_len, mask);
  }
  return acc / (dihedral::kOrder * n);
}

Spread baseline_equivariance(const signals::Dataset& ds, std::optional<MaskConfig> mask) {
  require(ds.baseline_count() > 0, "R0: dataset has no baselines");
  const MaskConfig m = mask ? *mask : mask_from_meta(ds);
  std::vector<double> r(ds.baseline_count());
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = baseline_equivariance_error(ds.baseline(j), ds.time_len, m);
  return spread_of(r);
}

std::optional<std::size_t> nearest_position(const signals::Dataset& ds, signals::Point p, double tolerance_mm) {
  std::optional<std::size_t> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ds.positions.size(); ++i) {
    const double d = std::hypot(ds.positions[i][0] - p[0], ds.positions[i][1] - p[1]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (!best || best_d > tolerance_mm) return std::nullopt;
  return best;
}

std::vector<FieldSample> input_equivariance_field(const signals::Dataset& ds, std::size_t baseline,
                                                  const MaskConfig& mask) {
  require(baseline < ds.baseline_count(), "R(x): baseline index out of range");
  require(ds.size() > 0, "R(x): empty dataset");
  const std::size_t len = ds.time_len, n = ds.size();

  // Half the smallest spacing between locations, so a partner snaps to a unique point.
  double pitch = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < n; ++i)
    pitch = std::min(pitch, std::hypot(ds.positions[i][0] - ds.positions[0][0],
                                       ds.positions[i][1] - ds.positions[0][1]));
  const double tol = std::isfinite(pitch) ? 0.5 * pitch : 1e-9;

  std::vector<std::vector<double>> sub(n);
  std::vector<double> norms(n);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    sub[i] = signals::baseline_subtract(ds.example(i), ds.baseline(baseline));
    norms[i] = masked_norm(sub[i], len, mask);
  }

  std::vector<FieldSample> out(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    FieldSample fs;
    fs.position = ds.positions[i];
    double acc = 0.0;
    for (auto g : dihedral::all_elements()) {
      const auto partner = nearest_position(ds, dihedral::act_on_point(dihedral::inverse(g), fs.position), tol);
      if (!partner) continue;
      const auto moved = dihedral::act_on_adjacency(g, sub[*partner], len);
      const double num = masked_distance(sub[i], moved, len, mask);
      const double den = 0.5 * (norms[i] + norms[*partner]);
      acc += den > 0.0 ? num / den : 0.0;
      ++fs.terms;
    }
    fs.value = fs.terms ? acc / static_cast<double>(fs.terms) : 0.0;
    out[i] = fs;
  }
  return out;
}

std::vector<QSample> learned_equivariance(const models::Model& model, std::span<const double> inputs,
                                          std::span<const signals::Point> positions) {
  const std::size_t len = model.spec().input_length, per = signals::kPairs * len;
  require(inputs.size() == positions.size() * per, "Q: inputs do not match positions");
  const bool locate = model.spec().task == models::Task::locate;
  const std::size_t outs = model.spec().output_size();
  const auto group = dihedral::all_elements();

  std::vector<QSample> out(positions.size());
  constexpr std::size_t chunk = 8;
  for (std::size_t start = 0; start < positions.size(); start += chunk) {
    const std::size_t m = std::min(chunk, positions.size() - start);
    std::vector<double> batch;
    batch.reserve(m * dihedral::kOrder * per);
    for (std::size_t k = 0; k < m; ++k) {
      const auto v = inputs.subspan((start + k) * per, per);
      for (auto g : group) {
        const auto gv = dihedral::act_on_adjacency(g, v, len);
        batch.insert(batch.end(), gv.begin(), gv.end());
      }
    }
    const auto y = model.predict(batch, m * dihedral::kOrder);
    for (std::size_t k = 0; k < m; ++k) {
      const double* base = y.data() + k * dihedral::kOrder * outs;  // g = e comes first
      QSample qs;
      qs.position = positions[start + k];
      double acc = 0.0;
      for (std::size_t gi = 0; gi < group.size(); ++gi) {
        const double* moved = base + gi * outs;
        double d2 = 0.0;
        if (locate) {
          const auto rv = dihedral::act_on_vector(group[gi], {base[0], base[1]});
          d2 = (rv[0] - moved[0]) * (rv[0] - moved[0]) + (rv[1] - moved[1]) * (rv[1] - moved[1]);
        } else {
          for (std::size_t o = 0; o < outs; ++o) d2 += (base[o] - moved[o]) * (base[o] - moved[o]);
        }
        acc += std::sqrt(d2);
      }
      qs.q = acc / dihedral::kOrder;
      const double n = norm2({base, outs});
      qs.normalized = n > 0.0 ? qs.q / n : 0.0;
      out[start + k] = qs;
    }
  }
  return out;
}

std::vector<QSample> learned_equivariance_field(const models::Model& model, const signals::Dataset& ds,
                                                std::size_t baseline) {
  require(baseline < ds.baseline_count(), "Q(x): baseline index out of range");
  require(ds.time_len == model.spec().input_length, "Q(x): dataset length does not match the model");
  std::vector<double> inputs;
  inputs.reserve(ds.damaged.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto s = signals::baseline_subtract(ds.example(i), ds.baseline(baseline));
    inputs.insert(inputs.end(), s.begin(), s.end());
  }
  return learned_equivariance(model, inputs, ds.positions);
}

// ---- heatmaps ------------------------------------------------------------------

Heatmap::Heatmap(std::size_t pixels, double pitch_mm)
    : n_(pixels), pitch_(pitch_mm), sum_(pixels * pixels, 0.0), count_(pixels * pixels, 0) {
  require(pixels > 0 && pitch_mm > 0.0, "heatmap: needs pixels and a positive pitch");
}

signals::Point Heatmap::centre(std::size_t i, std::size_t j) const {
  const double o = -0.5 * static_cast<double>(n_ - 1) * pitch_;
  return {o + static_cast<double>(i) * pitch_, o + static_cast<double>(j) * pitch_};
}

void Heatmap::add(std::size_t i, std::size_t j, double value) {
  require(i < n_ && j < n_, "heatmap: pixel out of range");
  sum_[j * n_ + i] += value;
  ++count_[j * n_ + i];
}

std::optional<double> Heatmap::value(std::size_t i, std::size_t j) const {
  const std::size_t c = count(i, j);
  if (c == 0) return std::nullopt;
  return sum(i, j) / static_cast<double>(c);
}

double Heatmap::total_mass() const { return std::accumulate(sum_.begin(), sum_.end(), 0.0); }

std::size_t Heatmap::filled() const {
  return static_cast<std::size_t>(std::count_if(count_.begin(), count_.end(), [](std::size_t c) { return c > 0; }));
}

void Heatmap::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("heatmap: cannot write " + path.string());
  f << std::setprecision(17);
  for (std::size_t r = 0; r < n_; ++r) {
    const std::size_t j = n_ - 1 - r;
    for (std::size_t i = 0; i < n_; ++i) {
      if (i) f << ',';
      if (auto v = value(i, j)) f << *v;
    }
    f << '\n';
  }
}

void Heatmap::write_pgm(const std::filesystem::path& path, double lo, double hi) const {
  require(hi > lo, "heatmap: empty grey range");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("heatmap: cannot write " + path.string());
  f << "P5\n" << n_ << ' ' << n_ << "\n255\n";
  for (std::size_t r = 0; r < n_; ++r) {
    const std::size_t j = n_ - 1 - r;
    for (std::size_t i = 0; i < n_; ++i) {
      unsigned char px = 0;
      if (auto v = value(i, j)) px = static_cast<unsigned char>(std::lround(1.0 + 254.0 * std::clamp((*v - lo) / (hi - lo), 0.0, 1.0)));
      f.put(static_cast<char>(px));
    }
  }
}

namespace {

template <class Get>
RenderReport render(std::size_t count, Get get, double load_side_mm, std::size_t pixels, double pitch_mm) {
  require(load_side_mm >= 0.0, "heatmap: negative load side");
  RenderReport rep{Heatmap(pixels, pitch_mm), 0, 0};
  const double o = -0.5 * static_cast<double>(pixels - 1) * pitch_mm;
  const double eps = 1e-9 * pitch_mm;
  // Pixels whose whole square lies within the footprint: |offset| + pitch/2 <= side/2.
  const long reach = static_cast<long>(std::floor((0.5 * load_side_mm - 0.5 * pitch_mm + eps) / pitch_mm));
  const long n = static_cast<long>(pixels);
  for (std::size_t s = 0; s < count; ++s) {
    const auto [p, value] = get(s);
    const double fi = (p[0] - o) / pitch_mm, fj = (p[1] - o) / pitch_mm;
    const long ci = std::lround(fi), cj = std::lround(fj);
    if (std::abs(fi - static_cast<double>(ci)) * pitch_mm > 1e-6 || std::abs(fj - static_cast<double>(cj)) * pitch_mm > 1e-6)
      ++rep.snapped;
    if (ci < 0 || cj < 0 || ci >= n || cj >= n) {
      ++rep.dropped;
      continue;
    }
    rep.map.add(static_cast<std::size_t>(ci), static_cast<std::size_t>(cj), value);
    for (long dj = -reach; dj <= reach; ++dj)
      for (long di = -reach; di <= reach; ++di) {
        if (di == 0 && dj == 0) continue;
        const long i = ci + di, j = cj + dj;
        if (i < 0 || j < 0 || i >= n || j >= n) continue;
        rep.map.add(static_cast<std::size_t>(i), static_cast<std::size_t>(j), value);
      }
  }
  return rep;
}

}  // namespace

RenderReport render_heatmap(std::span<const FieldSample> samples, double load_side_mm, std::size_t pixels,
                            double pitch_mm) {
  return render(
      samples.size(), [&](std::size_t i) { return std::pair{samples[i].position, samples[i].value}; },
      load_side_mm, pixels, pitch_mm);
}

RenderReport render_heatmap(std::span<const QSample> samples, bool normalized, double load_side_mm,
                            std::size_t pixels, double pitch_mm) {
  return render(
      samples.size(),
      [&](std::size_t i) { return std::pair{samples[i].position, normalized ? samples[i].normalized : samples[i].q}; },
      load_side_mm, pixels, pitch_mm);
}

// ---- symmetry weights ----------------------------------------------------------

Trend depth_trend(std::span<const double> profile) {
  Trend t;
  const std::size_t n = profile.size();
  if (n < 2) return t;
  const double xm = 0.5 * static_cast<double>(n - 1);
  const double ym = std::accumulate(profile.begin(), profile.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xm;
    sxy += dx * (profile[i] - ym);
    sxx += dx * dx;
  }
  t.slope = sxy / sxx;
  t.monotone_decreasing = profile.back() < profile.front();
  for (std::size_t i = 1; i < n; ++i)
    if (profile[i] > profile[i - 1]) t.monotone_decreasing = false;
  return t;
}

WeightReport symmetry_weight_report(const models::Model& model) {
  const auto params = model.symmetry_parameters();
  if (params.empty()) throw std::invalid_argument("weights: model is not approximately equivariant");
  WeightReport rep;
  std::vector<double> profile;
  for (const auto* p : params) {
    require(p->size() == 8, "weights: symmetry parameter must have 8 entries");
    const auto& g = p->value();
    LayerWeights lw;
    lw.layer = p->name();
    const double top = *std::max_element(g.begin(), g.end());
    double z = 0.0;
    for (std::size_t k = 0; k < 8; ++k) z += std::exp((g[k] - top) / 8.0);
    for (std::size_t k = 0; k < 8; ++k) {
      lw.omega[k] = 8.0 * std::exp((g[k] - top) / 8.0) / z;
      lw.max_deviation = std::max(lw.max_deviation, std::abs(lw.omega[k] - 1.0));
    }
    profile.push_back(lw.max_deviation);
    rep.layers.push_back(lw);
  }
  rep.trend = depth_trend(profile);
  return rep;
}

nlohmann::json WeightReport::to_json() const {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) j["layers"].push_back({{"layer", l.layer}, {"omega", l.omega}, {"max_deviation", l.max_deviation}});
  j["trend"] = {{"slope", trend.slope}, {"monotone_decreasing", trend.monotone_decreasing}};
  return j;
}

}  // namespace platesym::analysis
