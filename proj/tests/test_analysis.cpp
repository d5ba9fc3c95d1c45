#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "platesym/analysis.hpp"
#include "platesym/dihedral.hpp"

using namespace platesym;
using namespace platesym::analysis;
namespace d4 = platesym::dihedral;

namespace {

std::vector<double> random_signal(std::uint64_t seed, std::size_t len = 158) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(16 * len);
  for (auto& x : v) x = nd(rng);
  return v;
}

// (1/8) sum over all g, including e, written out with explicit index maps.
double r0_oracle(const std::vector<double>& v, std::size_t len, std::size_t first) {
  double n = 0.0, acc = 0.0;
  for (int r = 0; r < 4; ++r)
    for (int s = 0; s < 4; ++s)
      if (r != s)
        for (std::size_t t = first; t < len; ++t) n += v[(r * 4 + s) * len + t] * v[(r * 4 + s) * len + t];
  for (auto g : d4::all_elements()) {
    const auto gi = d4::inverse(g);
    double d = 0.0;
    for (int r = 0; r < 4; ++r)
      for (int s = 0; s < 4; ++s) {
        if (r == s) continue;
        const int r0 = d4::permute_corner(gi, r), s0 = d4::permute_corner(gi, s);
        for (std::size_t t = first; t < len; ++t) {
          const double e = v[(r * 4 + s) * len + t] - v[(r0 * 4 + s0) * len + t];
          d += e * e;
        }
      }
    acc += std::sqrt(d);
  }
  return acc / (8.0 * std::sqrt(n));
}

signals::SynthConfig quiet_config(std::size_t grid, std::uint64_t seed) {
  signals::SynthConfig cfg;
  cfg.plate.grid_points = grid;
  cfg.plate.baselines = 2;
  cfg.plate.noise_std = 0.0;
  cfg.plate.amplitude_jitter = 0.0;
  cfg.seed = seed;
  return cfg;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

models::Model desk_model(models::Variant v, models::Task t, std::uint64_t seed) {
  auto spec = models::ModelSpec::desk_scale(v, t);
  spec.seed = seed;
  return models::Model(spec);
}

// Pixel square fully inside the footprint, decided from its corners.
bool covered_oracle(signals::Point c, signals::Point load, double side, double pitch) {
  for (double sx : {-0.5, 0.5})
    for (double sy : {-0.5, 0.5}) {
      const double x = c[0] + sx * pitch, y = c[1] + sy * pitch;
      if (std::abs(x - load[0]) > side / 2 + 1e-9 || std::abs(y - load[1]) > side / 2 + 1e-9) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("R0 agrees with the explicit oracle and has a zero identity term") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto v = random_signal(seed);
    for (std::size_t first : {0u, 12u}) {
      const double r = baseline_equivariance_error(v, 158, MaskConfig{false, first});
      CHECK(r == doctest::Approx(r0_oracle(v, 158, first)).epsilon(1e-12));
    }
    // Identity term alone.
    const auto ev = d4::act_on_adjacency(d4::elements::e, v, 158);
    CHECK(ev == v);
  }
}

TEST_CASE("R0 on a single path") {
  // Only V[0][1] nonzero: every g except e moves the pair, so each term is sqrt(2).
  std::vector<double> v(16 * 10, 0.0);
  for (std::size_t t = 0; t < 10; ++t) v[1 * 10 + t] = std::sin(0.3 * static_cast<double>(t) + 0.1);
  CHECK(baseline_equivariance_error(v, 10) == doctest::Approx(7.0 * std::sqrt(2.0) / 8.0).epsilon(1e-14));
}

TEST_CASE("R0 vanishes on orbit-averaged and symmetric synthetic baselines") {
  const auto v = random_signal(4);
  std::vector<double> sym(v.size(), 0.0);
  for (auto g : d4::all_elements()) {
    const auto gv = d4::act_on_adjacency(g, v, 158);
    for (std::size_t i = 0; i < v.size(); ++i) sym[i] += gv[i] / 8.0;
  }
  CHECK(baseline_equivariance_error(sym, 158) < 1e-14);

  const auto ds = signals::synthesize_dataset(quiet_config(3, 2), true);
  const auto r0 = baseline_equivariance(ds);
  CHECK(r0.count == 2);
  CHECK(r0.mean < 1e-12);

  auto broken = quiet_config(3, 2);
  broken.sym = signals::SymmetryBreakSpec::weak();
  CHECK(baseline_equivariance(signals::synthesize_dataset(broken, true)).mean > 1e-3);
}

TEST_CASE("R0 errors and masks") {
  CHECK_THROWS_AS(baseline_equivariance_error(std::vector<double>(16 * 5, 0.0), 5), std::invalid_argument);
  CHECK_THROWS_AS(baseline_equivariance_error(std::vector<double>(15 * 5, 1.0), 5), std::invalid_argument);
  // A signal living only on the diagonal has zero masked norm.
  std::vector<double> diag(16 * 5, 0.0);
  for (int k = 0; k < 4; ++k) diag[(k * 4 + k) * 5] = 1.0;
  CHECK_THROWS_AS(baseline_equivariance_error(diag, 5), std::invalid_argument);
  CHECK(baseline_equivariance_error(diag, 5, MaskConfig{true, 0}) < 1e-15);

  signals::PlateConfig p;
  signals::CompressConfig cc;
  // span / v_S0 = 64.8 us precedes the trimmed start (70.8 us).
  CHECK(arrival_sample(p, cc) == 0);
  cc.trim = 0;
  CHECK(arrival_sample(p, cc) == static_cast<std::size_t>(std::floor(p.first_arrival_us() / (400.0 / 192.0))));
}

TEST_CASE("R(x) vanishes on an exactly symmetric plate and grows with gain jitter") {
  const auto ds = signals::synthesize_dataset(quiet_config(5, 1), true);
  const auto field = input_equivariance_field(ds);
  REQUIRE(field.size() == 25);
  double worst = 0.0;
  for (const auto& f : field) {
    CHECK(f.terms == 8);
    worst = std::max(worst, f.value);
  }
  CHECK(worst < 1e-10);

  std::vector<double> base, jitter;
  for (const auto& f : field) base.push_back(f.value);
  auto cfg = quiet_config(5, 1);
  cfg.sym.gain_jitter = 0.1;
  for (const auto& f : input_equivariance_field(signals::synthesize_dataset(cfg, true))) jitter.push_back(f.value);
  CHECK(median(jitter) > median(base));
  CHECK(median(jitter) > 1e-3);
}

TEST_CASE("R(x) is unchanged by relabelling the dataset along the group action") {
  auto cfg = quiet_config(5, 3);
  cfg.plate.noise_std = 0.01;
  cfg.sym = signals::SymmetryBreakSpec::weak();
  const auto ds = signals::synthesize_dataset(cfg, true);
  const auto field = input_equivariance_field(ds);
  for (auto h : d4::all_elements()) {
    signals::Dataset moved = ds;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      moved.positions[i] = d4::act_on_point(h, ds.positions[i]);
      const auto v = d4::act_on_adjacency(h, ds.example(i), ds.time_len);
      std::copy(v.begin(), v.end(), moved.damaged.begin() + static_cast<std::ptrdiff_t>(i * ds.stride()));
    }
    for (std::size_t j = 0; j < ds.baseline_count(); ++j) {
      const auto b = d4::act_on_adjacency(h, ds.baseline(j), ds.time_len);
      std::copy(b.begin(), b.end(), moved.baselines.begin() + static_cast<std::ptrdiff_t>(j * ds.stride()));
    }
    const auto mf = input_equivariance_field(moved);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(mf[i].value == doctest::Approx(field[i].value).epsilon(1e-12));
  }
}

TEST_CASE("R(x) skips missing orbit partners") {
  auto ds = signals::synthesize_dataset(quiet_config(3, 1), true);
  // Drop the corner (125, 125): the other corners each lose the two g that map onto it.
  signals::Dataset cut = ds;
  cut.positions.clear();
  cut.damaged.clear();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.positions[i][0] > 100 && ds.positions[i][1] > 100) continue;
    cut.positions.push_back(ds.positions[i]);
    cut.damaged.insert(cut.damaged.end(), ds.example(i).begin(), ds.example(i).end());
  }
  const auto field = input_equivariance_field(cut);
  REQUIRE(field.size() == 8);
  for (const auto& f : field) {
    const bool corner = std::abs(f.position[0]) > 100 && std::abs(f.position[1]) > 100;
    CHECK(f.terms == (corner ? 6u : 8u));
    CHECK(f.value < 1e-10);
  }
  CHECK(nearest_position(cut, {125, 125}, 10.0) == std::nullopt);
  CHECK(nearest_position(cut, {-121, 3}, 10.0).has_value());
}

TEST_CASE("Q vanishes for the exact model and not for the ordinary one") {
  const auto ds = signals::synthesize_dataset(quiet_config(3, 5), true);
  for (auto task : {models::Task::locate, models::Task::detect}) {
    const auto exact = desk_model(models::Variant::exact, task, 9);
    const auto approx = desk_model(models::Variant::approximate, task, 9);
    const auto ordinary = desk_model(models::Variant::ordinary, task, 9);
    const auto qe = learned_equivariance_field(exact, ds);
    const auto qa = learned_equivariance_field(approx, ds);
    const auto qo = learned_equivariance_field(ordinary, ds);
    double worst_o = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      // The plate centre is a fixed point: the exact output there is zero up to round-off.
      CAPTURE(ds.positions[i]);
      CHECK(qe[i].q <= 1e-8);
      if (ds.positions[i] != signals::Point{0, 0}) CHECK(qe[i].normalized <= 1e-8);
      CHECK(qa[i].q == qe[i].q);
      CHECK(qa[i].position == ds.positions[i]);
      worst_o = std::max(worst_o, qo[i].normalized);
    }
    CHECK(worst_o > 1e-2);
  }
}

TEST_CASE("Q matches a direct per-element evaluation") {
  const auto model = desk_model(models::Variant::ordinary, models::Task::locate, 2);
  const auto v = random_signal(11);
  const signals::Point at{0, 0};
  const auto q = learned_equivariance(model, v, std::span<const signals::Point>(&at, 1));
  REQUIRE(q.size() == 1);
  const auto y = model.predict(v, 1);
  double acc = 0.0;
  for (auto g : d4::all_elements()) {
    const auto gy = model.predict(d4::act_on_adjacency(g, v, 158), 1);
    const auto ry = d4::act_on_vector(g, {y[0], y[1]});
    acc += std::hypot(ry[0] - gy[0], ry[1] - gy[1]);
  }
  CHECK(q[0].q == doctest::Approx(acc / 8.0).epsilon(1e-12));
  CHECK(q[0].normalized == doctest::Approx(acc / 8.0 / std::hypot(y[0], y[1])).epsilon(1e-12));
  CHECK_THROWS_AS(learned_equivariance(model, std::vector<double>(10), std::span<const signals::Point>(&at, 1)),
                  std::invalid_argument);
}

TEST_CASE("heatmap coverage matches the geometric oracle") {
  for (double side : {40.0, 15.0, 10.0, 4.0}) {
    for (signals::Point p : {signals::Point{0, 0}, signals::Point{-125, 50}, signals::Point{35, 120}}) {
      const FieldSample s{p, 3.5, 8};
      const auto rep = render_heatmap(std::span<const FieldSample>(&s, 1), side);
      CHECK(rep.snapped == 0);
      CHECK(rep.dropped == 0);
      std::size_t expected = 0;
      for (std::size_t j = 0; j < 51; ++j)
        for (std::size_t i = 0; i < 51; ++i) {
          const auto c = rep.map.centre(i, j);
          const bool concentric = std::abs(c[0] - p[0]) < 1e-9 && std::abs(c[1] - p[1]) < 1e-9;
          const bool hit = concentric || covered_oracle(c, p, side, 5.0);
          expected += hit;
          CHECK(rep.map.missing(i, j) == !hit);
          if (hit) CHECK(*rep.map.value(i, j) == 3.5);
        }
      CHECK(rep.map.filled() == expected);
    }
  }
  const FieldSample centre{{0, 0}, 1.0, 8};
  CHECK(render_heatmap(std::span<const FieldSample>(&centre, 1)).map.filled() == 49);
  const FieldSample corner{{125, -125}, 1.0, 8};
  CHECK(render_heatmap(std::span<const FieldSample>(&corner, 1)).map.filled() == 16);
}

TEST_CASE("heatmap means, empty input, snapping and mass") {
  const std::vector<FieldSample> two{{{10, 10}, 1.0, 8}, {{10, 10}, 4.0, 8}};
  const auto rep = render_heatmap(two);
  CHECK(*rep.map.value(27, 27) == 2.5);
  CHECK(rep.map.count(27, 27) == 2);

  const auto empty = render_heatmap(std::span<const FieldSample>{});
  CHECK(empty.map.filled() == 0);
  for (std::size_t j = 0; j < 51; ++j)
    for (std::size_t i = 0; i < 51; ++i) CHECK(empty.map.missing(i, j));

  const std::vector<FieldSample> off{{{1.2, -0.4}, 1.0, 8}, {{400, 0}, 1.0, 8}};
  const auto snapped = render_heatmap(off);
  CHECK(snapped.snapped == 1);
  CHECK(snapped.dropped == 1);
  CHECK(*snapped.map.value(25, 25) == 1.0);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cell(-25, 25);
  std::normal_distribution<double> nd;
  std::vector<FieldSample> many;
  double contributed = 0.0;
  for (int k = 0; k < 200; ++k) many.push_back({{5.0 * cell(rng), 5.0 * cell(rng)}, nd(rng), 8});
  const auto big = render_heatmap(many);
  for (const auto& s : many) {
    const auto one = render_heatmap(std::span<const FieldSample>(&s, 1));
    contributed += s.value * static_cast<double>(one.map.filled());
  }
  double mass = 0.0;
  for (std::size_t j = 0; j < 51; ++j)
    for (std::size_t i = 0; i < 51; ++i)
      if (auto v = big.map.value(i, j)) mass += *v * static_cast<double>(big.map.count(i, j));
  CHECK(mass == doctest::Approx(contributed).epsilon(1e-12));
  CHECK(big.map.total_mass() == doctest::Approx(contributed).epsilon(1e-12));
}

TEST_CASE("heatmap files") {
  const FieldSample s{{0, 0}, 2.0, 8};
  const auto rep = render_heatmap(std::span<const FieldSample>(&s, 1));
  const auto dir = std::filesystem::temp_directory_path();
  rep.map.write_csv(dir / "ps_heat.csv");
  rep.map.write_pgm(dir / "ps_heat.pgm", 0.0, 2.0);

  std::ifstream csv(dir / "ps_heat.csv");
  std::string line;
  std::size_t rows = 0, values = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 50);
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      if (!cell.empty()) {
        CHECK(std::stod(cell) == 2.0);
        ++values;
      }
  }
  CHECK(rows == 51);
  CHECK(values == 49);

  std::ifstream pgm(dir / "ps_heat.pgm", std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  pgm.get();
  CHECK(magic == "P5");
  CHECK(w == 51);
  CHECK(h == 51);
  std::vector<char> px(51 * 51);
  pgm.read(px.data(), static_cast<std::streamsize>(px.size()));
  CHECK(pgm.gcount() == 51 * 51);
  CHECK(static_cast<unsigned char>(px[25 * 51 + 25]) == 255);
  CHECK(static_cast<unsigned char>(px[0]) == 0);
}

TEST_CASE("symmetry weight report") {
  const auto exact = desk_model(models::Variant::exact, models::Task::locate, 1);
  CHECK_THROWS_AS(symmetry_weight_report(exact), std::invalid_argument);

  auto approx = desk_model(models::Variant::approximate, models::Task::locate, 1);
  const auto fresh = symmetry_weight_report(approx);
  REQUIRE(fresh.layers.size() == 6);
  CHECK(fresh.layers.front().layer == "block1.omega");
  CHECK(fresh.layers.back().layer == "block6.omega");
  for (const auto& l : fresh.layers) {
    CHECK(l.max_deviation == 0.0);
    for (double w : l.omega) CHECK(w == 1.0);
  }

  // One raw entry of 8: omega = 8 e / (e + 7) there and 8 / (e + 7) elsewhere.
  for (auto& p : approx.parameters())
    if (p.name() == "block3.omega") p.value()[2] = 8.0;
  const auto rep = symmetry_weight_report(approx);
  const double e = std::exp(1.0);
  for (std::size_t k = 0; k < 8; ++k)
    CHECK(rep.layers[2].omega[k] == doctest::Approx(k == 2 ? 8 * e / (e + 7) : 8 / (e + 7)).epsilon(1e-14));
  CHECK(rep.layers[2].max_deviation == doctest::Approx(8 * e / (e + 7) - 1).epsilon(1e-14));
  double total = 0.0;
  for (double w : rep.layers[2].omega) total += w;
  CHECK(std::abs(total - 8.0) < 1e-12);

  const auto j = rep.to_json();
  CHECK(j["layers"].size() == 6);
  CHECK(j["layers"][2]["max_deviation"].get<double>() == rep.layers[2].max_deviation);
  CHECK(j.contains("trend"));
}

TEST_CASE("depth trend") {
  const std::vector<double> down{0.06, 0.05, 0.05, 0.03, 0.02, 0.01};
  const auto t = depth_trend(down);
  CHECK(t.monotone_decreasing);
  CHECK(t.slope < 0.0);
  const std::vector<double> line{5, 4, 3, 2};
  CHECK(depth_trend(line).slope == doctest::Approx(-1.0).epsilon(1e-14));
  const std::vector<double> bump{0.06, 0.07, 0.01};
  CHECK_FALSE(depth_trend(bump).monotone_decreasing);
  const std::vector<double> flat{0.02, 0.02};
  CHECK_FALSE(depth_trend(flat).monotone_decreasing);
  CHECK(depth_trend(flat).slope == 0.0);
}
