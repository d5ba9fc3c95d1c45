#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "platesym/models.hpp"
#include "platesym/signals.hpp"

namespace platesym::analysis {

struct Spread {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

// ---- data equivariance ---------------------------------------------------------

struct MaskConfig {
  bool include_diagonal = false;
  /// First compressed sample kept; earlier samples precede any arrival.
  std::size_t first_sample = 0;
};

/// Compressed index of the earliest arrival (S0 along an edge), clamped at 0.
std::size_t arrival_sample(const signals::PlateConfig& plate, const signals::CompressConfig& cc = {});

/// (1/8) sum_g ||V - rho_g V|| / ||V|| over the masked entries of one
/// [4, 4, T] signal.
double baseline_equivariance_error(std::span<const double> v, std::size_t time_len,
                                   const MaskConfig& mask = {});
/// Mean and std over every baseline of the dataset.
Spread baseline_equivariance(const signals::Dataset& ds, std::optional<MaskConfig> mask = std::nullopt);

struct FieldSample {
  signals::Point position{};
  double value = 0.0;
  /// Group elements whose orbit partner was found (R) or evaluated (Q).
  std::size_t terms = 0;
};

/// Index of the dataset position nearest to p, or nullopt if none lies
/// within `tolerance_mm`.
std::optional<std::size_t> nearest_position(const signals::Dataset& ds, signals::Point p,
                                            double tolerance_mm);

/// R(x) per damaged example, subtracting baseline `baseline`. Orbit partners
/// snap to the nearest grid location within half a grid pitch; a missing
/// partner drops that group element from the average.
std::vector<FieldSample> input_equivariance_field(const signals::Dataset& ds, std::size_t baseline = 0,
                                                  const MaskConfig& mask = {});

// ---- model equivariance --------------------------------------------------------

struct QSample {
  signals::Point position{};
  double q = 0.0;           // (1/8) sum_g ||rho_g Psi(V) - Psi(rho_g V)||, output units
  double normalized = 0.0;  // q / ||Psi(V)||
};

/// Q for each input of a [N, 4, 4, T] buffer; positions label the samples.
std::vector<QSample> learned_equivariance(const models::Model& model, std::span<const double> inputs,
                                          std::span<const signals::Point> positions);
/// Q(x) per location of the dataset, on inputs subtracted with baseline `baseline`.
std::vector<QSample> learned_equivariance_field(const models::Model& model, const signals::Dataset& ds,
                                                std::size_t baseline = 0);

// ---- heatmaps ------------------------------------------------------------------

class Heatmap {
 public:
  explicit Heatmap(std::size_t pixels = 51, double pitch_mm = 5.0);

  std::size_t pixels() const { return n_; }
  double pitch_mm() const { return pitch_; }
  /// Centre of pixel (i, j); i runs along x, j along y.
  signals::Point centre(std::size_t i, std::size_t j) const;

  void add(std::size_t i, std::size_t j, double value);
  std::size_t count(std::size_t i, std::size_t j) const { return count_[j * n_ + i]; }
  double sum(std::size_t i, std::size_t j) const { return sum_[j * n_ + i]; }
  bool missing(std::size_t i, std::size_t j) const { return count(i, j) == 0; }
  /// Mean of the pixel's contributions; nullopt when missing.
  std::optional<double> value(std::size_t i, std::size_t j) const;
  double total_mass() const;
  std::size_t filled() const;

  /// Rows from top (largest y) to bottom; missing pixels are left empty.
  void write_csv(const std::filesystem::path& path) const;
  /// Binary greyscale PGM scaled to [lo, hi]; missing pixels are black.
  void write_pgm(const std::filesystem::path& path, double lo, double hi) const;

 private:
  std::size_t n_;
  double pitch_;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

struct RenderReport {
  Heatmap map;
  /// Samples moved onto the lattice by more than round-off.
  std::size_t snapped = 0;
  /// Samples whose snapped centre lies off the map.
  std::size_t dropped = 0;
};

/// Each sample marks its concentric pixel and every pixel fully inside the
/// load face centred on it.
RenderReport render_heatmap(std::span<const FieldSample> samples, double load_side_mm = 40.0,
                            std::size_t pixels = 51, double pitch_mm = 5.0);
RenderReport render_heatmap(std::span<const QSample> samples, bool normalized, double load_side_mm = 40.0,
                            std::size_t pixels = 51, double pitch_mm = 5.0);

// ---- symmetry weights ----------------------------------------------------------

struct Trend {
  double slope = 0.0;  // least-squares change per layer
  bool monotone_decreasing = false;
};
Trend depth_trend(std::span<const double> profile);

struct LayerWeights {
  std::string layer;
  std::array<double, 8> omega{};
  double max_deviation = 0.0;  // max |omega - 1|
};

struct WeightReport {
  std::vector<LayerWeights> layers;  // input to output
  Trend trend;
  nlohmann::json to_json() const;
};

/// Throws std::invalid_argument for models without symmetry weights.
WeightReport symmetry_weight_report(const models::Model& model);

}  // namespace platesym::analysis
