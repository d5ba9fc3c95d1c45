#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "platesym/models.hpp"
#include "platesym/signals.hpp"
#include "platesym/tensor.hpp"

namespace platesym::training {

// ---- losses ------------------------------------------------------------------

enum class Overlap { face, iou };

struct LocateLossConfig {
  double lambda_a0_mm = 6.70;
  double face_mm = 40.0;
  /// face: intersection / face area; iou: intersection / union.
  Overlap overlap = Overlap::face;
  double clamp_mm() const { return 0.5 * lambda_a0_mm; }
};

/// Overlap of two axis-aligned squares of side `face` whose centres differ by (dx, dy).
double overlap_area(double dx, double dy, double face);
double overlap_fraction(double dx, double dy, const LocateLossConfig& cfg = {});

/// max(|p - x|^2, (lambda/2)^2) * (1 - A(p, x)), in mm^2.
double locate_loss(signals::Point pred, signals::Point truth, const LocateLossConfig& cfg = {});
/// [B, 2] predictions against B target pairs -> [B] losses.
ad::Tensor locate_loss(const ad::Tensor& pred, std::span<const double> target,
                       const LocateLossConfig& cfg = {});

/// Binary cross-entropy on a logit, stable for large |logit|.
double detect_loss(double logit, double label);
/// [B, 1] logits -> [B] losses.
ad::Tensor detect_loss(const ad::Tensor& logits, std::span<const double> labels);

// ---- schedule and optimiser --------------------------------------------------

enum class Descent { cosine, linear };

struct OneCycle {
  double lr_init = 1e-5;
  double lr_peak = 2.5e-3;
  double lr_final = 1e-3;
  std::size_t epochs = 1000;
  double ramp_fraction = 0.2;
  Descent descent = Descent::cosine;

  static OneCycle for_task(models::Task task, std::size_t epochs);
  std::size_t ramp_epochs() const;
  double lr_at(std::size_t epoch) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;  // decoupled
};

class Adam {
 public:
  Adam(const std::vector<ad::Parameter>& params, AdamConfig cfg = {});
  /// p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
  void step(std::vector<ad::Parameter>& params, double lr);
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---- metrics -----------------------------------------------------------------

struct LocatorMetrics {
  std::size_t count = 0;  // locations after view averaging
  double mde = 0.0;       // mean distance error, mm
  double var = 0.0;       // variance of the distance errors, mm^2
  double std = 0.0;
  double rmse = 0.0;      // sqrt(mean locate_loss), mm
  nlohmann::json to_json() const;
};

struct DetectorMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double bce = 0.0;
  double perplexity = 0.0;  // exp(bce)
  nlohmann::json to_json() const;
};

/// Model outputs for every example of the set, eval mode, in chunks.
std::vector<double> predict_all(const models::Model& model, const signals::TaskSet& set,
                                std::size_t chunk = 64);

/// Averages the views of each group, then scores distances and the loss.
LocatorMetrics locator_metrics(std::span<const double> pred, const signals::TaskSet& set,
                               const LocateLossConfig& cfg = {});
LocatorMetrics evaluate_locator(const models::Model& model, const signals::TaskSet& set,
                                const LocateLossConfig& cfg = {});

/// Averages probabilities (or logits) per group; threshold at 1/2.
DetectorMetrics detector_metrics(std::span<const double> logits, const signals::TaskSet& set,
                                 bool average_logits = false);
DetectorMetrics evaluate_detector(const models::Model& model, const signals::TaskSet& set,
                                  bool average_logits = false);

// ---- training ----------------------------------------------------------------

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  AdamConfig adam;
  OneCycle schedule;
  LocateLossConfig loss;
  bool average_logits = false;
  /// Gap on RMSE (default) or on MDE.
  bool gap_on_mde = false;
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  /// Line-delimited JSON, one record per epoch; empty disables.
  std::filesystem::path history_path;
  /// Evaluate the test set every n epochs (and always at the last).
  std::size_t eval_every = 1;
  std::function<void(const nlohmann::json&)> on_epoch;
};

struct TrainResult {
  std::vector<nlohmann::json> history;
  nlohmann::json final_metrics;
};

/// Adam over shuffled mini-batches with the OneCycle schedule. Locator test
/// scores average each location's views; detection scores one view each.
TrainResult train(models::Model& model, const signals::TaskSet& train_set,
                  const signals::TaskSet& test_set, const TrainConfig& cfg);

/// Final metrics of a trained model in the same form as train()'s summary.
nlohmann::json evaluate(const models::Model& model, const signals::TaskSet& train_set,
                        const signals::TaskSet& test_set, const TrainConfig& cfg);

// ---- window ablation ---------------------------------------------------------

struct Window {
  double t0_ms = 0.07;
  double t1_ms = 0.40;
  std::string label() const;
};

/// The four windows compared in the ablation.
std::vector<Window> ablation_windows();

/// Copy of the set with every sequence zeroed outside the window.
signals::TaskSet windowed(const signals::TaskSet& set, const Window& w,
                          const signals::CompressConfig& cc = {});

struct AblationRow {
  Window window;
  signals::WindowRange samples;
  LocatorMetrics test;
};

/// Retrains a fresh model from `spec` per window on the same split.
std::vector<AblationRow> ablate_windows(const models::ModelSpec& spec, const signals::TaskSet& train_set,
                                        const signals::TaskSet& test_set, const TrainConfig& cfg,
                                        const std::vector<Window>& windows = ablation_windows());

}  // namespace platesym::training
