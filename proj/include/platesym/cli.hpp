#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "platesym/models.hpp"
#include "platesym/signals.hpp"
#include "platesym/training.hpp"

// Command layer behind the `platesym` executable. Every command returns its
// report as JSON and writes one JSON record per line to `out`; human-readable
// progress goes to `log`.
namespace platesym::cli {

enum ExitCode : int { kOk = 0, kInvalidConfig = 2, kDataError = 3, kDivergence = 4 };

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Scale { desk, full };

struct RunConfig {
  models::Task task = models::Task::locate;
  models::Variant variant = models::Variant::exact;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out = "runs";

  // Synthesis.
  std::size_t grid = 51;
  std::size_t baselines = 6;
  /// JSON SymmetryBreakSpec file, or the words "zero" / "weak".
  std::string sym_break = "zero";

  // Training.
  Scale scale = Scale::full;
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  /// Baselines subtracted per location (0: all of them).
  std::size_t views = 0;
  /// Train share of the split; defaults to 0.8 (locate) and 0.2 (detect).
  std::optional<double> train_fraction;
  std::optional<training::Window> window;
  std::size_t checkpoint_every = 0;
  std::size_t eval_every = 1;
  double weight_decay = 1e-6;
  double dropout = 0.05;

  double split_ratio() const;
  models::ModelSpec model_spec(std::uint64_t seed, std::size_t input_length) const;
  training::TrainConfig train_config(std::uint64_t seed) const;
  void validate() const;
};

/// "t0:t1" in milliseconds.
training::Window parse_window(const std::string& text);
signals::SymmetryBreakSpec load_sym_break(const std::string& spec);

/// Train and test sets of one run. Detection splits each class separately.
struct Sets {
  signals::TaskSet train, test;
};
Sets build_sets(const signals::Dataset& ds, models::Task task, std::uint64_t seed, double ratio,
                std::size_t views, const std::optional<training::Window>& window);

/// Directory of one seed's run inside `out`.
std::filesystem::path run_dir(const RunConfig& cfg, std::uint64_t seed);

nlohmann::json cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& log);
nlohmann::json cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& log);
nlohmann::json cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& log);
nlohmann::json cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream& log);
nlohmann::json cmd_equivariance(const RunConfig& cfg, std::ostream& out, std::ostream& log);
nlohmann::json cmd_weights(const RunConfig& cfg, std::ostream& out, std::ostream& log);

/// Parses argv, dispatches, and maps failures onto ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& log);

}  // namespace platesym::cli
