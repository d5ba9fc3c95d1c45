#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "platesym/layers.hpp"
#include "platesym/tensor.hpp"

namespace platesym::models {

enum class Variant { ordinary, exact, approximate };
enum class Task { locate, detect };
enum class Mode { train, eval };

std::string to_string(Variant v);
std::string to_string(Task t);
/// Accepts "ordinary", "exact", "approx"/"approximate".
Variant parse_variant(const std::string& s);
Task parse_task(const std::string& s);

inline constexpr std::size_t kDefaultInputLength = 158;

struct ModelSpec {
  Variant variant = Variant::exact;
  Task task = Task::locate;
  /// Channels of blocks 1-5 (must be equal: the skip path is depthwise), then
  /// the hidden width of the block-6 dense layer.
  std::array<std::size_t, 6> channel_widths{16, 16, 16, 16, 16, 128};
  std::size_t input_length = kDefaultInputLength;
  double dropout = 0.05;
  std::uint64_t seed = 0;
  bool use_bias = true;
  /// Feed the self-interaction records V_rr to the network.
  bool include_diagonal = false;
  /// Fixed factor mapping the locator's raw output to millimetres.
  double output_scale_mm = 100.0;

  /// Full-size widths (~366k / ~371k parameters).
  static ModelSpec full_scale(Variant v, Task t);
  /// Small widths for desk-scale experiments.
  static ModelSpec desk_scale(Variant v, Task t);

  bool equivariant() const { return variant != Variant::ordinary; }
  std::size_t output_size() const { return task == Task::locate ? 2 : 1; }
};

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

/// Kernel length, padding and output length of one halving block.
struct BlockGeometry {
  std::size_t in_len = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  std::size_t out_len = 0;
};

/// Stride-2 block whose kernel spans the whole input and whose symmetric
/// padding gives out_len = ceil(in_len / 2).
BlockGeometry halving_block(std::size_t in_len);

class Model {
 public:
  explicit Model(ModelSpec spec);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelSpec& spec() const { return spec_; }
  const std::vector<BlockGeometry>& blocks() const { return blocks_; }

  /// Parameters in declared (checkpoint) order.
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  /// Raw symmetry-breaking weights, first (lifting) layer to readout. Empty
  /// unless the variant is approximate.
  std::vector<const ad::Parameter*> symmetry_parameters() const;

  /// input [B, 4, 4, T] -> [B, 2] (mm, plate-centred) or [B, 1] logits.
  ad::Tensor forward(ad::Graph& g, const ad::Tensor& input, Mode mode, ad::Rng& rng) const;

  /// Eval-mode forward on a flat [batch, 4, 4, T] buffer; returns [batch, out].
  std::vector<double> predict(std::span<const double> inputs, std::size_t batch) const;

 private:
  ad::Tensor forward_ordinary(ad::Graph& g, const ad::Tensor& x, Mode mode, ad::Rng& rng,
                              std::vector<ad::Tensor>& p) const;
  ad::Tensor forward_equivariant(ad::Graph& g, const ad::Tensor& x, Mode mode, ad::Rng& rng,
                                 std::vector<ad::Tensor>& p) const;
  std::size_t add_param(std::string name, ad::Shape shape, double bound, ad::Rng& rng);
  std::size_t add_constant_param(std::string name, ad::Shape shape, double value);

  ModelSpec spec_;
  std::vector<BlockGeometry> blocks_;
  // mutable: parameters are bound to graphs by reference during forward.
  mutable std::vector<ad::Parameter> params_;
  std::vector<layers::IndexTable> index_;

  struct BlockSlots {
    std::size_t kernel = 0, bias = npos, gamma = npos, beta = npos, omega = npos;
  };
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::array<BlockSlots, 5> slots_{};
  std::size_t dense_w_ = 0, dense_b_ = npos, out_w_ = 0, out_b_ = npos, out_omega_ = npos;
};

// ---- checkpoints -------------------------------------------------------------
//
// Byte layout (all integers little-endian):
//   [0, 8)    magic "PSYMCKPT"
//   [8, 12)   u32 format version (1)
//   [12, 20)  u64 header length H
//   [20, 20+H) UTF-8 JSON header: {"spec": ModelSpec, "parameters":
//             [{"name", "shape"}...], "rng_state": string, "meta": object}
//   then every parameter's values as f64 little-endian, in header order.

struct Checkpoint {
  ModelSpec spec;
  std::vector<std::vector<double>> values;
  std::string rng_state;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const ad::Rng& rng, const nlohmann::json& meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Builds a model from the checkpoint spec and loads its parameters.
Model load_model(const Checkpoint& ckpt);

}  // namespace platesym::models
