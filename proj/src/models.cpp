#include "platesym/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace platesym::models {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::vector<double> diagonal_mask(std::size_t len) {
  std::vector<double> m(16 * len, 1.0);
  for (int r = 0; r < 4; ++r)
    for (std::size_t t = 0; t < len; ++t) m[(r * 4 + r) * len + t] = 0.0;
  return m;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ordinary: return "ordinary";
    case Variant::exact: return "exact";
    case Variant::approximate: return "approx";
  }
  return "?";
}

std::string to_string(Task t) { return t == Task::locate ? "locate" : "detect"; }

Variant parse_variant(const std::string& s) {
  if (s == "ordinary") return Variant::ordinary;
  if (s == "exact") return Variant::exact;
  if (s == "approx" || s == "approximate") return Variant::approximate;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

Task parse_task(const std::string& s) {
  if (s == "locate") return Task::locate;
  if (s == "detect") return Task::detect;
  throw std::invalid_argument("unknown task '" + s + "'");
}

ModelSpec ModelSpec::full_scale(Variant v, Task t) {
  ModelSpec s;
  s.variant = v;
  s.task = t;
  s.channel_widths = v == Variant::ordinary ? std::array<std::size_t, 6>{40, 40, 40, 40, 40, 128}
                                            : std::array<std::size_t, 6>{16, 16, 16, 16, 16, 128};
  return s;
}

ModelSpec ModelSpec::desk_scale(Variant v, Task t) {
  ModelSpec s;
  s.variant = v;
  s.task = t;
  s.channel_widths = v == Variant::ordinary ? std::array<std::size_t, 6>{8, 8, 8, 8, 8, 32}
                                            : std::array<std::size_t, 6>{4, 4, 4, 4, 4, 32};
  return s;
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"variant", to_string(s.variant)},
                     {"task", to_string(s.task)},
                     {"channel_widths", s.channel_widths},
                     {"input_length", s.input_length},
                     {"dropout", s.dropout},
                     {"seed", s.seed},
                     {"use_bias", s.use_bias},
                     {"include_diagonal", s.include_diagonal},
                     {"output_scale_mm", s.output_scale_mm}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.task = parse_task(j.at("task").get<std::string>());
  s.channel_widths = j.at("channel_widths").get<std::array<std::size_t, 6>>();
  s.input_length = j.value("input_length", kDefaultInputLength);
  s.dropout = j.value("dropout", 0.05);
  s.seed = j.value("seed", std::uint64_t{0});
  s.use_bias = j.value("use_bias", true);
  s.include_diagonal = j.value("include_diagonal", false);
  s.output_scale_mm = j.value("output_scale_mm", 100.0);
}

BlockGeometry halving_block(std::size_t in_len) {
  require(in_len >= 1, "halving_block: empty sequence");
  BlockGeometry b;
  b.in_len = in_len;
  b.kernel = in_len;
  // ceil((K - 2 + L mod 2) / 2) with K = L, clamped at zero for L = 1.
  const long num = static_cast<long>(in_len) - 2 + static_cast<long>(in_len % 2);
  b.padding = num <= 0 ? 0 : static_cast<std::size_t>((num + 1) / 2);
  b.out_len = (in_len + 2 * b.padding - b.kernel) / 2 + 1;
  return b;
}

Model::Model(ModelSpec spec) : spec_(spec) {
  const auto& w = spec_.channel_widths;
  for (std::size_t i = 0; i < 6; ++i) require(w[i] > 0, "model: channel widths must be positive");
  for (std::size_t i = 1; i < 5; ++i) {
    require(w[i] == w[0], "model: blocks 1-5 must share one channel width (depthwise skip path)");
  }
  require(spec_.input_length >= 2, "model: input length must be at least 2");
  require(spec_.dropout >= 0.0 && spec_.dropout < 1.0, "model: dropout must lie in [0, 1)");

  std::size_t len = spec_.input_length;
  for (int b = 0; b < 5; ++b) {
    blocks_.push_back(halving_block(len));
    len = blocks_.back().out_len;
    require(len >= 1, "model: sequence length fell below 1");
  }

  ad::Rng rng(spec_.seed);
  const std::size_t c = w[0];
  const std::size_t h = w[5];
  const std::size_t group = spec_.equivariant() ? 8 : 1;
  params_.reserve(40);

  for (std::size_t b = 0; b < 5; ++b) {
    const auto& geo = blocks_[b];
    const std::string prefix = "block" + std::to_string(b + 1) + ".";
    auto& slot = slots_[b];
    if (b == 0) {
      if (spec_.equivariant()) {
        slot.kernel = add_param(prefix + "kernel", {c, 1, 4, 4, geo.kernel},
                                std::sqrt(6.0 / static_cast<double>(16 * geo.kernel)), rng);
        index_.push_back(layers::lifting_index(c, 1, geo.kernel));
      } else {
        slot.kernel = add_param(prefix + "kernel", {c, 16, geo.kernel},
                                std::sqrt(6.0 / static_cast<double>(16 * geo.kernel)), rng);
      }
    } else {
      const double fan_in = static_cast<double>(c * group * geo.kernel);
      if (spec_.equivariant()) {
        slot.kernel = add_param(prefix + "kernel", {c, c, 8, geo.kernel}, std::sqrt(6.0 / fan_in), rng);
        index_.push_back(layers::regular_index(c, c, geo.kernel));
      } else {
        slot.kernel = add_param(prefix + "kernel", {c, c, geo.kernel}, std::sqrt(6.0 / fan_in), rng);
      }
    }
    if (spec_.use_bias) slot.bias = add_constant_param(prefix + "bias", {c}, 0.0);
    if (b > 0) {
      slot.gamma = add_constant_param(prefix + "ln_scale", {c}, 1.0);
      if (spec_.use_bias) slot.beta = add_constant_param(prefix + "ln_shift", {c}, 0.0);
    }
  }

  const std::size_t flat = c * blocks_.back().out_len;
  dense_w_ = add_param("block6.dense", {h, flat}, std::sqrt(3.0 / static_cast<double>(flat)), rng);
  if (spec_.use_bias) dense_b_ = add_constant_param("block6.dense_bias", {h}, 0.0);
  const std::size_t out = spec_.output_size();
  out_w_ = add_param("block6.out", {out, h}, std::sqrt(3.0 / static_cast<double>(h)), rng);
  if (spec_.use_bias) out_b_ = add_constant_param("block6.out_bias", {out}, 0.0);

  // Symmetry-breaking weights start at the equivariant point and draw nothing
  // from the RNG, so exact and approximate models built from one seed share
  // every kernel.
  if (spec_.variant == Variant::approximate) {
    for (std::size_t b = 0; b < 5; ++b) {
      slots_[b].omega = add_constant_param("block" + std::to_string(b + 1) + ".omega", {8}, 0.0);
    }
    out_omega_ = add_constant_param("block6.omega", {8}, 0.0);
  }
}

std::size_t Model::add_param(std::string name, ad::Shape shape, double bound, ad::Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  params_.emplace_back(std::move(name), std::move(shape), std::move(v));
  return params_.size() - 1;
}

std::size_t Model::add_constant_param(std::string name, ad::Shape shape, double value) {
  std::vector<double> v(ad::numel(shape), value);
  params_.emplace_back(std::move(name), std::move(shape), std::move(v));
  return params_.size() - 1;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::vector<const ad::Parameter*> Model::symmetry_parameters() const {
  std::vector<const ad::Parameter*> out;
  if (spec_.variant != Variant::approximate) return out;
  for (const auto& s : slots_) out.push_back(&params_[s.omega]);
  out.push_back(&params_[out_omega_]);
  return out;
}

ad::Tensor Model::forward(ad::Graph& g, const ad::Tensor& input, Mode mode, ad::Rng& rng) const {
  require(input.rank() == 4 && input.dim(1) == 4 && input.dim(2) == 4,
          "forward: input must be [B, 4, 4, T]");
  require(input.dim(3) == spec_.input_length,
          "forward: expected input length " + std::to_string(spec_.input_length) + ", got " +
              std::to_string(input.dim(3)));
  std::vector<ad::Tensor> p;
  p.reserve(params_.size());
  for (auto& param : params_) p.push_back(g.parameter(param));

  ad::Tensor x = input;
  if (!spec_.include_diagonal) {
    const std::size_t batch = input.dim(0);
    std::vector<double> mask;
    mask.reserve(batch * 16 * spec_.input_length);
    const auto one = diagonal_mask(spec_.input_length);
    for (std::size_t b = 0; b < batch; ++b) mask.insert(mask.end(), one.begin(), one.end());
    x = ad::mul(x, g.constant(input.shape(), std::move(mask)));
  }
  ad::Tensor y = spec_.equivariant() ? forward_equivariant(g, x, mode, rng, p)
                                     : forward_ordinary(g, x, mode, rng, p);
  if (spec_.task == Task::locate) y = ad::scale(y, spec_.output_scale_mm);
  return y;
}

ad::Tensor Model::forward_ordinary(ad::Graph& g, const ad::Tensor& input, Mode mode, ad::Rng& rng,
                                   std::vector<ad::Tensor>& p) const {
  (void)g;
  const bool training = mode == Mode::train;
  const std::size_t batch = input.dim(0);
  ad::Tensor x = ad::reshape(input, {batch, 16, spec_.input_length});
  for (std::size_t b = 0; b < 5; ++b) {
    const auto& geo = blocks_[b];
    const auto& slot = slots_[b];
    ad::Tensor y = ad::conv1d(x, p[slot.kernel], 2, geo.padding);
    if (slot.bias != npos) y = ad::add_along(y, p[slot.bias], 1);
    if (b > 0) {
      y = ad::add(y, ad::avg_pool1d(x, geo.kernel, 2, geo.padding));
      y = slot.beta != npos ? ad::layernorm(y, p[slot.gamma], p[slot.beta])
                            : ad::layernorm(y, p[slot.gamma]);
      y = ad::swish(y);
    }
    x = ad::dropout_channels(y, spec_.dropout, rng, training);
  }
  x = ad::reshape(x, {batch, x.dim(1) * x.dim(2)});
  x = dense_b_ != npos ? ad::dense(x, p[dense_w_], p[dense_b_]) : ad::dense(x, p[dense_w_]);
  x = ad::tanh(x);
  return out_b_ != npos ? ad::dense(x, p[out_w_], p[out_b_]) : ad::dense(x, p[out_w_]);
}

ad::Tensor Model::forward_equivariant(ad::Graph& g, const ad::Tensor& input, Mode mode,
                                      ad::Rng& rng, std::vector<ad::Tensor>& p) const {
  (void)g;
  const bool training = mode == Mode::train;
  const bool approx = spec_.variant == Variant::approximate;
  const std::size_t batch = input.dim(0);
  ad::Tensor x = ad::reshape(input, {batch, 1, 4, 4, spec_.input_length});
  for (std::size_t b = 0; b < 5; ++b) {
    const auto& geo = blocks_[b];
    const auto& slot = slots_[b];
    ad::Tensor y = b == 0 ? layers::lift(x, p[slot.kernel], index_[b], 2, geo.padding)
                          : layers::group_conv(x, p[slot.kernel], index_[b], 2, geo.padding);
    if (approx) y = layers::apply_symmetry_weights(y, layers::symmetry_weights(p[slot.omega]));
    if (slot.bias != npos) y = ad::add_along(y, p[slot.bias], 1);
    if (b > 0) {
      y = ad::add(y, ad::avg_pool1d(x, geo.kernel, 2, geo.padding));
      y = slot.beta != npos ? ad::layernorm(y, p[slot.gamma], p[slot.beta])
                            : ad::layernorm(y, p[slot.gamma]);
      y = ad::swish(y);
    }
    x = ad::dropout_channels(y, spec_.dropout, rng, training);
  }
  // [B, C, 8, T] -> [B*8, C*T]: one dense map shared by every group index.
  const std::size_t c = x.dim(1), len = x.dim(3);
  x = ad::reshape(ad::permute(x, {0, 2, 1, 3}), {batch * 8, c * len});
  x = dense_b_ != npos ? ad::dense(x, p[dense_w_], p[dense_b_]) : ad::dense(x, p[dense_w_]);
  x = ad::tanh(x);
  const std::size_t h = x.dim(1);
  if (spec_.task == Task::locate) {
    x = out_b_ != npos ? ad::dense(x, p[out_w_], p[out_b_]) : ad::dense(x, p[out_w_]);
    x = ad::permute(ad::reshape(x, {batch, 8, 2}), {0, 2, 1});
    if (approx) x = layers::apply_symmetry_weights(x, layers::symmetry_weights(p[out_omega_]));
    return layers::vector_head(x);
  }
  x = ad::permute(ad::reshape(x, {batch, 8, h}), {0, 2, 1});
  if (approx) x = layers::apply_symmetry_weights(x, layers::symmetry_weights(p[out_omega_]));
  if (out_b_ != npos) return layers::scalar_head(x, p[out_w_], p[out_b_]);
  return ad::dense(ad::mean_axis(x, 2), p[out_w_]);
}

std::vector<double> Model::predict(std::span<const double> inputs, std::size_t batch) const {
  const std::size_t per = 16 * spec_.input_length;
  require(batch > 0 && inputs.size() == batch * per, "predict: input size mismatch");
  ad::Graph g;
  ad::Rng rng(0);
  auto x = g.constant({batch, 4, 4, spec_.input_length}, {inputs.begin(), inputs.end()});
  auto y = forward(g, x, Mode::eval, rng);
  return {y.value().begin(), y.value().end()};
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'S', 'Y', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& is) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("checkpoint: truncated file");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const ad::Rng& rng,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["spec"] = model.spec();
  header["parameters"] = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    header["parameters"].push_back({{"name", p.name()}, {"shape", p.shape()}});
  }
  std::ostringstream rs;
  rs << rng;
  header["rng_state"] = rs.str();
  header["meta"] = meta;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.parameters()) {
    for (double v : p.value()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  const auto hlen = get_le<std::uint64_t>(is);
  std::string text(hlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.spec = header.at("spec").get<ModelSpec>();
  ck.rng_state = header.value("rng_state", "");
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("parameters")) {
    const auto shape = entry.at("shape").get<ad::Shape>();
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = std::bit_cast<double>(get_le<std::uint64_t>(is));
    ck.values.push_back(std::move(v));
  }
  return ck;
}

Model load_model(const Checkpoint& ck) {
  Model m(ck.spec);
  auto& params = m.parameters();
  if (params.size() != ck.values.size()) {
    throw std::runtime_error("checkpoint: parameter list does not match the model spec");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != ck.values[i].size()) {
      throw std::runtime_error("checkpoint: parameter '" + params[i].name() + "' has wrong size");
    }
    params[i].value() = ck.values[i];
  }
  return m;
}

}  // namespace platesym::models
