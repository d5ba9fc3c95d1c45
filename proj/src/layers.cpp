#include "platesym/layers.hpp"

#include <stdexcept>

#include "platesym/dihedral.hpp"

namespace platesym::layers {
namespace {

namespace d4 = platesym::dihedral;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

IndexTable lifting_index(std::size_t out_channels, std::size_t in_channels, std::size_t taps) {
  auto table = std::make_shared<std::vector<std::size_t>>();
  table->reserve(out_channels * 8 * in_channels * 16 * taps);
  for (std::size_t o = 0; o < out_channels; ++o)
    for (const auto sigma : d4::all_elements()) {
      const auto inv = d4::inverse(sigma);
      for (std::size_t i = 0; i < in_channels; ++i)
        for (int r = 0; r < 4; ++r)
          for (int s = 0; s < 4; ++s) {
            const auto a = static_cast<std::size_t>(d4::permute_corner(inv, r));
            const auto b = static_cast<std::size_t>(d4::permute_corner(inv, s));
            const std::size_t base = (((o * in_channels + i) * 4 + a) * 4 + b) * taps;
            for (std::size_t k = 0; k < taps; ++k) table->push_back(base + k);
          }
    }
  return table;
}

IndexTable regular_index(std::size_t out_channels, std::size_t in_channels, std::size_t taps) {
  auto table = std::make_shared<std::vector<std::size_t>>();
  table->reserve(out_channels * 8 * in_channels * 8 * taps);
  for (std::size_t o = 0; o < out_channels; ++o)
    for (const auto sigma : d4::all_elements()) {
      const auto inv = d4::inverse(sigma);
      for (std::size_t i = 0; i < in_channels; ++i)
        for (const auto pi : d4::all_elements()) {
          const auto rel = static_cast<std::size_t>(d4::compose(inv, pi).index());
          const std::size_t base = ((o * in_channels + i) * 8 + rel) * taps;
          for (std::size_t k = 0; k < taps; ++k) table->push_back(base + k);
        }
    }
  return table;
}

ad::Tensor lift(const ad::Tensor& x, const ad::Tensor& kernel, const IndexTable& index,
                std::size_t stride, std::size_t padding) {
  require(x.rank() == 5 && x.dim(2) == 4 && x.dim(3) == 4, "lift: input must be [B, C, 4, 4, T]");
  require(kernel.rank() == 5 && kernel.dim(2) == 4 && kernel.dim(3) == 4,
          "lift: kernel must be [C_out, C_in, 4, 4, K]");
  require(kernel.dim(1) == x.dim(1), "lift: kernel input channels do not match input");
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(4);
  const std::size_t cout = kernel.dim(0), taps = kernel.dim(4);
  require(index->size() == cout * 8 * cin * 16 * taps, "lift: index table does not fit kernel");
  auto flat = ad::reshape(x, {batch, cin * 16, len});
  auto expanded = ad::gather(kernel, index, {cout * 8, cin * 16, taps});
  auto y = ad::conv1d(flat, expanded, stride, padding);
  return ad::reshape(y, {batch, cout, 8, y.dim(2)});
}

ad::Tensor lift(const ad::Tensor& x, const ad::Tensor& kernel, std::size_t stride,
                std::size_t padding) {
  require(kernel.rank() == 5, "lift: kernel must be [C_out, C_in, 4, 4, K]");
  return lift(x, kernel, lifting_index(kernel.dim(0), kernel.dim(1), kernel.dim(4)), stride,
              padding);
}

ad::Tensor group_conv(const ad::Tensor& x, const ad::Tensor& kernel, const IndexTable& index,
                      std::size_t stride, std::size_t padding) {
  require(x.rank() == 4 && x.dim(2) == 8, "group_conv: input must be [B, C, 8, T]");
  require(kernel.rank() == 4 && kernel.dim(2) == 8, "group_conv: kernel must be [C_out, C_in, 8, K]");
  require(kernel.dim(1) == x.dim(1), "group_conv: kernel input channels do not match input");
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(3);
  const std::size_t cout = kernel.dim(0), taps = kernel.dim(3);
  require(index->size() == cout * 8 * cin * 8 * taps, "group_conv: index table does not fit kernel");
  auto flat = ad::reshape(x, {batch, cin * 8, len});
  auto expanded = ad::gather(kernel, index, {cout * 8, cin * 8, taps});
  auto y = ad::conv1d(flat, expanded, stride, padding);
  return ad::reshape(y, {batch, cout, 8, y.dim(2)});
}

ad::Tensor group_conv(const ad::Tensor& x, const ad::Tensor& kernel, std::size_t stride,
                      std::size_t padding) {
  require(kernel.rank() == 4, "group_conv: kernel must be [C_out, C_in, 8, K]");
  return group_conv(x, kernel, regular_index(kernel.dim(0), kernel.dim(1), kernel.dim(3)), stride,
                    padding);
}

ad::Tensor symmetry_weights(const ad::Tensor& raw) {
  require(raw.rank() == 1 && raw.numel() == 8, "symmetry_weights: expected 8 raw weights");
  return ad::scale(ad::softmax(ad::scale(raw, 1.0 / 8.0)), 8.0);
}

ad::Tensor apply_symmetry_weights(const ad::Tensor& x, const ad::Tensor& omega) {
  require(x.rank() >= 3 && x.dim(2) == 8, "symmetry weights: features must be [B, C, 8, ...]");
  return ad::mul_along(x, omega, 2);
}

ad::Tensor approx_group_conv(const ad::Tensor& x, const ad::Tensor& kernel,
                             const ad::Tensor& omega, const IndexTable& index,
                             std::size_t stride, std::size_t padding) {
  return apply_symmetry_weights(group_conv(x, kernel, index, stride, padding), omega);
}

std::vector<double> vector_readout_matrix() {
  std::vector<double> m(2 * 16, 0.0);
  for (const auto sigma : d4::all_elements()) {
    const auto rot = d4::vector_matrix(sigma);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) m[i * 16 + j * 8 + sigma.index()] = rot[i][j];
  }
  return m;
}

ad::Tensor vector_head(const ad::Tensor& f) {
  require(f.rank() == 3 && f.dim(2) == 8, "vector_head: features must be [B, C, 8]");
  require(f.dim(1) == 2, "vector_head: channel axis must have size 2");
  auto readout = f.graph().constant({2, 16}, vector_readout_matrix());
  return ad::dense(ad::reshape(f, {f.dim(0), 16}), readout);
}

ad::Tensor scalar_head(const ad::Tensor& f, const ad::Tensor& w, const ad::Tensor& b) {
  require(f.rank() == 3 && f.dim(2) == 8, "scalar_head: features must be [B, C, 8]");
  return ad::dense(ad::mean_axis(f, 2), w, b);
}

}  // namespace platesym::layers
