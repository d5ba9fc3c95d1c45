#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "platesym/tensor.hpp"

// Dihedral group-convolution layers fused with a time convolution.
//
// Feature layouts (B = batch):
//   adjacency input   [B, C, 4, 4, T]   receiver, sender, time
//   group features    [B, C, 8, T]      group index in canonical D4 order
//
// Each layer expands its compact kernel into an ordinary conv1d kernel with a
// fixed gather, so the group structure lives entirely in the index tables and
// gradients flow back onto the shared weights.
namespace platesym::layers {

using IndexTable = std::shared_ptr<const std::vector<std::size_t>>;

/// Gather table mapping a lifting kernel [C_out, C_in, 4, 4, K] to the conv1d
/// kernel [C_out*8, C_in*16, K]: entry (o, sigma, i, r, s, k) reads
/// K[o][i][sigma^-1 r][sigma^-1 s][k].
IndexTable lifting_index(std::size_t out_channels, std::size_t in_channels, std::size_t taps);

/// Gather table mapping a regular kernel [C_out, C_in, 8, K] to the conv1d
/// kernel [C_out*8, C_in*8, K]: entry (o, sigma, i, pi, k) reads
/// K[o][i][sigma^-1 pi][k].
IndexTable regular_index(std::size_t out_channels, std::size_t in_channels, std::size_t taps);

/// [B, C_in, 4, 4, T] -> [B, C_out, 8, T'].
ad::Tensor lift(const ad::Tensor& x, const ad::Tensor& kernel, const IndexTable& index,
                std::size_t stride, std::size_t padding);
ad::Tensor lift(const ad::Tensor& x, const ad::Tensor& kernel, std::size_t stride,
                std::size_t padding);

/// [B, C_in, 8, T] -> [B, C_out, 8, T'].
ad::Tensor group_conv(const ad::Tensor& x, const ad::Tensor& kernel, const IndexTable& index,
                      std::size_t stride, std::size_t padding);
ad::Tensor group_conv(const ad::Tensor& x, const ad::Tensor& kernel, std::size_t stride,
                      std::size_t padding);

/// omega = 8 * softmax(g / 8) for raw weights g of length 8.
ad::Tensor symmetry_weights(const ad::Tensor& raw);

/// Scales group slice sigma of x [B, C, 8, ...] by omega[sigma].
ad::Tensor apply_symmetry_weights(const ad::Tensor& x, const ad::Tensor& omega);

/// group_conv followed by the omega weighting.
ad::Tensor approx_group_conv(const ad::Tensor& x, const ad::Tensor& kernel,
                             const ad::Tensor& omega, const IndexTable& index,
                             std::size_t stride, std::size_t padding);

/// Constant [2, 16] contraction matrix with M[i][j*8 + sigma] = R_sigma[i][j].
std::vector<double> vector_readout_matrix();

/// [B, 2, 8] -> [B, 2]: v^i = sum_sigma sum_j R_sigma^{ij} F^j_sigma.
ad::Tensor vector_head(const ad::Tensor& f);

/// [B, C, 8] -> [B, 1]: mean over the group index, then a dense map.
ad::Tensor scalar_head(const ad::Tensor& f, const ad::Tensor& w, const ad::Tensor& b);

}  // namespace platesym::layers
