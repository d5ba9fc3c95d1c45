#pragma once

#include <cstddef>
#include <span>

// Compute kernels behind the differentiable ops. Every kernel comes in two
// flavours: a plain serial loop nest kept as the reference, and the
// production path (OpenMP over independent slices, GEMM for the contraction).
// Tests pin the production path to the reference.
namespace platesym::kernels {

struct Conv1dShape {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_len = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_len() const {
    return (in_len + 2 * padding - kernel) / stride + 1;
  }
  /// Throws std::invalid_argument if the geometry is inconsistent.
  void validate() const;
};

// Layouts: x [batch][in_channels][in_len], w [out_channels][in_channels][kernel],
// y [batch][out_channels][out_len]. Cross-correlation, zero padding.

void conv1d_forward_reference(const Conv1dShape& s, std::span<const double> x,
                              std::span<const double> w, std::span<double> y);
/// Accumulates into dx and dw; either may be empty to skip it.
void conv1d_backward_reference(const Conv1dShape& s, std::span<const double> x,
                               std::span<const double> w,
                               std::span<const double> dy, std::span<double> dx,
                               std::span<double> dw);

void conv1d_forward(const Conv1dShape& s, std::span<const double> x,
                    std::span<const double> w, std::span<double> y);
void conv1d_backward(const Conv1dShape& s, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy,
                     std::span<double> dx, std::span<double> dw);

/// Depthwise moving average with a fixed 1/kernel weight. `s.out_channels` is
/// ignored; channels map to themselves.
void avg_pool1d_forward_reference(const Conv1dShape& s, std::span<const double> x,
                                  std::span<double> y);
void avg_pool1d_forward(const Conv1dShape& s, std::span<const double> x,
                        std::span<double> y);
void avg_pool1d_backward(const Conv1dShape& s, std::span<const double> dy,
                         std::span<double> dx);

/// y[b][m] = sum_n x[b][n] w[m][n]  (no bias).
void matmul_nt_reference(std::size_t rows, std::size_t inner, std::size_t cols,
                         std::span<const double> x, std::span<const double> w,
                         std::span<double> y);
void matmul_nt(std::size_t rows, std::size_t inner, std::size_t cols,
               std::span<const double> x, std::span<const double> w,
               std::span<double> y);

/// Number of OpenMP threads the production kernels will use (1 without OpenMP).
int max_threads();

}  // namespace platesym::kernels
