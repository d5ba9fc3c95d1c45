#include "platesym/kernels.hpp"

#include <Eigen/Core>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace platesym::kernels {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

// cols[(ci*K + k)][b*out_len + t] = x[b][ci][t*stride + k - padding]
void im2col(const Conv1dShape& s, std::span<const double> x, std::vector<double>& cols) {
  const std::size_t lo = s.out_len();
  const std::size_t ncols = s.batch * lo;
  cols.assign(s.in_channels * s.kernel * ncols, 0.0);
  const auto rows = static_cast<long>(s.in_channels * s.kernel);
#pragma omp parallel for schedule(static)
  for (long row = 0; row < rows; ++row) {
    const std::size_t ci = static_cast<std::size_t>(row) / s.kernel;
    const std::size_t k = static_cast<std::size_t>(row) % s.kernel;
    double* dst = cols.data() + static_cast<std::size_t>(row) * ncols;
    for (std::size_t b = 0; b < s.batch; ++b) {
      const double* src = x.data() + (b * s.in_channels + ci) * s.in_len;
      double* out = dst + b * lo;
      for (std::size_t t = 0; t < lo; ++t) {
        const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
        if (pos >= 0 && pos < static_cast<long>(s.in_len)) out[t] = src[pos];
      }
    }
  }
}

// Inverse scatter of im2col; parallel over input channels so writes never alias.
void col2im_add(const Conv1dShape& s, const std::vector<double>& cols, std::span<double> dx) {
  const std::size_t lo = s.out_len();
  const std::size_t ncols = s.batch * lo;
  const auto channels = static_cast<long>(s.in_channels);
#pragma omp parallel for schedule(static)
  for (long cil = 0; cil < channels; ++cil) {
    const auto ci = static_cast<std::size_t>(cil);
    for (std::size_t k = 0; k < s.kernel; ++k) {
      const double* src = cols.data() + (ci * s.kernel + k) * ncols;
      for (std::size_t b = 0; b < s.batch; ++b) {
        double* dst = dx.data() + (b * s.in_channels + ci) * s.in_len;
        const double* in = src + b * lo;
        for (std::size_t t = 0; t < lo; ++t) {
          const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
          if (pos >= 0 && pos < static_cast<long>(s.in_len)) dst[pos] += in[t];
        }
      }
    }
  }
}

void check_sizes(const Conv1dShape& s, std::span<const double> x, std::span<const double> w) {
  s.validate();
  if (x.size() != s.batch * s.in_channels * s.in_len) {
    throw std::invalid_argument("conv1d: input size does not match shape");
  }
  if (w.size() != s.out_channels * s.in_channels * s.kernel) {
    throw std::invalid_argument("conv1d: kernel size does not match shape");
  }
}

}  // namespace

void Conv1dShape::validate() const {
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (kernel < 1 || kernel > in_len + 2 * padding) {
    throw std::invalid_argument("conv1d: kernel longer than padded input");
  }
  if (batch == 0 || in_channels == 0 || out_channels == 0) {
    throw std::invalid_argument("conv1d: empty dimension");
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void conv1d_forward_reference(const Conv1dShape& s, std::span<const double> x,
                              std::span<const double> w, std::span<double> y) {
  check_sizes(s, x, w);
  const std::size_t lo = s.out_len();
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t t = 0; t < lo; ++t) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
          for (std::size_t k = 0; k < s.kernel; ++k) {
            const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
            if (pos < 0 || pos >= static_cast<long>(s.in_len)) continue;
            acc += w[(co * s.in_channels + ci) * s.kernel + k] *
                   x[(b * s.in_channels + ci) * s.in_len + static_cast<std::size_t>(pos)];
          }
        }
        y[(b * s.out_channels + co) * lo + t] = acc;
      }
    }
  }
}

void conv1d_backward_reference(const Conv1dShape& s, std::span<const double> x,
                               std::span<const double> w, std::span<const double> dy,
                               std::span<double> dx, std::span<double> dw) {
  check_sizes(s, x, w);
  const std::size_t lo = s.out_len();
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t t = 0; t < lo; ++t) {
        const double g = dy[(b * s.out_channels + co) * lo + t];
        for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
          for (std::size_t k = 0; k < s.kernel; ++k) {
            const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
            if (pos < 0 || pos >= static_cast<long>(s.in_len)) continue;
            const std::size_t xi = (b * s.in_channels + ci) * s.in_len + static_cast<std::size_t>(pos);
            const std::size_t wi = (co * s.in_channels + ci) * s.kernel + k;
            if (!dw.empty()) dw[wi] += g * x[xi];
            if (!dx.empty()) dx[xi] += g * w[wi];
          }
        }
      }
    }
  }
}

void conv1d_forward(const Conv1dShape& s, std::span<const double> x,
                    std::span<const double> w, std::span<double> y) {
  check_sizes(s, x, w);
  const std::size_t lo = s.out_len();
  const std::size_t ncols = s.batch * lo;
  const std::size_t inner = s.in_channels * s.kernel;
  std::vector<double> cols;
  im2col(s, x, cols);
  RowMatrix out(s.out_channels, ncols);
  out.noalias() = MapConst(w.data(), s.out_channels, inner) * MapConst(cols.data(), inner, ncols);
  const auto batch = static_cast<long>(s.batch);
#pragma omp parallel for schedule(static)
  for (long bl = 0; bl < batch; ++bl) {
    const auto b = static_cast<std::size_t>(bl);
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const double* src = out.data() + co * ncols + b * lo;
      double* dst = y.data() + (b * s.out_channels + co) * lo;
      for (std::size_t t = 0; t < lo; ++t) dst[t] = src[t];
    }
  }
}

void conv1d_backward(const Conv1dShape& s, std::span<const double> x,
                     std::span<const double> w, std::span<const double> dy,
                     std::span<double> dx, std::span<double> dw) {
  check_sizes(s, x, w);
  const std::size_t lo = s.out_len();
  const std::size_t ncols = s.batch * lo;
  const std::size_t inner = s.in_channels * s.kernel;
  RowMatrix grad(s.out_channels, ncols);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      const double* src = dy.data() + (b * s.out_channels + co) * lo;
      double* dst = grad.data() + co * ncols + b * lo;
      for (std::size_t t = 0; t < lo; ++t) dst[t] = src[t];
    }
  }
  std::vector<double> cols;
  if (!dw.empty()) {
    im2col(s, x, cols);
    Map(dw.data(), s.out_channels, inner).noalias() +=
        grad * MapConst(cols.data(), inner, ncols).transpose();
  }
  if (!dx.empty()) {
    cols.assign(inner * ncols, 0.0);
    Map(cols.data(), inner, ncols).noalias() =
        MapConst(w.data(), s.out_channels, inner).transpose() * grad;
    col2im_add(s, cols, dx);
  }
}

void avg_pool1d_forward_reference(const Conv1dShape& s, std::span<const double> x,
                                  std::span<double> y) {
  s.validate();
  const std::size_t lo = s.out_len();
  const double inv = 1.0 / static_cast<double>(s.kernel);
  for (std::size_t bc = 0; bc < s.batch * s.in_channels; ++bc) {
    for (std::size_t t = 0; t < lo; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.kernel; ++k) {
        const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
        if (pos >= 0 && pos < static_cast<long>(s.in_len)) acc += x[bc * s.in_len + pos];
      }
      y[bc * lo + t] = acc * inv;
    }
  }
}

void avg_pool1d_forward(const Conv1dShape& s, std::span<const double> x, std::span<double> y) {
  s.validate();
  if (x.size() != s.batch * s.in_channels * s.in_len) {
    throw std::invalid_argument("avg_pool1d: input size does not match shape");
  }
  const std::size_t lo = s.out_len();
  const double inv = 1.0 / static_cast<double>(s.kernel);
  const auto rows = static_cast<long>(s.batch * s.in_channels);
#pragma omp parallel for schedule(static)
  for (long bcl = 0; bcl < rows; ++bcl) {
    const auto bc = static_cast<std::size_t>(bcl);
    const double* src = x.data() + bc * s.in_len;
    // Prefix sums turn each window into one subtraction.
    std::vector<double> prefix(s.in_len + 1, 0.0);
    for (std::size_t i = 0; i < s.in_len; ++i) prefix[i + 1] = prefix[i] + src[i];
    for (std::size_t t = 0; t < lo; ++t) {
      const long start = static_cast<long>(t * s.stride) - static_cast<long>(s.padding);
      const long lo_i = std::max(0L, start);
      const long hi_i = std::min(static_cast<long>(s.in_len), start + static_cast<long>(s.kernel));
      y[bc * lo + t] = hi_i > lo_i ? (prefix[hi_i] - prefix[lo_i]) * inv : 0.0;
    }
  }
}

void avg_pool1d_backward(const Conv1dShape& s, std::span<const double> dy, std::span<double> dx) {
  s.validate();
  const std::size_t lo = s.out_len();
  const double inv = 1.0 / static_cast<double>(s.kernel);
  const auto rows = static_cast<long>(s.batch * s.in_channels);
#pragma omp parallel for schedule(static)
  for (long bcl = 0; bcl < rows; ++bcl) {
    const auto bc = static_cast<std::size_t>(bcl);
    for (std::size_t t = 0; t < lo; ++t) {
      const double g = dy[bc * lo + t] * inv;
      for (std::size_t k = 0; k < s.kernel; ++k) {
        const long pos = static_cast<long>(t * s.stride + k) - static_cast<long>(s.padding);
        if (pos >= 0 && pos < static_cast<long>(s.in_len)) dx[bc * s.in_len + pos] += g;
      }
    }
  }
}

void matmul_nt_reference(std::size_t rows, std::size_t inner, std::size_t cols,
                         std::span<const double> x, std::span<const double> w,
                         std::span<double> y) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < inner; ++k) acc += x[i * inner + k] * w[j * inner + k];
      y[i * cols + j] = acc;
    }
  }
}

void matmul_nt(std::size_t rows, std::size_t inner, std::size_t cols,
               std::span<const double> x, std::span<const double> w, std::span<double> y) {
  Map(y.data(), rows, cols).noalias() =
      MapConst(x.data(), rows, inner) * MapConst(w.data(), cols, inner).transpose();
}

}  // namespace platesym::kernels
