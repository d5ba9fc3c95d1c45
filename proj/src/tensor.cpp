#include "platesym/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "platesym/kernels.hpp"

namespace platesym::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void same_graph(const Tensor& a, const Tensor& b) {
  require(&a.graph() == &b.graph(), "tensors belong to different graphs");
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Splits a shape around `axis` into (outer, dim, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  require(axis < shape.size(), "axis out of range");
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D df) {
  std::vector<double> y(x.numel());
  auto xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  Node* xn = &x.node();
  return x.graph().record(x.shape(), std::move(y), x.requires_grad(), [xn, df](Node& self) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * df(xn->value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Parameter::Parameter(std::string name, Shape shape, std::vector<double> value)
    : name_(std::move(name)), shape_(std::move(shape)), value_(std::move(value)) {
  require(numel(shape_) == value_.size(), "parameter: value size does not match shape");
  grad_.assign(value_.size(), 0.0);
}

void Parameter::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

std::vector<double>& Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

double Tensor::item() const {
  require(numel() == 1, "item() on a tensor with more than one element");
  return node_->value[0];
}

Tensor Graph::constant(Shape shape, std::vector<double> value) {
  require(numel(shape) == value.size(), "constant: value size does not match shape");
  return record(std::move(shape), std::move(value), false, nullptr);
}

Tensor Graph::variable(Shape shape, std::vector<double> value) {
  require(numel(shape) == value.size(), "variable: value size does not match shape");
  return record(std::move(shape), std::move(value), true, nullptr);
}

Tensor Graph::parameter(Parameter& p) {
  Tensor t = record(p.shape(), p.value(), true, nullptr);
  t.node().parameter = &p;
  return t;
}

Tensor Graph::record(Shape shape, std::vector<double> value, bool requires_grad,
                     std::function<void(Node&)> backward) {
  auto node = std::make_unique<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) node->backward = std::move(backward);
  Node* raw = node.get();
  tape_.push_back(std::move(node));
  return Tensor(this, raw);
}

void Graph::backward(const Tensor& root) {
  require(&root.graph() == this, "backward: root from another graph");
  require(root.numel() == 1, "backward: root must hold one element");
  for (auto& n : tape_) n->grad.clear();
  root.node().grad_buffer()[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& n = **it;
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(n);
    if (n.parameter != nullptr) {
      auto& pg = n.parameter->grad();
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  same_graph(a, b);
  require(a.shape() == b.shape(), "add: shape mismatch");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  Node* an = &a.node();
  Node* bn = &b.node();
  return a.graph().record(a.shape(), std::move(y), any_grad({&a, &b}), [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  same_graph(a, b);
  require(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  Node* an = &a.node();
  Node* bn = &b.node();
  return a.graph().record(a.shape(), std::move(y), any_grad({&a, &b}), [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_along(const Tensor& x, const Tensor& w, std::size_t axis) {
  same_graph(x, w);
  const AxisSplit s = split_at(x.shape(), axis);
  require(w.numel() == s.dim, "add_along: weight length must equal the axis extent");
  std::vector<double> y(x.value().begin(), x.value().end());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < s.dim; ++d) {
      const double v = w.value()[d];
      double* row = y.data() + (o * s.dim + d) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) row[i] += v;
    }
  Node* xn = &x.node();
  Node* wn = &w.node();
  return x.graph().record(x.shape(), std::move(y), any_grad({&x, &w}), [xn, wn, s](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wn->requires_grad) {
      auto& g = wn->grad_buffer();
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t d = 0; d < s.dim; ++d) {
          const double* row = self.grad.data() + (o * s.dim + d) * s.inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < s.inner; ++i) acc += row[i];
          g[d] += acc;
        }
    }
  });
}

Tensor mul_along(const Tensor& x, const Tensor& w, std::size_t axis) {
  same_graph(x, w);
  const AxisSplit s = split_at(x.shape(), axis);
  require(w.numel() == s.dim, "mul_along: weight length must equal the axis extent");
  std::vector<double> y(x.numel());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < s.dim; ++d) {
      const double v = w.value()[d];
      const std::size_t base = (o * s.dim + d) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) y[base + i] = x.value()[base + i] * v;
    }
  Node* xn = &x.node();
  Node* wn = &w.node();
  return x.graph().record(x.shape(), std::move(y), any_grad({&x, &w}), [xn, wn, s](Node& self) {
    const bool gx = xn->requires_grad;
    const bool gw = wn->requires_grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t d = 0; d < s.dim; ++d) {
        const std::size_t base = (o * s.dim + d) * s.inner;
        if (gx) {
          auto& g = xn->grad_buffer();
          const double v = wn->value[d];
          for (std::size_t i = 0; i < s.inner; ++i) g[base + i] += self.grad[base + i] * v;
        }
        if (gw) {
          double acc = 0.0;
          for (std::size_t i = 0; i < s.inner; ++i) acc += self.grad[base + i] * xn->value[base + i];
          wn->grad_buffer()[d] += acc;
        }
      }
  });
}

// ---- convolution -----------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t padding) {
  same_graph(x, k);
  require(x.rank() == 2 || x.rank() == 3, "conv1d: input must be [C, L] or [B, C, L]");
  require(k.rank() == 3, "conv1d: kernel must be [C_out, C_in, K]");
  const bool batched = x.rank() == 3;
  kernels::Conv1dShape s;
  s.batch = batched ? x.dim(0) : 1;
  s.in_channels = x.dim(batched ? 1 : 0);
  s.in_len = x.dim(batched ? 2 : 1);
  s.out_channels = k.dim(0);
  s.kernel = k.dim(2);
  s.stride = stride;
  s.padding = padding;
  require(k.dim(1) == s.in_channels, "conv1d: kernel input channels do not match input");
  s.validate();
  std::vector<double> y(s.batch * s.out_channels * s.out_len());
  kernels::conv1d_forward(s, x.value(), k.value(), y);
  Shape shape = batched ? Shape{s.batch, s.out_channels, s.out_len()}
                        : Shape{s.out_channels, s.out_len()};
  Node* xn = &x.node();
  Node* kn = &k.node();
  return x.graph().record(std::move(shape), std::move(y), any_grad({&x, &k}),
                          [xn, kn, s](Node& self) {
                            std::span<double> dx, dk;
                            if (xn->requires_grad) dx = xn->grad_buffer();
                            if (kn->requires_grad) dk = kn->grad_buffer();
                            kernels::conv1d_backward(s, xn->value, kn->value, self.grad, dx, dk);
                          });
}

Tensor avg_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(x.rank() >= 2, "avg_pool1d: input must have a time axis");
  kernels::Conv1dShape s;
  s.in_len = x.shape().back();
  s.in_channels = x.numel() / s.in_len;
  s.batch = 1;
  s.out_channels = s.in_channels;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  s.validate();
  std::vector<double> y(s.in_channels * s.out_len());
  kernels::avg_pool1d_forward(s, x.value(), y);
  Shape shape = x.shape();
  shape.back() = s.out_len();
  Node* xn = &x.node();
  return x.graph().record(std::move(shape), std::move(y), x.requires_grad(), [xn, s](Node& self) {
    kernels::avg_pool1d_backward(s, self.grad, xn->grad_buffer());
  });
}

// ---- indexing ----------------------------------------------------------------

Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> index,
              Shape out_shape) {
  require(index != nullptr && numel(out_shape) == index->size(), "gather: index/shape mismatch");
  std::vector<double> y(index->size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    require((*index)[i] < x.numel(), "gather: index out of range");
    y[i] = x.value()[(*index)[i]];
  }
  Node* xn = &x.node();
  return x.graph().record(std::move(out_shape), std::move(y), x.requires_grad(),
                          [xn, index](Node& self) {
                            auto& g = xn->grad_buffer();
                            for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
                          });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape: element count changes");
  std::vector<double> y(x.value().begin(), x.value().end());
  Node* xn = &x.node();
  return x.graph().record(std::move(shape), std::move(y), x.requires_grad(), [xn](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  require(axes.size() == rank, "permute: axes must list every axis");
  std::vector<bool> seen(rank, false);
  for (auto a : axes) {
    require(a < rank && !seen[a], "permute: axes must be a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
  // Source offset for every destination element.
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  for (std::size_t flat = 0; flat < index->size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += counter[i] * in_stride[axes[i]];
    (*index)[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(index), std::move(out_shape));
}

// ---- dense -------------------------------------------------------------------

namespace {

Tensor dense_impl(const Tensor& x, const Tensor& w, const Tensor* b) {
  same_graph(x, w);
  require(w.rank() == 2, "dense: weight must be [M, N]");
  require(x.rank() == 1 || x.rank() == 2, "dense: input must be [N] or [B, N]");
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t inner = x.shape().back();
  const std::size_t cols = w.dim(0);
  require(w.dim(1) == inner, "dense: inner dimensions disagree");
  if (b != nullptr) require(b->numel() == cols, "dense: bias length mismatch");
  std::vector<double> y(rows * cols);
  kernels::matmul_nt(rows, inner, cols, x.value(), w.value(), y);
  if (b != nullptr) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += b->value()[c];
  }
  Shape shape = x.rank() == 2 ? Shape{rows, cols} : Shape{cols};
  Node* xn = &x.node();
  Node* wn = &w.node();
  Node* bn = b != nullptr ? &b->node() : nullptr;
  const bool grad = x.requires_grad() || w.requires_grad() || (b != nullptr && b->requires_grad());
  return x.graph().record(std::move(shape), std::move(y), grad,
                          [xn, wn, bn, rows, inner, cols](Node& self) {
                            MapConst dy(self.grad.data(), rows, cols);
                            if (xn->requires_grad) {
                              Map(xn->grad_buffer().data(), rows, inner).noalias() +=
                                  dy * MapConst(wn->value.data(), cols, inner);
                            }
                            if (wn->requires_grad) {
                              Map(wn->grad_buffer().data(), cols, inner).noalias() +=
                                  dy.transpose() * MapConst(xn->value.data(), rows, inner);
                            }
                            if (bn != nullptr && bn->requires_grad) {
                              auto& g = bn->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
                            }
                          });
}

Tensor layernorm_impl(const Tensor& x, const Tensor& gamma, const Tensor* beta, double eps) {
  require(x.rank() >= 2, "layernorm: input must be [B, C, ...]");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t per_item = x.numel() / batch;
  const std::size_t inner = per_item / channels;
  require(gamma.numel() == channels, "layernorm: scale length must equal channel count");
  if (beta != nullptr) require(beta->numel() == channels, "layernorm: shift length mismatch");

  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(batch);
  std::vector<double> y(x.numel());
  const auto xv = x.value();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = xv.data() + b * per_item;
    double mean = 0.0;
    for (std::size_t i = 0; i < per_item; ++i) mean += src[i];
    mean /= static_cast<double>(per_item);
    double var = 0.0;
    for (std::size_t i = 0; i < per_item; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(per_item);
    inv_std[b] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < channels; ++c) {
      const double gv = gamma.value()[c];
      const double bv = beta != nullptr ? beta->value()[c] : 0.0;
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = b * per_item + c * inner + i;
        xhat[idx] = (xv[idx] - mean) * inv_std[b];
        y[idx] = gv * xhat[idx] + bv;
      }
    }
  }
  Node* xn = &x.node();
  Node* gn = &gamma.node();
  Node* bn = beta != nullptr ? &beta->node() : nullptr;
  const bool grad = x.requires_grad() || gamma.requires_grad() ||
                    (beta != nullptr && beta->requires_grad());
  return x.graph().record(
      x.shape(), std::move(y), grad,
      [xn, gn, bn, batch, channels, inner, per_item, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Node& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
          auto& g = gn->grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = b * per_item + c * inner + i;
                g[c] += dy[idx] * xhat[idx];
              }
        }
        if (bn != nullptr && bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < inner; ++i) g[c] += dy[b * per_item + c * inner + i];
        }
        if (xn->requires_grad) {
          auto& g = xn->grad_buffer();
          const double n = static_cast<double>(per_item);
          for (std::size_t b = 0; b < batch; ++b) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = b * per_item + c * inner + i;
                const double d = dy[idx] * gn->value[c];
                mean_d += d;
                mean_dx += d * xhat[idx];
              }
            mean_d /= n;
            mean_dx /= n;
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t idx = b * per_item + c * inner + i;
                const double d = dy[idx] * gn->value[c];
                g[idx] += inv_std[b] * (d - mean_d - xhat[idx] * mean_dx);
              }
          }
        }
      });
}

}  // namespace

Tensor dense(const Tensor& x, const Tensor& w) { return dense_impl(x, w, nullptr); }
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  same_graph(x, b);
  return dense_impl(x, w, &b);
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, double eps) {
  same_graph(x, gamma);
  return layernorm_impl(x, gamma, nullptr, eps);
}
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  same_graph(x, gamma);
  same_graph(x, beta);
  return layernorm_impl(x, gamma, &beta, eps);
}

// ---- activations -------------------------------------------------------------

Tensor swish(const Tensor& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softmax(const Tensor& x) {
  require(x.rank() == 1, "softmax: input must be rank 1");
  require(x.numel() > 0, "softmax: empty axis");
  const auto xv = x.value();
  const double mx = *std::max_element(xv.begin(), xv.end());
  std::vector<double> y(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::exp(xv[i] - mx);
    total += y[i];
  }
  for (double& v : y) v /= total;
  Node* xn = &x.node();
  return x.graph().record(x.shape(), std::move(y), x.requires_grad(), [xn](Node& self) {
    double dot = 0.0;
    for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.grad[i] * self.value[i];
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.value[i] * (self.grad[i] - dot);
  });
}

Tensor dropout_channels(const Tensor& x, double p, Rng& rng, bool training) {
  require(p >= 0.0 && p < 1.0, "dropout: probability must lie in [0, 1)");
  require(x.rank() >= 2, "dropout: input must be [B, C, ...]");
  if (!training || p == 0.0) return x;
  const std::size_t slices = x.dim(0) * x.dim(1);
  const std::size_t inner = x.numel() / slices;
  std::bernoulli_distribution drop(p);
  std::vector<double> mask(slices);
  const double keep = 1.0 / (1.0 - p);
  for (auto& m : mask) m = drop(rng) ? 0.0 : keep;
  std::vector<double> y(x.numel());
  for (std::size_t s = 0; s < slices; ++s)
    for (std::size_t i = 0; i < inner; ++i) y[s * inner + i] = x.value()[s * inner + i] * mask[s];
  Node* xn = &x.node();
  return x.graph().record(x.shape(), std::move(y), x.requires_grad(),
                          [xn, inner, mask = std::move(mask)](Node& self) {
                            auto& g = xn->grad_buffer();
                            for (std::size_t s = 0; s < mask.size(); ++s)
                              for (std::size_t i = 0; i < inner; ++i)
                                g[s * inner + i] += self.grad[s * inner + i] * mask[s];
                          });
}

// ---- reductions --------------------------------------------------------------

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_at(x.shape(), axis);
  require(s.dim > 0, "mean_axis: empty axis");
  std::vector<double> y(s.outer * s.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(s.dim);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t d = 0; d < s.dim; ++d)
      for (std::size_t i = 0; i < s.inner; ++i)
        y[o * s.inner + i] += x.value()[(o * s.dim + d) * s.inner + i];
  for (double& v : y) v *= inv;
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<long>(axis));
  Node* xn = &x.node();
  return x.graph().record(std::move(shape), std::move(y), x.requires_grad(),
                          [xn, s, inv](Node& self) {
                            auto& g = xn->grad_buffer();
                            for (std::size_t o = 0; o < s.outer; ++o)
                              for (std::size_t d = 0; d < s.dim; ++d)
                                for (std::size_t i = 0; i < s.inner; ++i)
                                  g[(o * s.dim + d) * s.inner + i] += self.grad[o * s.inner + i] * inv;
                          });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  Node* xn = &x.node();
  return x.graph().record(Shape{1}, {acc}, x.requires_grad(), [xn](Node& self) {
    auto& g = xn->grad_buffer();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace platesym::ad
