#pragma once

// Minimal reverse-mode differentiation over dense float64 arrays.
//
// A Graph is a tape: every op appends one node whose inputs were created
// earlier, so reverse tape order is a reverse topological order and backward
// visits each node exactly once. Tensors are cheap handles into a graph and
// are only valid while that graph lives. A graph is confined to one thread.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace platesym::ad {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Trainable array owned outside any graph. Gradients from every graph that
/// binds it accumulate into `grad` until `zero_grad`.
class Parameter {
 public:
  Parameter(std::string name, Shape shape, std::vector<double> value);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return value_.size(); }

  std::vector<double>& value() { return value_; }
  const std::vector<double>& value() const { return value_; }
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }

  void zero_grad();

 private:
  std::string name_;
  Shape shape_;
  std::vector<double> value_;
  std::vector<double> grad_;
};

class Graph;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  Parameter* parameter = nullptr;
  std::function<void(Node&)> backward;

  /// Lazily sized gradient buffer.
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::span<const double> value() const { return node_->value; }
  /// Empty until backward has reached this node.
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  Graph& graph() const { return *graph_; }
  Node& node() const { return *node_; }
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Graph;
  Tensor(Graph* g, Node* n) : graph_(g), node_(n) {}

  Graph* graph_ = nullptr;
  Node* node_ = nullptr;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Shape shape, std::vector<double> value);
  Tensor variable(Shape shape, std::vector<double> value);
  Tensor parameter(Parameter& p);

  /// Appends an op node. `backward` reads node.grad and accumulates into the
  /// inputs' grad buffers; it is skipped when no input requires grad.
  Tensor record(Shape shape, std::vector<double> value, bool requires_grad,
                std::function<void(Node&)> backward);

  /// Seeds d(root)/d(root) = 1 for a one-element root and runs the tape in
  /// reverse. Parameter leaves add their gradient into Parameter::grad.
  void backward(const Tensor& root);

  std::size_t size() const { return tape_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> tape_;
};

// ---- primitives ------------------------------------------------------------
// Shapes in comments use B for a leading batch axis.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x [d0, d1, ..., dn] plus w broadcast along `axis` (w has dim(axis) entries).
Tensor add_along(const Tensor& x, const Tensor& w, std::size_t axis);
/// x times w broadcast along `axis`.
Tensor mul_along(const Tensor& x, const Tensor& w, std::size_t axis);

/// x [B, C_in, L] or [C_in, L]; k [C_out, C_in, K]. Cross-correlation.
Tensor conv1d(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t padding);
/// Fixed, non-trainable depthwise averaging kernel of the given length.
Tensor avg_pool1d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding);

/// out[i] = x.flat[index[i]]; backward scatter-adds.
Tensor gather(const Tensor& x, std::shared_ptr<const std::vector<std::size_t>> index,
              Shape out_shape);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

/// x [B, N], w [M, N], optional b [M] -> [B, M]. A rank-1 x is treated as B = 1
/// and the result is rank 1.
Tensor dense(const Tensor& x, const Tensor& w);
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// Normalises every batch item over all non-batch axes jointly, then applies
/// per-channel (axis 1) scale and optional shift.
Tensor layernorm(const Tensor& x, const Tensor& gamma, double eps = 1e-5);
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor swish(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax over a rank-1 tensor.
Tensor softmax(const Tensor& x);

/// Channel dropout: with probability p, zero the whole slice x[b][c] and scale
/// survivors by 1/(1-p). Identity when !training or p == 0.
Tensor dropout_channels(const Tensor& x, double p, Rng& rng, bool training);

/// Mean over one axis (the axis is removed).
Tensor mean_axis(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace platesym::ad
