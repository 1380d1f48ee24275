#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace subdepth {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class DiffError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an op receives operands whose shapes it cannot combine.
class ShapeError : public DiffError {
 public:
  ShapeError(const std::string& op, const std::string& detail);
};

enum class OpKind {
  leaf,
  constant,
  add,
  sub,
  mul,
  div,
  neg,
  abs,
  log,
  exp,
  pow,
  sum,
  mean,
  minimum,
  maximum,
  clamp,
  sigmoid,
  elu,
  relu,
  conv2d,
  upsample,
  avg_pool,
  downsample,
  spatial_grad,
  bilinear_sample,
  reshape,
  concat,
  slice,
  broadcast,
  reduce_channels,
  where,
  transform_points,
  pinhole_project,
  backproject,
  pose_to_matrix,
  rigid_inverse,
  photometric,
};

const char* op_name(OpKind kind);

using NodeId = std::size_t;
class Graph;

/// Lightweight handle to a value recorded in a Graph.
class Tensor {
 public:
  Tensor() = default;

  [[nodiscard]] bool valid() const { return graph_ != nullptr; }
  [[nodiscard]] Graph& graph() const;
  [[nodiscard]] NodeId id() const { return id_; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::span<const double> values() const;
  [[nodiscard]] std::size_t size() const { return values().size(); }
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] double item() const;
  [[nodiscard]] double operator[](std::size_t i) const { return values()[i]; }

 private:
  friend class Graph;
  Tensor(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// View handed to a node's backward function. Input gradient buffers are
/// allocated on first access; inputs that do not require a gradient yield an
/// empty span.
class BackwardArgs {
 public:
  std::span<const double> out_grad;
  std::span<const double> out_value;

  [[nodiscard]] std::span<const double> input(std::size_t i) const;
  [[nodiscard]] const Shape& input_shape(std::size_t i) const;
  [[nodiscard]] bool needs_grad(std::size_t i) const;
  [[nodiscard]] std::span<double> input_grad(std::size_t i) const;

 private:
  friend class Graph;
  const Graph* graph_ = nullptr;
  NodeId node_ = 0;
  std::vector<std::vector<double>>* grads_ = nullptr;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Gradients;

/// Append-only record of primitive operations. Recording order is a valid
/// topological order. A Graph and its tensors belong to one thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor variable(Shape shape, std::vector<double> values);
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant(Shape shape, double fill);
  Tensor scalar(double value) { return constant({1}, value); }

  /// Appends a primitive. `backward` may be empty for ops without a
  /// derivative; it is dropped when no input requires a gradient.
  Tensor record(OpKind kind, std::span<const Tensor> inputs, Shape shape,
                std::vector<double> values, BackwardFn backward);

  [[nodiscard]] Gradients backward(const Tensor& root) const;

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  [[nodiscard]] const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }

 private:
  friend class Tensor;
  friend class BackwardArgs;

  struct Node {
    OpKind kind;
    Shape shape;
    std::vector<double> value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(const Tensor& t, const char* what) const;

  // deque keeps references returned by Tensor::shape() valid while recording.
  std::deque<Node> nodes_;
};

/// Gradients of a scalar root with respect to the leaves that require them.
class Gradients {
 public:
  /// Gradient with the leaf's shape; zeros if the root does not depend on it.
  [[nodiscard]] std::vector<double> of(const Tensor& leaf) const;
  [[nodiscard]] bool reached(const Tensor& leaf) const;

 private:
  friend class Graph;
  const Graph* graph_ = nullptr;
  std::vector<std::vector<double>> grads_;
  std::vector<std::size_t> sizes_;
};

}  // namespace subdepth
