#include "subdepth/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace subdepth {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : DiffError(op + ": shape mismatch " + detail) {}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::div: return "div";
    case OpKind::neg: return "neg";
    case OpKind::abs: return "abs";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::pow: return "pow";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::minimum: return "minimum";
    case OpKind::maximum: return "maximum";
    case OpKind::clamp: return "clamp";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::elu: return "elu";
    case OpKind::relu: return "relu";
    case OpKind::conv2d: return "conv2d";
    case OpKind::upsample: return "upsample";
    case OpKind::avg_pool: return "avg_pool";
    case OpKind::downsample: return "downsample";
    case OpKind::spatial_grad: return "spatial_grad";
    case OpKind::bilinear_sample: return "bilinear_sample";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::broadcast: return "broadcast";
    case OpKind::reduce_channels: return "reduce_channels";
    case OpKind::where: return "where";
    case OpKind::transform_points: return "transform_points";
    case OpKind::pinhole_project: return "pinhole_project";
    case OpKind::backproject: return "backproject";
    case OpKind::pose_to_matrix: return "pose_to_matrix";
    case OpKind::rigid_inverse: return "rigid_inverse";
    case OpKind::photometric: return "photometric";
  }
  return "unknown";
}

Graph& Tensor::graph() const {
  if (!graph_) throw DiffError("tensor: empty handle");
  return *graph_;
}

const Shape& Tensor::shape() const { return graph().nodes_.at(id_).shape; }

std::span<const double> Tensor::values() const { return graph().nodes_.at(id_).value; }

bool Tensor::requires_grad() const { return graph().nodes_.at(id_).requires_grad; }

double Tensor::item() const {
  auto v = values();
  if (v.size() != 1) throw ShapeError("item", "expected scalar, got " + to_string(shape()));
  return v[0];
}

std::span<const double> BackwardArgs::input(std::size_t i) const {
  return graph_->nodes_[graph_->nodes_[node_].inputs[i]].value;
}

const Shape& BackwardArgs::input_shape(std::size_t i) const {
  return graph_->nodes_[graph_->nodes_[node_].inputs[i]].shape;
}

bool BackwardArgs::needs_grad(std::size_t i) const {
  return graph_->nodes_[graph_->nodes_[node_].inputs[i]].requires_grad;
}

std::span<double> BackwardArgs::input_grad(std::size_t i) const {
  const NodeId in = graph_->nodes_[node_].inputs[i];
  const auto& node = graph_->nodes_[in];
  if (!node.requires_grad) return {};
  auto& g = (*grads_)[in];
  if (g.empty()) g.assign(node.value.size(), 0.0);
  return g;
}

void Graph::check_owned(const Tensor& t, const char* what) const {
  if (t.graph_ != this || t.id_ >= nodes_.size()) {
    throw DiffError(std::string(what) + ": tensor does not belong to this graph");
  }
}

Tensor Graph::variable(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("variable", to_string(shape) + " vs " + std::to_string(values.size()) + " values");
  }
  nodes_.push_back(Node{OpKind::leaf, std::move(shape), std::move(values), {}, {}, true});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("constant", to_string(shape) + " vs " + std::to_string(values.size()) + " values");
  }
  nodes_.push_back(Node{OpKind::constant, std::move(shape), std::move(values), {}, {}, false});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::constant(Shape shape, double fill) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, fill));
}

Tensor Graph::record(OpKind kind, std::span<const Tensor> inputs, Shape shape,
                     std::vector<double> values, BackwardFn backward) {
  if (numel(shape) != values.size()) {
    throw ShapeError(op_name(kind), "output " + to_string(shape) + " vs " +
                                        std::to_string(values.size()) + " values");
  }
  Node node{kind, std::move(shape), std::move(values), {}, {}, false};
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    check_owned(t, op_name(kind));
    node.inputs.push_back(t.id_);
    node.requires_grad = node.requires_grad || nodes_[t.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Gradients Graph::backward(const Tensor& root) const {
  check_owned(root, "backward");
  const auto& rnode = nodes_[root.id_];
  if (rnode.value.size() != 1) {
    throw DiffError("backward: root must be scalar, got shape " + to_string(rnode.shape));
  }

  std::vector<std::vector<double>> grads(nodes_.size());
  Gradients out;
  out.graph_ = this;
  out.grads_.resize(nodes_.size());
  out.sizes_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) out.sizes_[i] = nodes_[i].value.size();

  if (!rnode.requires_grad) return out;
  grads[root.id_] = {1.0};

  BackwardArgs args;
  args.graph_ = this;
  args.grads_ = &grads;
  for (std::size_t k = root.id_ + 1; k-- > 0;) {
    const auto& node = nodes_[k];
    if (grads[k].empty()) continue;
    if (node.kind == OpKind::leaf) {
      out.grads_[k] = std::move(grads[k]);
      continue;
    }
    if (node.backward) {
      args.node_ = k;
      args.out_grad = grads[k];
      args.out_value = node.value;
      node.backward(args);
    }
    std::vector<double>().swap(grads[k]);
  }
  return out;
}

std::vector<double> Gradients::of(const Tensor& leaf) const {
  if (!graph_ || &leaf.graph() != graph_) throw DiffError("gradients: tensor from another graph");
  const auto id = leaf.id();
  if (!grads_[id].empty()) return grads_[id];
  return std::vector<double>(sizes_[id], 0.0);
}

bool Gradients::reached(const Tensor& leaf) const {
  return graph_ && &leaf.graph() == graph_ && !grads_[leaf.id()].empty();
}

}  // namespace subdepth
