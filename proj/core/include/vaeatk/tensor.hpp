#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vaeatk/common.hpp"

namespace vaeatk {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Node;
using NodePtr = std::shared_ptr<Node>;

// Adjoint buffers live outside the nodes. Parameter tensors stay immutable
// during a forward/backward pass, so distinct graphs over shared parameters
// can run backward concurrently.
class GradBuffers {
 public:
  // Returns the buffer for `n`, creating it zero-filled on first use.
  std::vector<double>& accum(const Node* n);
  const std::vector<double>* find(const Node* n) const;
  void release(const Node* n);
  std::unordered_map<const Node*, std::vector<double>>& raw() { return bufs_; }

 private:
  std::unordered_map<const Node*, std::vector<double>> bufs_;
};

class Node {
 public:
  Node(Shape shape, std::vector<double> value, bool requires_grad);
  virtual ~Node() = default;

  const Shape& shape() const { return shape_; }
  const std::vector<double>& value() const { return value_; }
  bool requires_grad() const { return requires_grad_; }
  const std::vector<NodePtr>& inputs() const { return inputs_; }
  bool is_leaf() const { return inputs_.empty(); }
  std::int64_t size() const { return static_cast<std::int64_t>(value_.size()); }

  // In-place update hook for optimizers; valid only between passes.
  std::vector<double>& value_mut();

  // Accumulates d(root)/d(input) into the input buffers, given d(root)/d(this).
  virtual void backprop(const std::vector<double>& out_grad, GradBuffers& grads) const;
  virtual const char* op_name() const { return "leaf"; }

 protected:
  Shape shape_;
  std::vector<double> value_;
  bool requires_grad_;
  std::vector<NodePtr> inputs_;
};

// Value-semantics handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape(); }
  std::int64_t size() const { return node_->size(); }
  bool requires_grad() const { return node_->requires_grad(); }
  const std::vector<double>& data() const { return node_->value(); }
  std::vector<double>& data_mut() { return node_->value_mut(); }

  // Scalar access; throws unless the tensor holds exactly one element.
  double item() const;
  double at(std::int64_t i) const { return node_->value().at(static_cast<std::size_t>(i)); }

  const NodePtr& node() const { return node_; }
  Node* raw() const { return node_.get(); }

 private:
  NodePtr node_;
};

// L2 norm, max-abs and clipping helpers over raw buffers; used by attacks
// and optimizers which work outside the graph.
double l2_norm(std::span<const double> v);
double max_abs(std::span<const double> v);

}  // namespace vaeatk
