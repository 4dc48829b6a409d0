#include "vaeatk/tensor.hpp"

#include <cmath>

namespace vaeatk {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<double>& GradBuffers::accum(const Node* n) {
  auto it = bufs_.find(n);
  if (it == bufs_.end()) {
    it = bufs_.emplace(n, std::vector<double>(static_cast<std::size_t>(n->size()), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* GradBuffers::find(const Node* n) const {
  auto it = bufs_.find(n);
  return it == bufs_.end() ? nullptr : &it->second;
}

void GradBuffers::release(const Node* n) { bufs_.erase(n); }

Node::Node(Shape shape, std::vector<double> value, bool requires_grad)
    : shape_(std::move(shape)), value_(std::move(value)), requires_grad_(requires_grad) {
  // Op nodes pass an empty payload and fill value_ in their own
  // constructor; only an already-populated payload is checked here.
  if (!value_.empty() && numel(shape_) != static_cast<std::int64_t>(value_.size())) {
    throw ShapeError("tensor data length " + std::to_string(value_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

std::vector<double>& Node::value_mut() {
  if (!is_leaf()) {
    throw ValueError("only leaf tensors may be mutated in place");
  }
  return value_;
}

void Node::backprop(const std::vector<double>&, GradBuffers&) const {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)), 0.0);
  return Tensor(std::make_shared<Node>(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> data(static_cast<std::size_t>(numel(shape)), v);
  return Tensor(std::make_shared<Node>(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(std::make_shared<Node>(Shape{}, std::vector<double>{v}, requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  return Tensor(std::make_shared<Node>(std::move(shape), std::move(data), requires_grad));
}

double Tensor::item() const {
  if (node_->size() != 1) {
    throw ShapeError("item() requires a scalar tensor, got shape " + shape_str(shape()));
  }
  return node_->value()[0];
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace vaeatk
