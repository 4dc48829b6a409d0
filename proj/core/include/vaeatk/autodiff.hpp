#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "vaeatk/tensor.hpp"

namespace vaeatk {

// Gradients of a scalar root with respect to the requires_grad leaves that
// feed it. Leaves outside the graph read back as zero.
class GradientMap {
 public:
  GradientMap() = default;
  explicit GradientMap(std::unordered_map<const Node*, std::vector<double>> grads)
      : grads_(std::move(grads)) {}

  bool contains(const Tensor& t) const { return grads_.count(t.raw()) != 0; }
  const std::vector<double>& at(const Tensor& t) const;
  // Zero vector of the tensor's size when the leaf did not reach the root.
  std::vector<double> at_or_zero(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node*, std::vector<double>> grads_;
};

// Topological schedule of the nodes that influence a root through
// requires_grad paths. The reverse sweep visits each node exactly once.
class ComputeGraph {
 public:
  explicit ComputeGraph(const Tensor& root);

  std::size_t node_count() const { return topo_.size(); }
  const std::vector<const Node*>& topo_order() const { return topo_; }

  // Seeds d(root)/d(root) = 1 and propagates adjoints in reverse
  // topological order. Root must be scalar.
  GradientMap backward() const;

 private:
  Tensor root_;
  std::vector<const Node*> topo_;  // inputs before consumers
};

GradientMap backward(const Tensor& root);

struct FdReport {
  double max_rel_error = 0.0;
  std::vector<std::int64_t> nan_coords;  // coordinates whose comparison was NaN
};

// Central finite-difference check of d f / d x against the analytic
// backward pass. Relative error per coordinate is
// |analytic - central| / (|analytic| + |central| + 1e-12).
FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step);

}  // namespace vaeatk
