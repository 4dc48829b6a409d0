#include "vaeatk/autodiff.hpp"

#include <cmath>
#include <unordered_set>

namespace vaeatk {

const std::vector<double>& GradientMap::at(const Tensor& t) const {
  auto it = grads_.find(t.raw());
  if (it == grads_.end()) {
    throw ValueError("no gradient recorded for this tensor (not a requires_grad leaf "
                     "reaching the root)");
  }
  return it->second;
}

std::vector<double> GradientMap::at_or_zero(const Tensor& t) const {
  auto it = grads_.find(t.raw());
  if (it != grads_.end()) return it->second;
  return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
}

ComputeGraph::ComputeGraph(const Tensor& root) : root_(root) {
  if (!root.defined()) throw ValueError("backward: undefined root tensor");
  if (!root.requires_grad()) return;  // constant subgraph, nothing to schedule

  // Iterative post-order DFS. Only requires_grad nodes can carry adjoints,
  // so constant subtrees are pruned here.
  std::unordered_set<const Node*> visited;
  struct Frame {
    const Node* node;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.raw(), 0});
  visited.insert(root.raw());
  while (!stack.empty()) {
    const Node* cur = stack.back().node;
    const auto& ins = cur->inputs();
    const Node* pending = nullptr;
    while (stack.back().next_input < ins.size()) {
      const Node* in = ins[stack.back().next_input++].get();
      if (in->requires_grad() && !visited.count(in)) {
        pending = in;
        break;
      }
    }
    if (pending != nullptr) {
      visited.insert(pending);
      stack.push_back({pending, 0});
    } else {
      topo_.push_back(cur);
      stack.pop_back();
    }
  }
}

GradientMap ComputeGraph::backward() const {
  if (root_.size() != 1) {
    throw ShapeError("backward: root must be scalar, got shape " + shape_str(root_.shape()));
  }
  std::unordered_map<const Node*, std::vector<double>> kept;
  if (topo_.empty()) return GradientMap(std::move(kept));

  GradBuffers bufs;
  bufs.accum(root_.raw())[0] = 1.0;
  for (auto it = topo_.rbegin(); it != topo_.rend(); ++it) {
    const Node* n = *it;
    const std::vector<double>* g = bufs.find(n);
    if (g == nullptr) continue;  // not actually reachable (defensive)
    if (n->is_leaf()) {
      kept.emplace(n, *g);
    } else {
      n->backprop(*g, bufs);
    }
    bufs.release(n);  // every consumer has already been processed
  }
  return GradientMap(std::move(kept));
}

GradientMap backward(const Tensor& root) { return ComputeGraph(root).backward(); }

FdReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step) {
  Tensor probe = Tensor::from_data(x.shape(), x.data(), /*requires_grad=*/true);
  Tensor y = f(probe);
  GradientMap grads = backward(y);
  std::vector<double> analytic = grads.at_or_zero(probe);

  FdReport report;
  std::vector<double> base = x.data();
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> bumped = base;
    bumped[i] = base[i] + step;
    double up = f(Tensor::from_data(x.shape(), bumped)).item();
    bumped[i] = base[i] - step;
    double down = f(Tensor::from_data(x.shape(), bumped)).item();
    double central = (up - down) / (2.0 * step);
    double rel = std::fabs(analytic[i] - central) /
                 (std::fabs(analytic[i]) + std::fabs(central) + 1e-12);
    if (std::isnan(rel)) {
      report.nan_coords.push_back(static_cast<std::int64_t>(i));
    } else {
      report.max_rel_error = std::max(report.max_rel_error, rel);
    }
  }
  return report;
}

}  // namespace vaeatk
