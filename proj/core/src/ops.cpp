#include "vaeatk/ops.hpp"

#include <cmath>
#include <utility>

namespace vaeatk {

namespace {

bool any_requires(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

// Binary elementwise node with per-element adjoint factors depending on the
// operand values.
struct AddNode final : Node {
  AddNode(const Tensor& a, const Tensor& b)
      : Node(a.shape(), {}, any_requires({&a, &b})) {
    inputs_ = {a.node(), b.node()};
    const auto& av = a.data();
    const auto& bv = b.data();
    value_.resize(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) value_[i] = av[i] + bv[i];
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    for (int k = 0; k < 2; ++k) {
      if (!inputs_[k]->requires_grad()) continue;
      auto& buf = grads.accum(inputs_[k].get());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    }
  }
  const char* op_name() const override { return "add"; }
};

struct SubNode final : Node {
  SubNode(const Tensor& a, const Tensor& b)
      : Node(a.shape(), {}, any_requires({&a, &b})) {
    inputs_ = {a.node(), b.node()};
    const auto& av = a.data();
    const auto& bv = b.data();
    value_.resize(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) value_[i] = av[i] - bv[i];
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (inputs_[0]->requires_grad()) {
      auto& buf = grads.accum(inputs_[0].get());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
    }
    if (inputs_[1]->requires_grad()) {
      auto& buf = grads.accum(inputs_[1].get());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
    }
  }
  const char* op_name() const override { return "sub"; }
};

struct MulNode final : Node {
  MulNode(const Tensor& a, const Tensor& b)
      : Node(a.shape(), {}, any_requires({&a, &b})) {
    inputs_ = {a.node(), b.node()};
    const auto& av = a.data();
    const auto& bv = b.data();
    value_.resize(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) value_[i] = av[i] * bv[i];
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    const auto& av = inputs_[0]->value();
    const auto& bv = inputs_[1]->value();
    if (inputs_[0]->requires_grad()) {
      auto& buf = grads.accum(inputs_[0].get());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * bv[i];
    }
    if (inputs_[1]->requires_grad()) {
      auto& buf = grads.accum(inputs_[1].get());
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * av[i];
    }
  }
  const char* op_name() const override { return "mul"; }
};

// Unary elementwise ops share the pattern: value_[i] = f(x_i), and the
// adjoint multiplies by a locally stored or recomputed derivative.
struct ScalarAffineNode final : Node {
  // out = a * x + b  (covers add_scalar, mul_scalar, neg)
  ScalarAffineNode(const Tensor& x, double a, double b)
      : Node(x.shape(), {}, x.requires_grad()), a_(a) {
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) value_[i] = a * xv[i] + b;
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += a_ * g[i];
  }
  const char* op_name() const override { return "scalar_affine"; }
  double a_;
};

struct ExpNode final : Node {
  explicit ExpNode(const Tensor& x) : Node(x.shape(), {}, x.requires_grad()) {
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) value_[i] = std::exp(xv[i]);
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * value_[i];
  }
  const char* op_name() const override { return "exp"; }
};

struct LogNode final : Node {
  explicit LogNode(const Tensor& x) : Node(x.shape(), {}, x.requires_grad()) {
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) value_[i] = std::log(xv[i]);
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    const auto& xv = inputs_[0]->value();
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] / xv[i];
  }
  const char* op_name() const override { return "log"; }
};

struct ReluNode final : Node {
  explicit ReluNode(const Tensor& x) : Node(x.shape(), {}, x.requires_grad()) {
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) value_[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    const auto& xv = inputs_[0]->value();
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) buf[i] += g[i];
    }
  }
  const char* op_name() const override { return "relu"; }
};

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct SigmoidNode final : Node {
  explicit SigmoidNode(const Tensor& x) : Node(x.shape(), {}, x.requires_grad()) {
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) value_[i] = sigmoid_scalar(xv[i]);
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) {
      buf[i] += g[i] * value_[i] * (1.0 - value_[i]);
    }
  }
  const char* op_name() const override { return "sigmoid"; }
};

struct SoftplusNode final : Node {
  explicit SoftplusNode(const Tensor& x) : Node(x.shape(), {}, x.requires_grad()) {
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      double v = xv[i];
      value_[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    const auto& xv = inputs_[0]->value();
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * sigmoid_scalar(xv[i]);
  }
  const char* op_name() const override { return "softplus"; }
};

struct ClampNode final : Node {
  ClampNode(const Tensor& x, double lo, double hi)
      : Node(x.shape(), {}, x.requires_grad()), lo_(lo), hi_(hi) {
    if (!(lo <= hi)) throw ValueError("clamp: lo must not exceed hi");
    inputs_ = {x.node()};
    const auto& xv = x.data();
    value_.resize(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      value_[i] = xv[i] < lo ? lo : (xv[i] > hi ? hi : xv[i]);
    }
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    const auto& xv = inputs_[0]->value();
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] >= lo_ && xv[i] <= hi_) buf[i] += g[i];
    }
  }
  const char* op_name() const override { return "clamp"; }
  double lo_, hi_;
};

struct SumNode final : Node {
  SumNode(const Tensor& x, bool take_mean)
      : Node(Shape{}, {}, x.requires_grad()),
        scale_(take_mean ? 1.0 / static_cast<double>(x.size()) : 1.0),
        is_mean_(take_mean) {
    if (take_mean && x.size() == 0) throw ShapeError("mean: empty tensor");
    inputs_ = {x.node()};
    const auto& xv = x.data();
    double s = 0.0;
    for (double v : xv) s += v;
    value_ = {s * scale_};
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    auto& buf = grads.accum(inputs_[0].get());
    double gv = g[0] * scale_;
    for (double& b : buf) b += gv;
  }
  const char* op_name() const override { return is_mean_ ? "mean" : "sum"; }
  double scale_;
  bool is_mean_;
};

struct ReshapeNode final : Node {
  ReshapeNode(const Tensor& x, Shape shape)
      : Node(std::move(shape), x.data(), x.requires_grad()) {
    inputs_ = {x.node()};
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    auto& buf = grads.accum(inputs_[0].get());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
  }
  const char* op_name() const override { return "reshape"; }
};

struct ConcatNode final : Node {
  ConcatNode(const Tensor& a, const Tensor& b, int axis, Shape out_shape)
      : Node(std::move(out_shape), {}, any_requires({&a, &b})), axis_(axis) {
    inputs_ = {a.node(), b.node()};
    const Shape& sa = a.shape();
    outer_ = 1;
    for (int i = 0; i < axis; ++i) outer_ *= sa[static_cast<std::size_t>(i)];
    inner_ = 1;
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < sa.size(); ++i) inner_ *= sa[i];
    block_a_ = sa[static_cast<std::size_t>(axis)] * inner_;
    block_b_ = b.shape()[static_cast<std::size_t>(axis)] * inner_;

    value_.resize(static_cast<std::size_t>(numel(shape_)));
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::int64_t o = 0; o < outer_; ++o) {
      double* out = value_.data() + o * (block_a_ + block_b_);
      const double* pa = av.data() + o * block_a_;
      const double* pb = bv.data() + o * block_b_;
      for (std::int64_t i = 0; i < block_a_; ++i) out[i] = pa[i];
      for (std::int64_t i = 0; i < block_b_; ++i) out[block_a_ + i] = pb[i];
    }
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (inputs_[0]->requires_grad()) {
      auto& buf = grads.accum(inputs_[0].get());
      for (std::int64_t o = 0; o < outer_; ++o) {
        const double* go = g.data() + o * (block_a_ + block_b_);
        double* pa = buf.data() + o * block_a_;
        for (std::int64_t i = 0; i < block_a_; ++i) pa[i] += go[i];
      }
    }
    if (inputs_[1]->requires_grad()) {
      auto& buf = grads.accum(inputs_[1].get());
      for (std::int64_t o = 0; o < outer_; ++o) {
        const double* go = g.data() + o * (block_a_ + block_b_) + block_a_;
        double* pb = buf.data() + o * block_b_;
        for (std::int64_t i = 0; i < block_b_; ++i) pb[i] += go[i];
      }
    }
  }
  const char* op_name() const override { return "concat"; }
  int axis_;
  std::int64_t outer_ = 1, inner_ = 1, block_a_ = 0, block_b_ = 0;
};

struct SelectNode final : Node {
  SelectNode(const Tensor& x, std::int64_t index)
      : Node(Shape{}, {x.data().at(static_cast<std::size_t>(index))}, x.requires_grad()),
        index_(index) {
    inputs_ = {x.node()};
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    if (!inputs_[0]->requires_grad()) return;
    grads.accum(inputs_[0].get())[static_cast<std::size_t>(index_)] += g[0];
  }
  const char* op_name() const override { return "select"; }
  std::int64_t index_;
};

struct AffineNode final : Node {
  AffineNode(const Tensor& x, const Tensor& w, const Tensor& b, Shape out_shape,
             std::int64_t rows, std::int64_t fin, std::int64_t fout)
      : Node(std::move(out_shape), {}, any_requires({&x, &w, &b})),
        rows_(rows),
        fin_(fin),
        fout_(fout) {
    inputs_ = {x.node(), w.node(), b.node()};
    const auto& xv = x.data();
    const auto& wv = w.data();
    const auto& bv = b.data();
    value_.resize(static_cast<std::size_t>(rows * fout));
    for (std::int64_t n = 0; n < rows_; ++n) {
      const double* xr = xv.data() + n * fin_;
      double* outr = value_.data() + n * fout_;
      for (std::int64_t o = 0; o < fout_; ++o) {
        const double* wr = wv.data() + o * fin_;
        double acc = bv[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < fin_; ++i) acc += wr[i] * xr[i];
        outr[o] = acc;
      }
    }
  }
  void backprop(const std::vector<double>& g, GradBuffers& grads) const override {
    const auto& xv = inputs_[0]->value();
    const auto& wv = inputs_[1]->value();
    if (inputs_[0]->requires_grad()) {
      auto& dx = grads.accum(inputs_[0].get());
      for (std::int64_t n = 0; n < rows_; ++n) {
        const double* gr = g.data() + n * fout_;
        double* dxr = dx.data() + n * fin_;
        for (std::int64_t o = 0; o < fout_; ++o) {
          const double* wr = wv.data() + o * fin_;
          double gv = gr[o];
          for (std::int64_t i = 0; i < fin_; ++i) dxr[i] += gv * wr[i];
        }
      }
    }
    if (inputs_[1]->requires_grad()) {
      auto& dw = grads.accum(inputs_[1].get());
      for (std::int64_t n = 0; n < rows_; ++n) {
        const double* gr = g.data() + n * fout_;
        const double* xr = xv.data() + n * fin_;
        for (std::int64_t o = 0; o < fout_; ++o) {
          double* dwr = dw.data() + o * fin_;
          double gv = gr[o];
          for (std::int64_t i = 0; i < fin_; ++i) dwr[i] += gv * xr[i];
        }
      }
    }
    if (inputs_[2]->requires_grad()) {
      auto& db = grads.accum(inputs_[2].get());
      for (std::int64_t n = 0; n < rows_; ++n) {
        const double* gr = g.data() + n * fout_;
        for (std::int64_t o = 0; o < fout_; ++o) db[static_cast<std::size_t>(o)] += gr[o];
      }
    }
  }
  const char* op_name() const override { return "affine"; }
  std::int64_t rows_, fin_, fout_;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return Tensor(std::make_shared<AddNode>(a, b));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  return Tensor(std::make_shared<SubNode>(a, b));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  return Tensor(std::make_shared<MulNode>(a, b));
}

Tensor add_scalar(const Tensor& a, double c) {
  return Tensor(std::make_shared<ScalarAffineNode>(a, 1.0, c));
}

Tensor mul_scalar(const Tensor& a, double c) {
  return Tensor(std::make_shared<ScalarAffineNode>(a, c, 0.0));
}

Tensor neg(const Tensor& a) { return Tensor(std::make_shared<ScalarAffineNode>(a, -1.0, 0.0)); }

Tensor exp(const Tensor& a) { return Tensor(std::make_shared<ExpNode>(a)); }
Tensor log(const Tensor& a) { return Tensor(std::make_shared<LogNode>(a)); }
Tensor relu(const Tensor& a) { return Tensor(std::make_shared<ReluNode>(a)); }
Tensor sigmoid(const Tensor& a) { return Tensor(std::make_shared<SigmoidNode>(a)); }
Tensor softplus(const Tensor& a) { return Tensor(std::make_shared<SoftplusNode>(a)); }

Tensor clamp(const Tensor& a, double lo, double hi) {
  return Tensor(std::make_shared<ClampNode>(a, lo, hi));
}

Tensor sum(const Tensor& a) { return Tensor(std::make_shared<SumNode>(a, false)); }
Tensor mean(const Tensor& a) { return Tensor(std::make_shared<SumNode>(a, true)); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return Tensor(std::make_shared<ReshapeNode>(a, std::move(shape)));
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || axis < 0 || static_cast<std::size_t>(axis) >= sa.size()) {
    throw ShapeError("concat: incompatible ranks " + shape_str(sa) + " vs " + shape_str(sb) +
                     " on axis " + std::to_string(axis));
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (i != static_cast<std::size_t>(axis) && sa[i] != sb[i]) {
      throw ShapeError("concat: shapes differ off-axis, " + shape_str(sa) + " vs " +
                       shape_str(sb));
    }
  }
  Shape out = sa;
  out[static_cast<std::size_t>(axis)] += sb[static_cast<std::size_t>(axis)];
  return Tensor(std::make_shared<ConcatNode>(a, b, axis, std::move(out)));
}

Tensor select(const Tensor& a, std::int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a.size()) {
    throw ShapeError("select: index " + std::to_string(flat_index) + " out of range for " +
                     shape_str(a.shape()));
  }
  return Tensor(std::make_shared<SelectNode>(a, flat_index));
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  const Shape& sb = b.shape();
  if (sw.size() != 2 || sb.size() != 1 || sw[0] != sb[0]) {
    throw ShapeError("affine: weight " + shape_str(sw) + " and bias " + shape_str(sb) +
                     " are inconsistent");
  }
  std::int64_t fout = sw[0];
  std::int64_t fin = sw[1];
  std::int64_t rows = 1;
  Shape out_shape;
  if (sx.size() == 1) {
    if (sx[0] != fin) {
      throw ShapeError("affine: input " + shape_str(sx) + " does not match weight " +
                       shape_str(sw));
    }
    out_shape = {fout};
  } else if (sx.size() == 2) {
    if (sx[1] != fin) {
      throw ShapeError("affine: input " + shape_str(sx) + " does not match weight " +
                       shape_str(sw));
    }
    rows = sx[0];
    out_shape = {rows, fout};
  } else {
    throw ShapeError("affine: input must be rank 1 or 2, got " + shape_str(sx));
  }
  return Tensor(std::make_shared<AffineNode>(x, w, b, std::move(out_shape), rows, fin, fout));
}

}  // namespace vaeatk
