#pragma once

#include "vaeatk/tensor.hpp"

namespace vaeatk {

// Elementwise, same-shape operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Elementwise with a compile-time constant.
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

// Elementwise unary.
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Numerically stable log(1 + exp(a)); the building block of the Bernoulli
// log-likelihood on decoder logits.
Tensor softplus(const Tensor& a);
// Pass-through gradient inside [lo, hi], zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

// Full reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Structure.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const Tensor& a, const Tensor& b, int axis);
// Scalar view of one element (row extraction for Jacobians).
Tensor select(const Tensor& a, std::int64_t flat_index);

// x: [F] or [N,F]; w: [Fout,Fin]; b: [Fout]. Returns x w^T + b per row.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [C,H,W] or [N,C,H,W]; w: [OC,C,KH,KW]; b: [OC].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// x: [C,H,W] or [N,C,H,W]; w: [C,OC,KH,KW]; b: [OC].
// Output spatial size (H-1)*stride - 2*pad + KH.
Tensor tconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

}  // namespace vaeatk
