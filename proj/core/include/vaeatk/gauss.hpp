#pragma once

#include "vaeatk/ops.hpp"
#include "vaeatk/tensor.hpp"

namespace vaeatk {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal-covariance Gaussian parameterized by mean and log-variance.
// log_var is clamped to [lo, hi] at construction so downstream divergences
// stay finite even when an optimizer pushes the variance to degenerate
// values. Both tensors may be graph nodes; every derived quantity
// (kl, skl, sample, log_prob) is differentiable through them.
//
// A rank-2 pair [N, M] represents N independent M-dimensional Gaussians;
// divergences and log-densities then return the sum over the N rows.
class DiagGaussian {
 public:
  DiagGaussian(Tensor mean, Tensor log_var, double lo = kLogVarMin, double hi = kLogVarMax);

  // N(0, I) of the given shape, without gradients.
  static DiagGaussian standard(Shape shape);

  const Tensor& mean() const { return mean_; }
  const Tensor& log_var() const { return log_var_; }
  const Shape& shape() const { return mean_.shape(); }
  std::int64_t size() const { return mean_.size(); }

 private:
  Tensor mean_;
  Tensor log_var_;
};

// Closed-form KL[p || q], computed in log-variance form:
//   1/2 sum( exp(lp - lq) + (mp - mq)^2 exp(-lq) - 1 + lq - lp ).
Tensor kl_diag(const DiagGaussian& p, const DiagGaussian& q);

// Symmetric KL: 1/2 KL[p || q] + 1/2 KL[q || p].
Tensor skl(const DiagGaussian& p, const DiagGaussian& q);

// Reparameterized draw z = mean + exp(log_var / 2) * noise. Deterministic
// given the noise tensor; gradients flow to mean and log_var.
Tensor sample(const DiagGaussian& p, const Tensor& noise);

// Exact log-density at z (summed over rows for batched Gaussians).
Tensor log_prob(const DiagGaussian& p, const Tensor& z);

// Differential entropy 1/2 sum(ln(2 pi e) + log_var), as a plain value.
double entropy(const DiagGaussian& p);

}  // namespace vaeatk
