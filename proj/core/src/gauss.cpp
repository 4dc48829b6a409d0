#include "vaeatk/gauss.hpp"

#include <cmath>

namespace vaeatk {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2*pi)

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("DiagGaussian: non-finite ") + what);
    }
  }
}

void check_same_dim(const DiagGaussian& p, const DiagGaussian& q, const char* op) {
  if (p.shape() != q.shape()) {
    throw ShapeError(std::string(op) + ": dimension mismatch, " + shape_str(p.shape()) + " vs " +
                     shape_str(q.shape()));
  }
}

}  // namespace

DiagGaussian::DiagGaussian(Tensor mean, Tensor log_var, double lo, double hi)
    : mean_(std::move(mean)) {
  if (mean_.shape() != log_var.shape()) {
    throw ShapeError("DiagGaussian: mean " + shape_str(mean_.shape()) + " and log_var " +
                     shape_str(log_var.shape()) + " differ");
  }
  if (mean_.size() < 1) {
    throw ShapeError("DiagGaussian: dimension must be >= 1");
  }
  check_finite(mean_, "mean");
  check_finite(log_var, "log_var");
  log_var_ = clamp(log_var, lo, hi);
}

DiagGaussian DiagGaussian::standard(Shape shape) {
  Tensor zero_mean = Tensor::zeros(shape);
  Tensor zero_log_var = Tensor::zeros(shape);
  return DiagGaussian(std::move(zero_mean), std::move(zero_log_var));
}

Tensor kl_diag(const DiagGaussian& p, const DiagGaussian& q) {
  check_same_dim(p, q, "kl_diag");
  Tensor lv_diff = sub(p.log_var(), q.log_var());
  Tensor var_ratio = exp(lv_diff);
  Tensor dm = sub(p.mean(), q.mean());
  Tensor mahal = mul(mul(dm, dm), exp(neg(q.log_var())));
  Tensor inner = add(add(var_ratio, mahal), add_scalar(neg(lv_diff), -1.0));
  return mul_scalar(sum(inner), 0.5);
}

Tensor skl(const DiagGaussian& p, const DiagGaussian& q) {
  check_same_dim(p, q, "skl");
  return mul_scalar(add(kl_diag(p, q), kl_diag(q, p)), 0.5);
}

Tensor sample(const DiagGaussian& p, const Tensor& noise) {
  if (noise.shape() != p.shape()) {
    throw ShapeError("sample: noise shape " + shape_str(noise.shape()) +
                     " does not match Gaussian " + shape_str(p.shape()));
  }
  Tensor sigma = exp(mul_scalar(p.log_var(), 0.5));
  return add(p.mean(), mul(sigma, noise));
}

Tensor log_prob(const DiagGaussian& p, const Tensor& z) {
  if (z.shape() != p.shape()) {
    throw ShapeError("log_prob: point shape " + shape_str(z.shape()) +
                     " does not match Gaussian " + shape_str(p.shape()));
  }
  Tensor d = sub(z, p.mean());
  Tensor mahal = mul(mul(d, d), exp(neg(p.log_var())));
  Tensor inner = add(add_scalar(p.log_var(), kLog2Pi), mahal);
  return mul_scalar(sum(inner), -0.5);
}

double entropy(const DiagGaussian& p) {
  double acc = 0.0;
  for (double lv : p.log_var().data()) {
    acc += kLog2Pi + 1.0 + lv;
  }
  return 0.5 * acc;
}

}  // namespace vaeatk
