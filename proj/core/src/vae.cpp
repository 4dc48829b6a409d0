#include "vaeatk/vae.hpp"

#include <cmath>

#include "vaeatk/autodiff.hpp"

namespace vaeatk {

namespace {

constexpr double kDecodeEps = 1e-12;

std::int64_t batch_rows(const Shape& s) { return (s.size() == 4 || s.size() == 2) ? s[0] : 1; }

Tensor flatten_rows(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.size() <= 2) return t;
  if (s.size() == 4) {
    return reshape(t, {s[0], s[1] * s[2] * s[3]});
  }
  return reshape(t, {numel(s)});
}

}  // namespace

Tensor bernoulli_logprob(const Tensor& x, const Tensor& logits) {
  if (x.shape() != logits.shape()) {
    throw ShapeError("bernoulli_logprob: target " + shape_str(x.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  Tensor per_element = sub(mul(x, logits), softplus(logits));
  std::int64_t rows = batch_rows(x.shape());
  Tensor total = sum(per_element);
  return rows > 1 ? mul_scalar(total, 1.0 / static_cast<double>(rows)) : total;
}

VaeSpec VaeSpec::desk_default(std::int64_t latent_dim, double beta) {
  VaeSpec s;
  s.input_shape = {1, 28, 28};
  s.encoder = {LayerSpec::conv(1, 8, 3, 2, 1),  LayerSpec::relu(),
               LayerSpec::conv(8, 16, 3, 2, 1), LayerSpec::relu(), LayerSpec::flatten()};
  s.mean_head = LayerSpec::affine(16 * 7 * 7, latent_dim);
  s.logvar_head = LayerSpec::affine(16 * 7 * 7, latent_dim);
  s.decoder = {LayerSpec::affine(latent_dim, 16 * 7 * 7),
               LayerSpec::relu(),
               LayerSpec::reshape(16, 7, 7),
               LayerSpec::tconv(16, 8, 4, 2, 1),
               LayerSpec::relu(),
               LayerSpec::tconv(8, 1, 4, 2, 1)};
  s.latent_dim = latent_dim;
  s.beta = beta;
  return s;
}

VaeSpec VaeSpec::desk_affine(Shape input_shape, std::int64_t hidden, std::int64_t latent_dim,
                             double beta) {
  VaeSpec s;
  s.input_shape = std::move(input_shape);
  std::int64_t d = numel(s.input_shape);
  s.encoder = {LayerSpec::flatten(), LayerSpec::affine(d, hidden), LayerSpec::relu()};
  s.mean_head = LayerSpec::affine(hidden, latent_dim);
  s.logvar_head = LayerSpec::affine(hidden, latent_dim);
  s.decoder = {LayerSpec::affine(latent_dim, hidden), LayerSpec::relu(),
               LayerSpec::affine(hidden, d),
               LayerSpec::reshape(s.input_shape[0], s.input_shape[1], s.input_shape[2])};
  s.latent_dim = latent_dim;
  s.beta = beta;
  return s;
}

void VaeSpec::validate() const {
  if (input_shape.size() != 3) {
    throw ShapeError("VaeSpec: input_shape must be [C,H,W], got " + shape_str(input_shape));
  }
  if (latent_dim < 1) throw ValueError("VaeSpec: latent_dim must be >= 1");
  if (!(beta > 0.0) && beta != 0.0) throw ValueError("VaeSpec: beta must be a finite weight");
  Shape feat = chain_out_shape(input_shape, encoder);
  Shape mu_shape = layer_out_shape(mean_head, feat);
  Shape lv_shape = layer_out_shape(logvar_head, feat);
  if (numel(mu_shape) != latent_dim || numel(lv_shape) != latent_dim) {
    throw ShapeError("VaeSpec: heads produce " + shape_str(mu_shape) + " / " +
                     shape_str(lv_shape) + ", expected " + std::to_string(latent_dim) +
                     " latent units");
  }
  Shape out = chain_out_shape({latent_dim}, decoder);
  if (out != input_shape) {
    throw ShapeError("VaeSpec: decoder emits " + shape_str(out) + ", expected " +
                     shape_str(input_shape));
  }
}

VaeModel VaeModel::init(const VaeSpec& spec, std::uint64_t seed) {
  spec.validate();
  VaeModel m(spec);
  Rng rng(derive_seed(seed, "model-init"));
  init_chain_params("enc", spec.encoder, m.params_, rng);
  init_chain_params("enc.mu", std::span<const LayerSpec>(&spec.mean_head, 1), m.params_, rng);
  init_chain_params("enc.lv", std::span<const LayerSpec>(&spec.logvar_head, 1), m.params_, rng);
  init_chain_params("dec", spec.decoder, m.params_, rng);
  return m;
}

DiagGaussian VaeModel::encode(const Tensor& x) const {
  const Shape& s = x.shape();
  bool batched = s.size() == 4;
  Shape expect = batched ? Shape{s[0], spec_.input_shape[0], spec_.input_shape[1],
                                 spec_.input_shape[2]}
                         : spec_.input_shape;
  if (s != expect) {
    throw ShapeError("encode: input " + shape_str(s) + " does not match model input " +
                     shape_str(spec_.input_shape));
  }
  Tensor feat = run_chain(x, spec_.encoder, params_, "enc");
  Tensor mu = run_chain(feat, std::span<const LayerSpec>(&spec_.mean_head, 1), params_, "enc.mu");
  Tensor lv =
      run_chain(feat, std::span<const LayerSpec>(&spec_.logvar_head, 1), params_, "enc.lv");
  return DiagGaussian(flatten_rows(mu), flatten_rows(lv));
}

Tensor VaeModel::decode_logits(const Tensor& z) const {
  const Shape& s = z.shape();
  if (!(s.size() == 1 && s[0] == spec_.latent_dim) &&
      !(s.size() == 2 && s[1] == spec_.latent_dim)) {
    throw ShapeError("decode: latent " + shape_str(s) + " does not match latent_dim " +
                     std::to_string(spec_.latent_dim));
  }
  return run_chain(z, spec_.decoder, params_, "dec");
}

Tensor VaeModel::decode(const Tensor& z) const {
  return clamp(sigmoid(decode_logits(z)), kDecodeEps, 1.0 - kDecodeEps);
}

ElboParts VaeModel::elbo(const Tensor& x, const Tensor& noise) const {
  DiagGaussian q = encode(x);
  Tensor z = sample(q, noise);
  Tensor logits = decode_logits(z);
  Tensor recon = bernoulli_logprob(x, logits);
  Tensor kl = kl_diag(q, DiagGaussian::standard(q.shape()));
  std::int64_t rows = batch_rows(x.shape());
  if (rows > 1) kl = mul_scalar(kl, 1.0 / static_cast<double>(rows));
  Tensor total = sub(recon, mul_scalar(kl, spec_.beta));
  return {total, recon, kl};
}

ElboParts VaeModel::elbo_seeded(const Tensor& x, std::uint64_t seed) const {
  std::int64_t rows = batch_rows(x.shape());
  Shape noise_shape = rows > 1 || x.shape().size() == 4 ? Shape{rows, spec_.latent_dim}
                                                        : Shape{spec_.latent_dim};
  std::vector<double> noise(static_cast<std::size_t>(numel(noise_shape)));
  Rng rng(derive_seed(seed, "elbo-noise", 0));
  rng.fill_normal(noise);
  return elbo(x, Tensor::from_data(std::move(noise_shape), std::move(noise)));
}

Tensor VaeModel::reconstruct_mean(const Tensor& x) const { return decode(encode(x).mean()); }

VaeModel VaeModel::frozen_copy() const {
  VaeModel out(spec_);
  for (const auto& [name, t] : params_.items()) {
    out.params_.add(name, Tensor::from_data(t.shape(), t.data(), /*requires_grad=*/false));
  }
  return out;
}

double VaeModel::nll_importance(const Tensor& x, int sample_count, std::uint64_t seed) const {
  if (sample_count < 1) {
    throw ValueError("nll_importance: sample count must be >= 1");
  }
  if (x.shape().size() != 3) {
    throw ShapeError("nll_importance: expects a single [C,H,W] input");
  }
  DiagGaussian q = encode(x);
  DiagGaussian prior = DiagGaussian::standard(q.shape());
  std::vector<double> log_w(static_cast<std::size_t>(sample_count));
  std::vector<double> noise(static_cast<std::size_t>(q.size()));
  for (int k = 0; k < sample_count; ++k) {
    Rng rng(derive_seed(seed, "elbo-noise", static_cast<std::uint64_t>(k)));
    rng.fill_normal(noise);
    Tensor noise_t = Tensor::from_data(q.shape(), noise);
    Tensor z = sample(q, noise_t);
    double lp_x = bernoulli_logprob(x, decode_logits(z)).item();
    double lp_z = log_prob(prior, z).item();
    double lq_z = log_prob(q, z).item();
    log_w[static_cast<std::size_t>(k)] = lp_x + lp_z - lq_z;
  }
  double m = log_w[0];
  for (double v : log_w) m = std::max(m, v);
  double acc = 0.0;
  for (double v : log_w) acc += std::exp(v - m);
  double log_mean = m + std::log(acc) - std::log(static_cast<double>(sample_count));
  return -log_mean;
}

}  // namespace vaeatk
