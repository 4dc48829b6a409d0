#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaeatk/encoder.hpp"
#include "vaeatk/gauss.hpp"
#include "vaeatk/layers.hpp"

namespace vaeatk {

// Bernoulli log-likelihood of x in [0,1]^D under decoder logits, computed
// stably as sum(x * s - softplus(s)). For batched inputs the result is the
// per-sample sum averaged over the batch.
Tensor bernoulli_logprob(const Tensor& x, const Tensor& logits);

struct VaeSpec {
  Shape input_shape;                // [C,H,W]
  std::vector<LayerSpec> encoder;   // trunk ending in a feature vector
  LayerSpec mean_head;              // feature -> latent_dim
  LayerSpec logvar_head;
  std::vector<LayerSpec> decoder;   // latent -> logits with input_shape
  std::int64_t latent_dim = 0;
  double beta = 1.0;

  // Two stride-2 conv layers + affine heads on 28x28 inputs; trains on a
  // CPU in minutes. The full-scale conv stack remains expressible through
  // LayerSpec chains.
  static VaeSpec desk_default(std::int64_t latent_dim = 16, double beta = 1.0);
  // Fully affine variant (also the shape used by the hierarchical model).
  static VaeSpec desk_affine(Shape input_shape, std::int64_t hidden, std::int64_t latent_dim,
                             double beta = 1.0);

  void validate() const;
};

struct ElboParts {
  Tensor total;  // recon - beta * kl
  Tensor recon;  // E_q log p(x|z), single-sample
  Tensor kl;     // KL[q(z|x) || N(0,I)]
};

class VaeModel final : public Encoder {
 public:
  static VaeModel init(const VaeSpec& spec, std::uint64_t seed);

  const VaeSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::int64_t latent_dim() const override { return spec_.latent_dim; }
  Shape input_shape() const override { return spec_.input_shape; }
  double beta() const { return spec_.beta; }
  void set_beta(double beta) { spec_.beta = beta; }

  // Posterior q(z|x); x is [C,H,W] or [N,C,H,W] with pixels in [0,1].
  DiagGaussian encode(const Tensor& x) const override;

  // Bernoulli means in (0,1), shaped like the input.
  Tensor decode(const Tensor& z) const;
  Tensor decode_logits(const Tensor& z) const;

  // Single-sample reparameterized ELBO; differentiable w.r.t. parameters
  // and x. The seeded variant derives noise from (seed, "elbo-noise", 0).
  ElboParts elbo(const Tensor& x, const Tensor& noise) const;
  ElboParts elbo_seeded(const Tensor& x, std::uint64_t seed) const;

  // Importance-sampled negative log-likelihood with K posterior samples,
  // combined in log space. Sample k uses the noise stream
  // (seed, "elbo-noise", k), so K=1 pairs with elbo_seeded.
  double nll_importance(const Tensor& x, int sample_count, std::uint64_t seed) const;

  // Deterministic reconstruction through the posterior mean.
  Tensor reconstruct_mean(const Tensor& x) const;

  // Copy whose parameters do not require gradients; evaluation-only uses
  // (attacks, metrics) avoid the parameter backward sweep entirely.
  VaeModel frozen_copy() const;

 private:
  VaeModel(VaeSpec spec) : spec_(std::move(spec)) {}
  VaeSpec spec_;
  ParamStore params_;
};

}  // namespace vaeatk
