#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "vaeatk/gauss.hpp"
#include "vaeatk/layers.hpp"
#include "vaeatk/train.hpp"

namespace vaeatk {

// Top-down hierarchical VAE with L latent levels. z_L (the top) is drawn
// first; each lower level conditions on the level above through a shared
// top-down feature, and the posterior additionally sees a bottom-up
// feature of x. The generative side factorizes as
// p(x|z_1) p(z_L) prod_l p(z_l | z_{l+1}); with L=1 the model computes
// exactly what an affine VaeModel with the same parameters computes.
//
// All sub-networks are affine stacks; level index 0 is the bottom (z_1)
// and levels-1 the top (z_L). Lists returned by the model are ordered top
// first, matching the sampling order.
struct HierVaeSpec {
  Shape input_shape;                        // [C,H,W]
  std::vector<std::int64_t> latent_dims;    // bottom .. top
  std::vector<std::int64_t> feature_dims;   // bottom-up trunk widths, same length
  std::vector<std::int64_t> prior_hidden;   // top-down feature widths, length L-1
  std::int64_t decoder_hidden = 64;

  // L in {1,2,3}: latent dims {8}, {8,4} or {8,4,2} on 28x28 inputs.
  static HierVaeSpec desk_default(int levels);

  int levels() const { return static_cast<int>(latent_dims.size()); }
  void validate() const;
};

struct LevelSample {
  DiagGaussian posterior;
  Tensor z;
};

struct HierElboParts {
  Tensor total;
  Tensor recon;
  std::vector<Tensor> level_kls;  // top first; levels sampled from the prior are omitted
};

class HierarchicalVae {
 public:
  static HierarchicalVae init(const HierVaeSpec& spec, std::uint64_t seed);

  const HierVaeSpec& spec() const { return spec_; }
  int levels() const { return spec_.levels(); }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  Shape input_shape() const { return spec_.input_shape; }

  // Ancestral top-down posterior pass. noise holds one tensor per level,
  // top first; the seeded variant derives level j's noise from
  // (seed, "elbo-noise", j), which makes L=1 match VaeModel::elbo_seeded.
  std::vector<LevelSample> h_encode(const Tensor& x, std::span<const Tensor> noise) const;
  std::vector<LevelSample> h_encode(const Tensor& x, std::uint64_t seed) const;

  // Single-sample ELBO with per-level analytic KL terms, conditionals
  // evaluated at the ancestral samples.
  HierElboParts h_elbo(const Tensor& x, std::uint64_t seed) const;

  // ELBO^{>k}: the bottom k levels are sampled from the top-down prior and
  // their KL terms dropped. k = 0 equals h_elbo; k = L scores pure prior
  // ancestral reconstruction.
  HierElboParts elbo_above_k(const Tensor& x, int k, std::uint64_t seed) const;

  // Prior p(z_level | z_above) for level < levels-1 (bottom-first index).
  DiagGaussian prior_given(int level, const Tensor& z_above) const;

  Tensor decode_logits(const Tensor& z_bottom) const;
  Tensor decode(const Tensor& z_bottom) const;

  // Deterministic reconstruction: top-down pass propagating posterior
  // means (zero noise), decoded to Bernoulli means.
  Tensor reconstruct_mean(const Tensor& x) const;

  // Copy whose parameters do not require gradients.
  HierarchicalVae frozen_copy() const;

  // Per-level posterior pairs (q(.|x_a, cond), q(.|x_b, cond)) for the top
  // `top_k` levels, both conditioned on samples drawn from the x_a side
  // with noise derived from `seed`. This is the divergence convention used
  // by the hierarchical attack objective and by the latent-shift metric.
  std::vector<std::pair<DiagGaussian, DiagGaussian>> paired_posteriors(
      const Tensor& x_a, const Tensor& x_b, int top_k, std::uint64_t seed) const;

 private:
  explicit HierarchicalVae(HierVaeSpec spec) : spec_(std::move(spec)) {}

  struct LevelState {
    std::optional<DiagGaussian> posterior;  // absent when sampled from the prior
    DiagGaussian prior;
    Tensor z;
  };
  // prior_bottom_k: number of bottom levels sampled from the prior.
  std::vector<LevelState> top_down(const Tensor& x, std::uint64_t seed,
                                   int prior_bottom_k) const;
  HierElboParts elbo_impl(const Tensor& x, std::uint64_t seed, int prior_bottom_k) const;
  std::vector<Tensor> bottom_up(const Tensor& x) const;
  DiagGaussian head_gaussian(const std::string& mu, const std::string& lv,
                             const Tensor& in) const;

  HierVaeSpec spec_;
  ParamStore params_;
  std::vector<std::vector<LayerSpec>> bu_chains_;   // per level, bottom first
  std::vector<std::vector<LayerSpec>> td_chains_;   // levels 0..L-2
  std::vector<LayerSpec> post_mu_, post_lv_;        // per level
  std::vector<LayerSpec> prior_mu_, prior_lv_;      // levels 0..L-2
  std::vector<LayerSpec> dec_chain_;
};

TrainResult train_hier(HierarchicalVae& model, const Tensor& images, const TrainConfig& cfg);

class VaeModel;
TrainResult train_vae(VaeModel& model, const Tensor& images, const TrainConfig& cfg);

}  // namespace vaeatk
