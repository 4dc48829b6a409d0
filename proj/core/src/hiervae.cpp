#include "vaeatk/hiervae.hpp"

#include <cmath>

#include "vaeatk/vae.hpp"

namespace vaeatk {

namespace {

std::int64_t batch_rows(const Shape& s) { return (s.size() == 4 || s.size() == 2) ? s[0] : 1; }

Tensor flatten_input(const Tensor& x, const Shape& input_shape) {
  const Shape& s = x.shape();
  if (s.size() == 3) {
    if (s != input_shape) {
      throw ShapeError("hier encode: input " + shape_str(s) + " does not match model input " +
                       shape_str(input_shape));
    }
    return reshape(x, {numel(input_shape)});
  }
  if (s.size() == 4 && Shape{s[1], s[2], s[3]} == input_shape) {
    return reshape(x, {s[0], numel(input_shape)});
  }
  throw ShapeError("hier encode: input " + shape_str(s) + " does not match model input " +
                   shape_str(input_shape));
}

int last_axis(const Shape& s) { return static_cast<int>(s.size()) - 1; }

Tensor noise_for(const Shape& shape, std::uint64_t seed, std::uint64_t index) {
  std::vector<double> buf(static_cast<std::size_t>(numel(shape)));
  Rng rng(derive_seed(seed, "elbo-noise", index));
  rng.fill_normal(buf);
  return Tensor::from_data(shape, std::move(buf));
}

}  // namespace

HierVaeSpec HierVaeSpec::desk_default(int levels) {
  if (levels < 1 || levels > 3) throw ValueError("desk_default: levels must be 1..3");
  HierVaeSpec s;
  s.input_shape = {1, 28, 28};
  std::vector<std::int64_t> dims = {8, 4, 2};
  s.latent_dims.assign(dims.begin(), dims.begin() + levels);
  s.feature_dims.assign(static_cast<std::size_t>(levels), 64);
  for (int l = 0; l + 1 < levels; ++l) s.prior_hidden.push_back(32);
  s.decoder_hidden = 128;
  return s;
}

void HierVaeSpec::validate() const {
  if (input_shape.size() != 3) {
    throw ShapeError("HierVaeSpec: input_shape must be [C,H,W]");
  }
  if (latent_dims.empty()) throw ValueError("HierVaeSpec: need at least one level");
  if (feature_dims.size() != latent_dims.size()) {
    throw ValueError("HierVaeSpec: feature_dims must match latent_dims");
  }
  if (prior_hidden.size() + 1 != latent_dims.size()) {
    throw ValueError("HierVaeSpec: prior_hidden must have levels-1 entries");
  }
  for (std::int64_t m : latent_dims) {
    if (m < 1) throw ValueError("HierVaeSpec: latent dims must be >= 1");
  }
  if (decoder_hidden < 1) throw ValueError("HierVaeSpec: decoder_hidden must be >= 1");
}

HierarchicalVae HierarchicalVae::init(const HierVaeSpec& spec, std::uint64_t seed) {
  spec.validate();
  HierarchicalVae m(spec);
  int levels = spec.levels();
  std::int64_t d = numel(spec.input_shape);

  for (int l = 0; l < levels; ++l) {
    std::int64_t in = l == 0 ? d : spec.feature_dims[static_cast<std::size_t>(l - 1)];
    m.bu_chains_.push_back(
        {LayerSpec::affine(in, spec.feature_dims[static_cast<std::size_t>(l)]),
         LayerSpec::relu()});
  }
  for (int l = 0; l + 1 < levels; ++l) {
    m.td_chains_.push_back(
        {LayerSpec::affine(spec.latent_dims[static_cast<std::size_t>(l + 1)],
                           spec.prior_hidden[static_cast<std::size_t>(l)]),
         LayerSpec::relu()});
  }
  for (int l = 0; l < levels; ++l) {
    std::int64_t in = spec.feature_dims[static_cast<std::size_t>(l)];
    if (l + 1 < levels) in += spec.prior_hidden[static_cast<std::size_t>(l)];
    m.post_mu_.push_back(LayerSpec::affine(in, spec.latent_dims[static_cast<std::size_t>(l)]));
    m.post_lv_.push_back(LayerSpec::affine(in, spec.latent_dims[static_cast<std::size_t>(l)]));
  }
  for (int l = 0; l + 1 < levels; ++l) {
    m.prior_mu_.push_back(LayerSpec::affine(spec.prior_hidden[static_cast<std::size_t>(l)],
                                            spec.latent_dims[static_cast<std::size_t>(l)]));
    m.prior_lv_.push_back(LayerSpec::affine(spec.prior_hidden[static_cast<std::size_t>(l)],
                                            spec.latent_dims[static_cast<std::size_t>(l)]));
  }
  m.dec_chain_ = {LayerSpec::affine(spec.latent_dims[0], spec.decoder_hidden), LayerSpec::relu(),
                  LayerSpec::affine(spec.decoder_hidden, d),
                  LayerSpec::reshape(spec.input_shape[0], spec.input_shape[1],
                                     spec.input_shape[2])};

  Rng rng(derive_seed(seed, "model-init"));
  for (int l = 0; l < levels; ++l) {
    init_chain_params("bu." + std::to_string(l), m.bu_chains_[static_cast<std::size_t>(l)],
                      m.params_, rng);
  }
  for (int l = 0; l + 1 < levels; ++l) {
    init_chain_params("td." + std::to_string(l), m.td_chains_[static_cast<std::size_t>(l)],
                      m.params_, rng);
  }
  for (int l = 0; l < levels; ++l) {
    std::string n = std::to_string(l);
    init_chain_params("post_mu." + n,
                      std::span<const LayerSpec>(&m.post_mu_[static_cast<std::size_t>(l)], 1),
                      m.params_, rng);
    init_chain_params("post_lv." + n,
                      std::span<const LayerSpec>(&m.post_lv_[static_cast<std::size_t>(l)], 1),
                      m.params_, rng);
  }
  for (int l = 0; l + 1 < levels; ++l) {
    std::string n = std::to_string(l);
    init_chain_params("prior_mu." + n,
                      std::span<const LayerSpec>(&m.prior_mu_[static_cast<std::size_t>(l)], 1),
                      m.params_, rng);
    init_chain_params("prior_lv." + n,
                      std::span<const LayerSpec>(&m.prior_lv_[static_cast<std::size_t>(l)], 1),
                      m.params_, rng);
  }
  init_chain_params("dec", m.dec_chain_, m.params_, rng);
  return m;
}

std::vector<Tensor> HierarchicalVae::bottom_up(const Tensor& x) const {
  Tensor cur = flatten_input(x, spec_.input_shape);
  std::vector<Tensor> feats;
  for (int l = 0; l < levels(); ++l) {
    cur = run_chain(cur, bu_chains_[static_cast<std::size_t>(l)], params_,
                    "bu." + std::to_string(l));
    feats.push_back(cur);
  }
  return feats;
}

DiagGaussian HierarchicalVae::head_gaussian(const std::string& mu, const std::string& lv,
                                            const Tensor& in) const {
  auto run_head = [&](const std::string& prefix) {
    return affine(in, params_.at(prefix + ".0.w"), params_.at(prefix + ".0.b"));
  };
  return DiagGaussian(run_head(mu), run_head(lv));
}

DiagGaussian HierarchicalVae::prior_given(int level, const Tensor& z_above) const {
  if (level < 0 || level + 1 >= levels()) {
    throw ValueError("prior_given: level must be in [0, levels-1)");
  }
  std::string n = std::to_string(level);
  Tensor g = run_chain(z_above, td_chains_[static_cast<std::size_t>(level)], params_, "td." + n);
  return head_gaussian("prior_mu." + n, "prior_lv." + n, g);
}

std::vector<HierarchicalVae::LevelState> HierarchicalVae::top_down(const Tensor& x,
                                                                   std::uint64_t seed,
                                                                   int prior_bottom_k) const {
  int L = levels();
  std::vector<Tensor> feats = bottom_up(x);
  std::int64_t rows = batch_rows(x.shape());
  bool batched = x.shape().size() == 4;

  std::vector<LevelState> out;
  out.reserve(static_cast<std::size_t>(L));
  Tensor z_above;
  for (int j = 0; j < L; ++j) {
    int l = L - 1 - j;  // bottom-first level index
    std::string n = std::to_string(l);
    bool use_prior = l < prior_bottom_k;

    Shape m_shape = batched ? Shape{rows, spec_.latent_dims[static_cast<std::size_t>(l)]}
                            : Shape{spec_.latent_dims[static_cast<std::size_t>(l)]};
    DiagGaussian prior = DiagGaussian::standard(m_shape);
    std::optional<Tensor> g;
    if (j > 0) {
      g = run_chain(z_above, td_chains_[static_cast<std::size_t>(l)], params_, "td." + n);
      prior = head_gaussian("prior_mu." + n, "prior_lv." + n, *g);
    }

    std::optional<DiagGaussian> post;
    if (!use_prior) {
      Tensor in = feats[static_cast<std::size_t>(l)];
      if (g.has_value()) in = concat(in, *g, last_axis(in.shape()));
      post = head_gaussian("post_mu." + n, "post_lv." + n, in);
    }

    const DiagGaussian& src = use_prior ? prior : *post;
    Tensor noise = noise_for(src.shape(), seed, static_cast<std::uint64_t>(j));
    Tensor z = sample(src, noise);
    out.push_back({std::move(post), std::move(prior), z});
    z_above = z;
  }
  return out;
}

std::vector<LevelSample> HierarchicalVae::h_encode(const Tensor& x,
                                                   std::span<const Tensor> noise) const {
  int L = levels();
  if (static_cast<int>(noise.size()) != L) {
    throw ValueError("h_encode: need one noise tensor per level");
  }
  std::vector<Tensor> feats = bottom_up(x);
  std::vector<LevelSample> out;
  out.reserve(static_cast<std::size_t>(L));
  Tensor z_above;
  for (int j = 0; j < L; ++j) {
    int l = L - 1 - j;
    std::string n = std::to_string(l);
    Tensor in = feats[static_cast<std::size_t>(l)];
    if (j > 0) {
      Tensor g =
          run_chain(z_above, td_chains_[static_cast<std::size_t>(l)], params_, "td." + n);
      in = concat(in, g, last_axis(in.shape()));
    }
    DiagGaussian post = head_gaussian("post_mu." + n, "post_lv." + n, in);
    Tensor z = sample(post, noise[static_cast<std::size_t>(j)]);
    out.push_back({std::move(post), z});
    z_above = out.back().z;
  }
  return out;
}

std::vector<LevelSample> HierarchicalVae::h_encode(const Tensor& x, std::uint64_t seed) const {
  std::vector<LevelState> states = top_down(x, seed, 0);
  std::vector<LevelSample> out;
  out.reserve(states.size());
  for (auto& st : states) out.push_back({std::move(*st.posterior), st.z});
  return out;
}

HierElboParts HierarchicalVae::elbo_impl(const Tensor& x, std::uint64_t seed,
                                         int prior_bottom_k) const {
  std::vector<LevelState> states = top_down(x, seed, prior_bottom_k);
  std::int64_t rows = batch_rows(x.shape());

  Tensor logits = decode_logits(states.back().z);
  Tensor recon = bernoulli_logprob(x, logits);

  HierElboParts parts{recon, recon, {}};
  Tensor kl_sum;
  for (const LevelState& st : states) {
    if (!st.posterior.has_value()) continue;  // prior-sampled: KL dropped
    Tensor kl = kl_diag(*st.posterior, st.prior);
    if (rows > 1) kl = mul_scalar(kl, 1.0 / static_cast<double>(rows));
    parts.level_kls.push_back(kl);
    kl_sum = kl_sum.defined() ? add(kl_sum, kl) : kl;
  }
  parts.total = kl_sum.defined() ? sub(recon, kl_sum) : recon;
  return parts;
}

HierElboParts HierarchicalVae::h_elbo(const Tensor& x, std::uint64_t seed) const {
  return elbo_impl(x, seed, 0);
}

HierElboParts HierarchicalVae::elbo_above_k(const Tensor& x, int k, std::uint64_t seed) const {
  if (k < 0 || k > levels()) {
    throw ValueError("elbo_above_k: k must be in [0, levels], got " + std::to_string(k));
  }
  return elbo_impl(x, seed, k);
}

Tensor HierarchicalVae::decode_logits(const Tensor& z_bottom) const {
  return run_chain(z_bottom, dec_chain_, params_, "dec");
}

Tensor HierarchicalVae::decode(const Tensor& z_bottom) const {
  return clamp(sigmoid(decode_logits(z_bottom)), 1e-12, 1.0 - 1e-12);
}

Tensor HierarchicalVae::reconstruct_mean(const Tensor& x) const {
  int L = levels();
  std::vector<Tensor> feats = bottom_up(x);
  Tensor z_above;
  for (int j = 0; j < L; ++j) {
    int l = L - 1 - j;
    std::string n = std::to_string(l);
    Tensor in = feats[static_cast<std::size_t>(l)];
    if (j > 0) {
      Tensor g =
          run_chain(z_above, td_chains_[static_cast<std::size_t>(l)], params_, "td." + n);
      in = concat(in, g, last_axis(in.shape()));
    }
    DiagGaussian post = head_gaussian("post_mu." + n, "post_lv." + n, in);
    z_above = post.mean();
  }
  return decode(z_above);
}

HierarchicalVae HierarchicalVae::frozen_copy() const {
  HierarchicalVae out(spec_);
  out.bu_chains_ = bu_chains_;
  out.td_chains_ = td_chains_;
  out.post_mu_ = post_mu_;
  out.post_lv_ = post_lv_;
  out.prior_mu_ = prior_mu_;
  out.prior_lv_ = prior_lv_;
  out.dec_chain_ = dec_chain_;
  for (const auto& [name, t] : params_.items()) {
    out.params_.add(name, Tensor::from_data(t.shape(), t.data(), /*requires_grad=*/false));
  }
  return out;
}

std::vector<std::pair<DiagGaussian, DiagGaussian>> HierarchicalVae::paired_posteriors(
    const Tensor& x_a, const Tensor& x_b, int top_k, std::uint64_t seed) const {
  int L = levels();
  if (top_k < 1 || top_k > L) {
    throw ValueError("paired_posteriors: top_k must be in [1, levels]");
  }
  std::vector<Tensor> feats_a = bottom_up(x_a);
  std::vector<Tensor> feats_b = bottom_up(x_b);

  std::vector<std::pair<DiagGaussian, DiagGaussian>> out;
  out.reserve(static_cast<std::size_t>(top_k));
  Tensor z_above;
  std::uint64_t drawn = 0;
  for (int j = 0; j < top_k; ++j) {
    int l = L - 1 - j;
    std::string n = std::to_string(l);
    Tensor in_a = feats_a[static_cast<std::size_t>(l)];
    Tensor in_b = feats_b[static_cast<std::size_t>(l)];
    if (j > 0) {
      // Shared conditioning feature from the x_a-side sample.
      Tensor g = run_chain(z_above, td_chains_[static_cast<std::size_t>(l)], params_, "td." + n);
      in_a = concat(in_a, g, last_axis(in_a.shape()));
      in_b = concat(in_b, g, last_axis(in_b.shape()));
    }
    DiagGaussian q_a = head_gaussian("post_mu." + n, "post_lv." + n, in_a);
    DiagGaussian q_b = head_gaussian("post_mu." + n, "post_lv." + n, in_b);
    if (j + 1 < top_k) {
      Tensor noise = noise_for(q_a.shape(), seed, drawn++);
      z_above = sample(q_a, noise);
    }
    out.emplace_back(std::move(q_a), std::move(q_b));
  }
  return out;
}

TrainResult train_hier(HierarchicalVae& model, const Tensor& images, const TrainConfig& cfg) {
  return train_minibatch(model.params(), images, cfg,
                         [&model](const Tensor& batch, std::uint64_t seed) {
                           return neg(model.h_elbo(batch, seed).total);
                         });
}

TrainResult train_vae(VaeModel& model, const Tensor& images, const TrainConfig& cfg) {
  return train_minibatch(model.params(), images, cfg,
                         [&model](const Tensor& batch, std::uint64_t seed) {
                           return neg(model.elbo_seeded(batch, seed).total);
                         });
}

}  // namespace vaeatk
