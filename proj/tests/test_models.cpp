#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vaeatk/autodiff.hpp"
#include "vaeatk/checkpoint.hpp"
#include "vaeatk/dataset.hpp"
#include "vaeatk/hiervae.hpp"
#include "vaeatk/vae.hpp"

using namespace vaeatk;

namespace {

Tensor random_image(Shape shape, std::uint64_t seed) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  Rng rng(seed);
  rng.fill_uniform(v, 0.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(v));
}

void zero_params_with_prefix(ParamStore& params, const std::string& prefix) {
  for (auto& [name, t] : params.items_mut()) {
    if (name.rfind(prefix, 0) == 0) {
      std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
    }
  }
}

VaeSpec tiny_affine_spec(std::int64_t hidden = 32, std::int64_t latent = 4, double beta = 1.0) {
  return VaeSpec::desk_affine({1, 28, 28}, hidden, latent, beta);
}

}  // namespace

TEST_CASE("encode is deterministic and yields the configured latent width") {
  VaeModel m = VaeModel::init(VaeSpec::desk_default(16), 5);
  Tensor x = random_image({1, 28, 28}, 9);
  DiagGaussian q1 = m.encode(x);
  DiagGaussian q2 = m.encode(x);
  CHECK(q1.mean().data() == q2.mean().data());
  CHECK(q1.log_var().data() == q2.log_var().data());
  CHECK(q1.shape() == Shape{16});

  Tensor batch = random_image({3, 1, 28, 28}, 10);
  CHECK(m.encode(batch).shape() == Shape{3, 16});
  CHECK_THROWS_AS(m.encode(random_image({1, 27, 28}, 11)), ShapeError);
}

TEST_CASE("the full-scale conv stack is expressible and ends at 128 latents on 28x28") {
  std::vector<LayerSpec> enc = {
      LayerSpec::conv(1, 32, 3, 1, 1),    LayerSpec::relu(),
      LayerSpec::conv(32, 64, 5, 2, 0),   LayerSpec::relu(),
      LayerSpec::conv(64, 128, 5, 2, 0),  LayerSpec::relu(),
      LayerSpec::conv(128, 256, 3, 2, 1), LayerSpec::relu(),
  };
  Shape feat = chain_out_shape({1, 28, 28}, enc);
  CHECK(feat == Shape{256, 2, 2});
  LayerSpec head = LayerSpec::conv(256, 128, 3, 2, 1);
  CHECK(numel(layer_out_shape(head, feat)) == 128);

  std::vector<LayerSpec> dec = {
      LayerSpec::tconv(128, 256, 3, 1, 0), LayerSpec::relu(),
      LayerSpec::tconv(256, 128, 3, 2, 0), LayerSpec::relu(),
      LayerSpec::tconv(128, 64, 4, 2, 0),  LayerSpec::relu(),
      LayerSpec::tconv(64, 1, 4, 2, 1),    LayerSpec::sigmoid(),
  };
  CHECK(chain_out_shape({128, 1, 1}, dec) == Shape{1, 32, 32});

  // inconsistent chains are rejected
  std::vector<LayerSpec> bad = {LayerSpec::conv(1, 8, 3, 1, 1), LayerSpec::conv(16, 8, 3, 1, 1)};
  CHECK_THROWS_AS(chain_out_shape({1, 28, 28}, bad), ShapeError);
}

TEST_CASE("a linear encoder double reproduces W x exactly") {
  VaeSpec spec;
  spec.input_shape = {1, 2, 2};
  spec.encoder = {LayerSpec::flatten()};
  spec.mean_head = LayerSpec::affine(4, 2);
  spec.logvar_head = LayerSpec::affine(4, 2);
  spec.decoder = {LayerSpec::affine(2, 4), LayerSpec::reshape(1, 2, 2)};
  spec.latent_dim = 2;
  VaeModel m = VaeModel::init(spec, 3);

  std::vector<double> w = {0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 1.0};
  m.params().at("enc.mu.0.w").data_mut() = w;
  std::fill(m.params().at("enc.mu.0.b").data_mut().begin(),
            m.params().at("enc.mu.0.b").data_mut().end(), 0.0);

  Tensor x = Tensor::from_data({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  DiagGaussian q = m.encode(x);
  CHECK(q.mean().at(0) == 0.5 * 1 - 1.0 * 2 + 2.0 * 3 + 0.25 * 4);
  CHECK(q.mean().at(1) == 1.5 * 1 + 0.0 * 2 - 0.5 * 3 + 1.0 * 4);
}

TEST_CASE("decode stays strictly inside (0,1) and is deterministic") {
  VaeModel m = VaeModel::init(VaeSpec::desk_default(8), 17);
  Rng rng(23);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> zv(8);
    rng.fill_uniform(zv, -3.0, 3.0);
    Tensor z = Tensor::from_data({8}, zv);
    Tensor y = m.decode(z);
    CHECK(y.shape() == Shape{1, 28, 28});
    double lo = 1.0, hi = 0.0;
    for (double v : y.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo > 0.0);
    CHECK(hi < 1.0);
    CHECK(m.decode(z).data() == y.data());
  }
  CHECK_THROWS_AS(m.decode(Tensor::zeros({9})), ShapeError);
}

TEST_CASE("a zero-weight decoder emits 0.5 everywhere") {
  VaeModel m = VaeModel::init(tiny_affine_spec(), 29);
  zero_params_with_prefix(m.params(), "dec.");
  Tensor y = m.decode(Tensor::zeros({4}));
  for (double v : y.data()) CHECK(v == 0.5);
}

TEST_CASE("elbo with beta 0 equals the reconstruction term exactly") {
  VaeSpec spec = tiny_affine_spec(32, 4, 0.0);
  VaeModel m = VaeModel::init(spec, 31);
  Tensor x = random_image({1, 28, 28}, 33);
  ElboParts parts = m.elbo_seeded(x, 7);
  CHECK(parts.total.item() == parts.recon.item());
  CHECK(parts.kl.item() > 0.0);
}

TEST_CASE("an encoder forced to the prior has zero kl") {
  VaeModel m = VaeModel::init(tiny_affine_spec(), 37);
  zero_params_with_prefix(m.params(), "enc.mu.");
  zero_params_with_prefix(m.params(), "enc.lv.");
  Tensor x = random_image({1, 28, 28}, 39);
  ElboParts parts = m.elbo_seeded(x, 11);
  CHECK(parts.kl.item() == 0.0);
}

TEST_CASE("elbo gradient w.r.t. the input passes the finite-difference check") {
  VaeModel m = VaeModel::init(tiny_affine_spec(24, 3), 41);
  Tensor x = random_image({1, 28, 28}, 43);
  std::vector<double> noise(3);
  Rng rng(45);
  rng.fill_normal(noise);
  Tensor noise_t = Tensor::from_data({3}, noise);
  auto f = [&](const Tensor& probe) { return m.elbo(probe, noise_t).total; };
  FdReport rep = finite_diff_check(f, x, 1e-4);
  CHECK(rep.nan_coords.empty());
  CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("the default train config records the full-scale recipe") {
  TrainConfig cfg;
  CHECK(cfg.learning_rate == 5e-4);
  CHECK(cfg.plateau_factor == 0.9);
  CHECK(cfg.plateau_patience == 10);
  CHECK(cfg.epochs == 500);
  CHECK(cfg.batch_size == 256);
}

TEST_CASE("smoke training decreases the loss for every beta") {
  DatasetSplit data = make_synthetic("shapes", 1000, 2024);
  for (double beta : {0.5, 1.0, 2.0, 4.0, 10.0}) {
    VaeModel m = VaeModel::init(tiny_affine_spec(48, 6, beta), 47);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 64;
    cfg.learning_rate = 2e-3;
    cfg.beta = beta;
    cfg.seed = 99;
    TrainResult tr = train_vae(m, data.images, cfg);
    REQUIRE(tr.history.size() == 5);
    CHECK(tr.history.back().train_neg_elbo < tr.history.front().train_neg_elbo);
    CHECK(tr.history.back().val_neg_elbo < tr.history.front().val_neg_elbo);
  }
}

TEST_CASE("training twice with one seed gives identical histories") {
  DatasetSplit data = make_synthetic("shapes", 200, 77);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 50;
  cfg.seed = 1234;
  VaeModel m1 = VaeModel::init(tiny_affine_spec(), 7);
  VaeModel m2 = VaeModel::init(tiny_affine_spec(), 7);
  TrainResult t1 = train_vae(m1, data.images, cfg);
  TrainResult t2 = train_vae(m2, data.images, cfg);
  REQUIRE(t1.history.size() == t2.history.size());
  for (std::size_t i = 0; i < t1.history.size(); ++i) {
    CHECK(t1.history[i].train_neg_elbo == t2.history[i].train_neg_elbo);
    CHECK(t1.history[i].val_neg_elbo == t2.history[i].val_neg_elbo);
  }
  for (std::size_t p = 0; p < m1.params().items().size(); ++p) {
    CHECK(m1.params().items()[p].second.data() == m2.params().items()[p].second.data());
  }
}

TEST_CASE("divergent training aborts with the offending epoch and batch") {
  DatasetSplit data = make_synthetic("shapes", 120, 88);
  VaeModel m = VaeModel::init(tiny_affine_spec(), 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 40;
  cfg.learning_rate = 1e160;
  cfg.seed = 5;
  try {
    train_vae(m, data.images, cfg);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("plateau schedule decays the learning rate when validation stalls") {
  DatasetSplit data = make_synthetic("shapes", 60, 3);
  VaeModel m = VaeModel::init(tiny_affine_spec(), 7);
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.batch_size = 60;
  cfg.learning_rate = 1e-30;  // effectively frozen, so validation never improves
  cfg.plateau_patience = 2;
  cfg.plateau_factor = 0.5;
  cfg.seed = 6;
  TrainResult tr = train_vae(m, data.images, cfg);
  CHECK(tr.history.back().learning_rate < cfg.learning_rate * 0.3);
}

TEST_CASE("checkpoints round-trip parameters bit-exactly") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "vaeatk_ckpt_test";
  fs::create_directories(dir);
  std::string path = (dir / "model.vaek").string();

  VaeModel m = VaeModel::init(VaeSpec::desk_default(8, 2.0), 51);
  save_checkpoint(path, m, R"({"note":"fixture"})");
  LoadedCheckpoint loaded = load_checkpoint(path);
  REQUIRE(loaded.kind == "vae");
  REQUIRE(loaded.vae.has_value());
  CHECK(loaded.vae->spec().beta == 2.0);
  CHECK(loaded.meta_json.find("fixture") != std::string::npos);
  const auto& a = m.params().items();
  const auto& b = loaded.vae->params().items();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.data() == b[i].second.data());
  }

  std::string bad = (dir / "bad.vaek").string();
  std::ofstream(bad, std::ios::binary) << "NOTACKPT";
  CHECK_THROWS_AS(load_checkpoint(bad), IoError);

  HierarchicalVae h = HierarchicalVae::init(HierVaeSpec::desk_default(2), 53);
  std::string hpath = (dir / "hier.vaek").string();
  save_checkpoint(hpath, h, "{}");
  LoadedCheckpoint hl = load_checkpoint(hpath);
  REQUIRE(hl.kind == "hier");
  CHECK(hl.hier->params().items().size() == h.params().items().size());
}

TEST_CASE("nll_importance rejects zero samples and pairs with the single-sample elbo") {
  VaeModel m = VaeModel::init(tiny_affine_spec(24, 3), 57);
  Tensor x = random_image({1, 28, 28}, 59);
  CHECK_THROWS_AS(m.nll_importance(x, 0, 1), ValueError);

  // paired-seed identity: E[nll_importance(K=1)] = E[-single-sample elbo]
  const int n_seeds = 1000;
  double acc = 0.0, acc2 = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    double nll1 = m.nll_importance(x, 1, static_cast<std::uint64_t>(s));
    double neg_elbo = -m.elbo_seeded(x, static_cast<std::uint64_t>(s)).total.item();
    double d = nll1 - neg_elbo;
    acc += d;
    acc2 += d * d;
  }
  double mean_d = acc / n_seeds;
  double var = acc2 / n_seeds - mean_d * mean_d;
  double se = std::sqrt(std::max(var, 0.0) / n_seeds);
  CHECK(std::fabs(mean_d) <= 3.0 * se + 1e-12);
}

TEST_CASE("importance sampling tightens the bound as K grows") {
  VaeModel m = VaeModel::init(tiny_affine_spec(24, 3), 61);
  Tensor x = random_image({1, 28, 28}, 63);
  double mean_k1 = 0.0, mean_k200 = 0.0;
  const int n_seeds = 40;
  for (int s = 0; s < n_seeds; ++s) {
    mean_k1 += m.nll_importance(x, 1, static_cast<std::uint64_t>(s));
    mean_k200 += m.nll_importance(x, 200, static_cast<std::uint64_t>(s));
  }
  CHECK(mean_k200 / n_seeds <= mean_k1 / n_seeds);
}

TEST_CASE("the single-sample elbo lower-bounds the importance estimate") {
  VaeModel m = VaeModel::init(tiny_affine_spec(24, 3), 67);
  DatasetSplit data = make_synthetic("shapes", 10, 71);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    Tensor x = data.image(i);
    const int n_seeds = 200;
    double acc = 0.0, acc2 = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      double v = m.elbo_seeded(x, static_cast<std::uint64_t>(1000 + s)).total.item();
      acc += v;
      acc2 += v * v;
    }
    double mean_elbo = acc / n_seeds;
    double se = std::sqrt(std::max(acc2 / n_seeds - mean_elbo * mean_elbo, 0.0) / n_seeds);
    double log_p_bound = -m.nll_importance(x, 5000, 12345);
    CHECK(mean_elbo <= log_p_bound + 3.0 * se);
  }
}

TEST_CASE("the beta-weighted elbo with beta one is the plain elbo, bitwise") {
  VaeModel m = VaeModel::init(tiny_affine_spec(32, 4, 1.0), 69);
  Tensor x = random_image({1, 28, 28}, 73);
  ElboParts parts = m.elbo_seeded(x, 3);
  CHECK(parts.total.item() == parts.recon.item() - parts.kl.item());
}

// ---- hierarchical model -----------------------------------------------------

namespace {

// plain affine VAE and a 1-level hierarchical model with identical weights
std::pair<VaeModel, HierarchicalVae> matched_pair() {
  std::int64_t hidden = 40, latent = 6;
  VaeModel plain = VaeModel::init(VaeSpec::desk_affine({1, 28, 28}, hidden, latent), 81);
  HierVaeSpec hs;
  hs.input_shape = {1, 28, 28};
  hs.latent_dims = {latent};
  hs.feature_dims = {hidden};
  hs.decoder_hidden = hidden;
  HierarchicalVae hier = HierarchicalVae::init(hs, 83);

  auto copy = [&](const std::string& from, const std::string& to) {
    hier.params().at(to).data_mut() = plain.params().at(from).data();
  };
  copy("enc.1.w", "bu.0.0.w");
  copy("enc.1.b", "bu.0.0.b");
  copy("enc.mu.0.w", "post_mu.0.0.w");
  copy("enc.mu.0.b", "post_mu.0.0.b");
  copy("enc.lv.0.w", "post_lv.0.0.w");
  copy("enc.lv.0.b", "post_lv.0.0.b");
  copy("dec.0.w", "dec.0.w");
  copy("dec.0.b", "dec.0.b");
  copy("dec.2.w", "dec.2.w");
  copy("dec.2.b", "dec.2.b");
  return {std::move(plain), std::move(hier)};
}

}  // namespace

TEST_CASE("a 1-level hierarchy is observationally the plain model") {
  auto [plain, hier] = matched_pair();
  Tensor x = random_image({1, 28, 28}, 85);

  std::vector<LevelSample> levels = hier.h_encode(x, std::uint64_t{5});
  REQUIRE(levels.size() == 1);
  DiagGaussian q = plain.encode(x);
  CHECK(levels[0].posterior.mean().data() == q.mean().data());
  CHECK(levels[0].posterior.log_var().data() == q.log_var().data());

  HierElboParts h = hier.h_elbo(x, 5);
  ElboParts p = plain.elbo_seeded(x, 5);
  CHECK(h.total.item() == p.total.item());
  CHECK(h.recon.item() == p.recon.item());
  REQUIRE(h.level_kls.size() == 1);
  CHECK(h.level_kls[0].item() == p.kl.item());
}

TEST_CASE("h_encode returns top-to-bottom posteriors of the right widths") {
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 91);
  Tensor x = random_image({1, 28, 28}, 93);
  std::vector<LevelSample> levels = m.h_encode(x, std::uint64_t{3});
  REQUIRE(levels.size() == 2);
  CHECK(levels[0].posterior.shape() == Shape{4});  // top
  CHECK(levels[1].posterior.shape() == Shape{8});  // bottom
}

TEST_CASE("top-level noise feeds the lower posterior through the skip path") {
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 95);
  Tensor x = random_image({1, 28, 28}, 97);
  Tensor noise_top_a = Tensor::zeros({4});
  Tensor noise_top_b = Tensor::full({4}, 1.5);
  Tensor noise_bottom = Tensor::zeros({8});
  std::vector<Tensor> na = {noise_top_a, noise_bottom};
  std::vector<Tensor> nb = {noise_top_b, noise_bottom};
  auto la = m.h_encode(x, na);
  auto lb = m.h_encode(x, nb);
  CHECK(la[1].posterior.mean().data() != lb[1].posterior.mean().data());
}

TEST_CASE("h_elbo reports a reproducible per-level analytic kl breakdown") {
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(3), 99);
  Tensor x = random_image({1, 28, 28}, 101);
  HierElboParts parts = m.h_elbo(x, 21);
  REQUIRE(parts.level_kls.size() == 3);
  double kl_sum = 0.0;
  for (const Tensor& kl : parts.level_kls) {
    CHECK(kl.item() >= 0.0);
    kl_sum += kl.item();
  }
  CHECK(parts.total.item() == doctest::Approx(parts.recon.item() - kl_sum).epsilon(1e-12));

  // recompute the breakdown from the returned posteriors and samples
  std::vector<LevelSample> levels = m.h_encode(x, std::uint64_t{21});
  for (std::size_t j = 0; j < levels.size(); ++j) {
    DiagGaussian prior = j == 0 ? DiagGaussian::standard(levels[0].posterior.shape())
                                : m.prior_given(static_cast<int>(levels.size() - 1 - j),
                                                levels[j - 1].z);
    double kl = kl_diag(levels[j].posterior, prior).item();
    CHECK(std::fabs(kl - parts.level_kls[j].item()) < 1e-10);
  }
}

TEST_CASE("h_elbo input gradient passes the finite-difference check") {
  HierVaeSpec spec;
  spec.input_shape = {1, 6, 6};
  spec.latent_dims = {4, 2};
  spec.feature_dims = {12, 8};
  spec.prior_hidden = {6};
  spec.decoder_hidden = 12;
  HierarchicalVae m = HierarchicalVae::init(spec, 103);
  Tensor x = random_image({1, 6, 6}, 105);
  auto f = [&](const Tensor& probe) { return m.h_elbo(probe, 31).total; };
  FdReport rep = finite_diff_check(f, x, 1e-4);
  CHECK(rep.nan_coords.empty());
  CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("elbo_above_k drops exactly the bottom-k posterior factors") {
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 107);
  Tensor x = random_image({1, 28, 28}, 109);

  HierElboParts base = m.h_elbo(x, 33);
  HierElboParts k0 = m.elbo_above_k(x, 0, 33);
  CHECK(k0.total.item() == base.total.item());
  REQUIRE(k0.level_kls.size() == 2);

  HierElboParts k1 = m.elbo_above_k(x, 1, 33);
  CHECK(k1.level_kls.size() == 1);

  HierElboParts k2 = m.elbo_above_k(x, 2, 33);
  CHECK(k2.level_kls.empty());
  CHECK(k2.total.item() == k2.recon.item());

  CHECK_THROWS_AS(m.elbo_above_k(x, 3, 33), ValueError);
  CHECK_THROWS_AS(m.elbo_above_k(x, -1, 33), ValueError);
}

TEST_CASE("hierarchical smoke training decreases the loss") {
  DatasetSplit data = make_synthetic("shapes", 300, 2025);
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 111);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 64;
  cfg.learning_rate = 2e-3;
  cfg.seed = 17;
  TrainResult tr = train_hier(m, data.images, cfg);
  CHECK(tr.history.back().train_neg_elbo < tr.history.front().train_neg_elbo);
}
