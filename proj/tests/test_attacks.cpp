#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "support/test_oracles.hpp"
#include "vaeatk/attacks.hpp"
#include "vaeatk/dataset.hpp"
#include "vaeatk/metrics.hpp"
#include "vaeatk/vae.hpp"

using namespace vaeatk;
using vaeatk::testing::LinearEncoder;
using vaeatk::testing::MlpEncoder;

namespace {

Tensor random_image(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  Rng rng(seed);
  rng.fill_uniform(v, lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.shape()[0], t.shape()[1]);
  for (std::int64_t r = 0; r < t.shape()[0]; ++r) {
    for (std::int64_t c = 0; c < t.shape()[1]; ++c) {
      m(r, c) = t.at(r * t.shape()[1] + c);
    }
  }
  return m;
}

// min ||A e - b|| over ||e||_2 <= rho: min-norm least squares if interior,
// otherwise the Tikhonov solution on the sphere found by bisection.
Eigen::VectorXd constrained_least_squares(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                          double rho) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::VectorXd interior = svd.solve(b);
  if (interior.norm() <= rho) return interior;
  Eigen::MatrixXd ata = A.transpose() * A;
  Eigen::VectorXd atb = A.transpose() * b;
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(A.cols(), A.cols());
  auto solve_at = [&](double lam) {
    return (ata + lam * eye).ldlt().solve(atb).eval();
  };
  double lo = 0.0, hi = 1.0;
  while (solve_at(hi).norm() > rho) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (solve_at(mid).norm() > rho) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return solve_at(hi);
}

}  // namespace

TEST_CASE("attacking the reference itself achieves (near) zero objective") {
  MlpEncoder enc({1, 4, 4}, 10, 3, 7);
  Tensor x = random_image({1, 4, 4}, 11, 0.3, 0.7);
  AttackConfig cfg;
  cfg.steps = 40;
  cfg.budget = 0.5;
  AttackResult r = supervised_attack(enc, x, x, cfg);
  CHECK(r.trace.front() == 0.0);  // SKL(q, q) at eps = 0
  CHECK(r.final_objective <= 1e-9);
  CHECK(r.ok());
}

TEST_CASE("pgd matches the constrained least-squares solution on a linear encoder") {
  // 4 pixels, 2 latents; interior reference so pixel clipping stays inactive
  Shape in_shape{1, 2, 2};
  Tensor w = Tensor::from_data({2, 4}, {0.9, -0.3, 0.4, 0.2, -0.5, 0.8, 0.1, -0.6});
  std::vector<double> lv = {std::log(0.5), std::log(2.0)};
  LinearEncoder enc(in_shape, w, lv);

  Tensor x_ref = Tensor::from_data(in_shape, {0.5, 0.5, 0.5, 0.5});
  Tensor x_tgt = Tensor::from_data(in_shape, {0.95, 0.05, 0.85, 0.15});

  AttackConfig cfg;
  cfg.budget = 0.4;
  cfg.steps = 3000;
  cfg.step_size = 5e-2;
  cfg.decay_tail = 0.3;
  cfg.step_rule = StepRule::Sgd;
  AttackResult r = supervised_attack(enc, x_ref, x_tgt, cfg);
  REQUIRE(r.ok());

  // oracle: SKL = 1/2 || A eps - b ||^2 with A = diag(sigma^-1) W
  Eigen::MatrixXd wm = to_eigen(w);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2, 4);
  for (int i = 0; i < 2; ++i) a.row(i) = wm.row(i) * std::exp(-0.5 * lv[static_cast<std::size_t>(i)]);
  Eigen::VectorXd diff(4);
  for (int i = 0; i < 4; ++i) diff(i) = x_tgt.at(i) - x_ref.at(i);
  Eigen::VectorXd b = a * diff;
  Eigen::VectorXd oracle = constrained_least_squares(a, b, cfg.budget);
  CHECK(oracle.norm() == doctest::Approx(cfg.budget).epsilon(1e-9));  // constraint binds

  for (int i = 0; i < 4; ++i) {
    CHECK(std::fabs(r.epsilon.at(i) - oracle(i)) < 1e-4);
  }
}

TEST_CASE("supervised attack helps reconstructions flip toward the target") {
  // briefly trained affine model on blob data
  DatasetSplit data = make_synthetic("blobs", 600, 15);
  VaeModel m = VaeModel::init(VaeSpec::desk_affine({1, 28, 28}, 64, 8), 17);
  TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 64;
  tc.learning_rate = 2e-3;
  tc.seed = 19;
  train_vae(m, data.images, tc);
  VaeModel frozen = m.frozen_copy();

  AttackConfig cfg;
  cfg.budget = 3.0;
  cfg.steps = 250;
  cfg.step_size = 2e-2;
  Tensor x_ref = data.image(0);   // class 0 blob
  Tensor x_tgt = data.image(3);   // class 3 blob, far corner
  AttackResult r = supervised_attack(frozen, x_ref, x_tgt, cfg);
  REQUIRE(r.ok());

  MsssimConfig mc = MsssimConfig().adapted_for(28, 28);
  auto recon = [&](const Tensor& x) { return frozen.reconstruct_mean(x); };
  double to_target = msssim(recon(x_tgt), recon(r.x_adv), mc);
  double to_ref = msssim(recon(x_ref), recon(r.x_adv), mc);
  CHECK(to_target > to_ref);
}

TEST_CASE("jacobian of a linear encoder mean is exactly the weight matrix") {
  Tensor w = Tensor::from_data({2, 4}, {1.0, 2.0, -1.0, 0.5, 0.0, -2.0, 3.0, 1.5});
  LinearEncoder enc({1, 2, 2}, w, {0.0, 0.0});
  Tensor x = random_image({1, 2, 2}, 23);
  Tensor jac = jacobian_mu(enc, x);
  REQUIRE(jac.shape() == Shape{2, 4});
  for (std::int64_t i = 0; i < 8; ++i) CHECK(jac.at(i) == w.at(i));

  // identity stub
  Tensor eye = Tensor::from_data({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  LinearEncoder id_enc({1, 2, 2}, eye, {0.0, 0.0, 0.0, 0.0});
  Tensor jac_id = jacobian_mu(id_enc, x);
  for (std::int64_t r = 0; r < 4; ++r) {
    for (std::int64_t c = 0; c < 4; ++c) {
      CHECK(jac_id.at(r * 4 + c) == (r == c ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("jacobian rows match central finite differences") {
  MlpEncoder enc({1, 3, 3}, 12, 4, 29);
  Tensor x = random_image({1, 3, 3}, 31, 0.2, 0.8);
  Tensor jac = jacobian_mu(enc, x);
  double h = 1e-5;
  for (std::int64_t i = 0; i < 4; ++i) {
    for (std::int64_t d = 0; d < 9; ++d) {
      std::vector<double> up = x.data(), down = x.data();
      up[static_cast<std::size_t>(d)] += h;
      down[static_cast<std::size_t>(d)] -= h;
      double mu_up = enc.encode(Tensor::from_data(x.shape(), up)).mean().at(i);
      double mu_dn = enc.encode(Tensor::from_data(x.shape(), down)).mean().at(i);
      double central = (mu_up - mu_dn) / (2.0 * h);
      double analytic = jac.at(i * 9 + d);
      double rel = std::fabs(analytic - central) /
                   (std::fabs(analytic) + std::fabs(central) + 1e-12);
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("unsupervised attack on diag(2,1) attains objective 4 on the unit ball") {
  Tensor w = Tensor::from_data({2, 2}, {2.0, 0.0, 0.0, 1.0});
  LinearEncoder enc({1, 1, 2}, w, {0.0, 0.0});
  Tensor x = Tensor::from_data({1, 1, 2}, {0.5, 0.5});
  AttackConfig cfg;
  cfg.mode = AttackMode::Unsupervised;
  cfg.budget = 1.0;
  cfg.seed = 3;
  AttackResult r = unsupervised_attack(enc, x, cfg);
  REQUIRE(r.ok());
  CHECK(std::fabs(r.final_objective - 4.0) < 1e-6);
  CHECK(std::fabs(std::fabs(r.epsilon.at(0)) - 1.0) < 1e-6);
  CHECK(std::fabs(r.epsilon.at(1)) < 1e-5);
  CHECK(std::fabs(l2_norm(r.epsilon.data()) - 1.0) < 1e-9);
}

TEST_CASE("a numerically zero jacobian is a degenerate-encoder error") {
  Tensor w = Tensor::zeros({2, 4});
  LinearEncoder enc({1, 2, 2}, w, {0.0, 0.0});
  AttackConfig cfg;
  cfg.mode = AttackMode::Unsupervised;
  CHECK_THROWS_AS(unsupervised_attack(enc, random_image({1, 2, 2}, 5), cfg), NumericError);
}

TEST_CASE("power iteration reaches the top singular value of random tiny encoders") {
  for (int trial = 0; trial < 10; ++trial) {
    MlpEncoder enc({1, 3, 4}, 14, 5, 200 + static_cast<std::uint64_t>(trial));
    Tensor x = random_image({1, 3, 4}, 300 + static_cast<std::uint64_t>(trial), 0.2, 0.8);
    AttackConfig cfg;
    cfg.mode = AttackMode::Unsupervised;
    cfg.budget = 0.7;
    cfg.seed = 400 + static_cast<std::uint64_t>(trial);
    AttackResult r = unsupervised_attack(enc, x, cfg);
    REQUIRE(r.ok());

    Eigen::MatrixXd jac = to_eigen(jacobian_mu(enc, x));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(jac);
    double sigma_max = svd.singularValues()(0);
    CHECK(r.final_objective >= 0.99 * sigma_max * sigma_max * cfg.budget * cfg.budget);
    CHECK(std::fabs(l2_norm(r.epsilon.data()) - cfg.budget) < 1e-9);
  }
}

TEST_CASE("linf unsupervised attack stays inside the box and makes progress") {
  MlpEncoder enc({1, 3, 3}, 12, 4, 41);
  Tensor x = random_image({1, 3, 3}, 43, 0.3, 0.7);
  AttackConfig cfg;
  cfg.mode = AttackMode::Unsupervised;
  cfg.norm = NormKind::Linf;
  cfg.budget = 0.2;
  cfg.steps = 200;
  cfg.step_size = 5e-3;
  cfg.seed = 47;
  AttackResult r = unsupervised_attack(enc, x, cfg);
  REQUIRE(r.ok());
  CHECK(max_abs(r.epsilon.data()) <= cfg.budget + 1e-12);
  CHECK(r.final_objective > r.trace.front());
  for (double v : r.x_adv.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("linearized objective is first-order accurate for shrinking steps") {
  MlpEncoder enc({1, 4, 4}, 16, 5, 51);
  Tensor x = random_image({1, 4, 4}, 53, 0.3, 0.7);
  AttackConfig cfg;
  cfg.mode = AttackMode::Unsupervised;
  cfg.budget = 1.0;
  cfg.seed = 55;
  AttackResult r = unsupervised_attack(enc, x, cfg);
  REQUIRE(r.ok());

  Tensor jac = jacobian_mu(enc, x);
  std::int64_t m = jac.shape()[0], d = jac.shape()[1];
  auto mu_at = [&](const std::vector<double>& xv) {
    return enc.encode(Tensor::from_data(x.shape(), xv)).mean().data();
  };
  std::vector<double> mu0 = mu_at(x.data());
  auto rel_residual = [&](double t) {
    std::vector<double> shifted = x.data();
    for (std::int64_t i = 0; i < d; ++i) shifted[static_cast<std::size_t>(i)] += t * r.epsilon.at(i);
    std::vector<double> mu1 = mu_at(shifted);
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      double lin = 0.0;
      for (std::int64_t c = 0; c < d; ++c) lin += jac.at(i * d + c) * t * r.epsilon.at(c);
      double resid = mu1[static_cast<std::size_t>(i)] - mu0[static_cast<std::size_t>(i)] - lin;
      num += resid * resid;
      den += lin * lin;
    }
    return std::sqrt(num) / std::sqrt(den);
  };
  double r01 = rel_residual(0.1);
  double r001 = rel_residual(0.01);
  CHECK(r001 <= r01);
}

TEST_CASE("identical config and seed reproduce an attack bit for bit") {
  MlpEncoder enc({1, 3, 3}, 10, 3, 61);
  Tensor x_ref = random_image({1, 3, 3}, 63, 0.2, 0.8);
  Tensor x_tgt = random_image({1, 3, 3}, 65, 0.2, 0.8);
  AttackConfig cfg;
  cfg.steps = 60;
  cfg.budget = 0.5;
  cfg.seed = 71;
  AttackResult a = supervised_attack(enc, x_ref, x_tgt, cfg);
  AttackResult b = supervised_attack(enc, x_ref, x_tgt, cfg);
  CHECK(a.epsilon.data() == b.epsilon.data());
  CHECK(a.trace == b.trace);
  CHECK(a.final_objective == b.final_objective);

  AttackConfig ucfg;
  ucfg.mode = AttackMode::Unsupervised;
  ucfg.seed = 73;
  AttackResult u1 = unsupervised_attack(enc, x_ref, ucfg);
  AttackResult u2 = unsupervised_attack(enc, x_ref, ucfg);
  CHECK(u1.epsilon.data() == u2.epsilon.data());
  CHECK(u1.trace == u2.trace);
}

TEST_CASE("projection keeps every iterate inside the ball and pixels valid") {
  MlpEncoder enc({1, 3, 3}, 10, 3, 81);
  Tensor x_ref = random_image({1, 3, 3}, 83, 0.0, 1.0);
  Tensor x_tgt = random_image({1, 3, 3}, 85, 0.0, 1.0);
  AttackConfig cfg;
  cfg.steps = 120;
  cfg.budget = 0.3;
  cfg.step_size = 5e-2;  // large steps exercise the projection
  AttackResult r = supervised_attack(enc, x_ref, x_tgt, cfg);
  REQUIRE(r.ok());
  CHECK(l2_norm(r.epsilon.data()) <= cfg.budget + 1e-9);
  for (std::int64_t i = 0; i < r.x_adv.size(); ++i) {
    CHECK(r.x_adv.at(i) >= 0.0);
    CHECK(r.x_adv.at(i) <= 1.0);
  }
  // best-so-far over the trace is non-increasing by construction
  double best = r.trace.front();
  for (double v : r.trace) {
    best = std::min(best, v);
    CHECK(r.final_objective <= best + 1e-15);
  }
  CHECK(r.final_objective == best);
}

TEST_CASE("hierarchical attack with one level reduces to the plain attack") {
  std::int64_t hidden = 24, latent = 4;
  VaeModel plain = VaeModel::init(VaeSpec::desk_affine({1, 6, 6}, hidden, latent), 87);
  HierVaeSpec hs;
  hs.input_shape = {1, 6, 6};
  hs.latent_dims = {latent};
  hs.feature_dims = {hidden};
  hs.decoder_hidden = hidden;
  HierarchicalVae hier = HierarchicalVae::init(hs, 89);
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

  Tensor x_ref = random_image({1, 6, 6}, 91, 0.2, 0.8);
  Tensor x_tgt = random_image({1, 6, 6}, 93, 0.2, 0.8);
  AttackConfig cfg;
  cfg.steps = 50;
  cfg.budget = 0.8;
  cfg.seed = 95;
  cfg.attacked_levels = 1;
  AttackResult hr = hierarchical_supervised_attack(hier, x_ref, x_tgt, cfg);
  AttackResult pr = supervised_attack(plain, x_ref, x_tgt, cfg);
  CHECK(hr.trace == pr.trace);
  CHECK(hr.epsilon.data() == pr.epsilon.data());
}

TEST_CASE("hierarchical attack drives its own objective down substantially") {
  DatasetSplit data = make_synthetic("blobs", 400, 97);
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 99);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 64;
  tc.learning_rate = 2e-3;
  tc.seed = 101;
  train_hier(m, data.images, tc);
  HierarchicalVae frozen = m.frozen_copy();

  for (int k = 1; k <= 2; ++k) {
    AttackConfig cfg;
    cfg.steps = 300;
    cfg.step_size = 2e-2;
    cfg.budget = 3.0;
    cfg.seed = 103 + static_cast<std::uint64_t>(k);
    cfg.attacked_levels = k;
    AttackResult r = hierarchical_supervised_attack(frozen, data.image(0), data.image(3), cfg);
    REQUIRE(r.ok());
    CHECK(r.attacked_levels == k);
    CHECK(r.final_objective * 10.0 <= r.trace.front());
  }
}

TEST_CASE("attack_batch covers the plan, records failures, and keeps going") {
  MlpEncoder enc({1, 28, 28}, 16, 4, 105);
  DatasetSplit data = make_synthetic("shapes", 24, 107);
  PairSelection sel = select_pairs_supervised(data, 3, 2, 109);
  std::vector<AttackItem> items = sel.items();
  REQUIRE(items.size() == 6);
  items.push_back({0, 9999, -1});  // broken target id

  AttackConfig cfg;
  cfg.steps = 10;
  cfg.budget = 0.5;
  std::vector<AttackResult> results = attack_batch(enc, data.images, items, cfg, 111, 2);
  REQUIRE(results.size() == 7);
  int ok = 0, failed = 0;
  for (const AttackResult& r : results) {
    r.ok() ? ++ok : ++failed;
  }
  CHECK(ok == 6);
  CHECK(failed == 1);
  CHECK(results.back().error.find("out of range") != std::string::npos);

  // empty plan
  std::vector<AttackResult> none = attack_batch(enc, data.images, {}, cfg, 111, 2);
  CHECK(none.empty());

  // per-item seeds derive from the batch seed and index: worker count must
  // not change the outcome
  std::vector<AttackResult> serial = attack_batch(enc, data.images, items, cfg, 111, 1);
  REQUIRE(serial.size() == results.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].seed == results[i].seed);
    if (serial[i].ok()) {
      CHECK(serial[i].epsilon.data() == results[i].epsilon.data());
    }
  }
}

TEST_CASE("attack config validation rejects bad knobs") {
  AttackConfig cfg;
  cfg.budget = 0.0;
  CHECK_THROWS_AS(cfg.validate(1), ValueError);
  cfg = {};
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(1), ValueError);
  cfg = {};
  cfg.attacked_levels = 3;
  CHECK_THROWS_AS(cfg.validate(2), ValueError);
  cfg = {};
  cfg.decay_tail = 1.5;
  CHECK_THROWS_AS(cfg.validate(1), ValueError);
}
