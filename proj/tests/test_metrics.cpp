#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/test_oracles.hpp"
#include "vaeatk/dataset.hpp"
#include "vaeatk/hiervae.hpp"
#include "vaeatk/metrics.hpp"
#include "vaeatk/vae.hpp"

using namespace vaeatk;

namespace {

Tensor random_image(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  Rng rng(seed);
  rng.fill_uniform(v, lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

AttackResult fake_result(const Tensor& x_ref, const Tensor& x_adv, std::uint64_t seed) {
  AttackResult r;
  r.x_ref = x_ref;
  r.x_adv = x_adv;
  std::vector<double> eps(static_cast<std::size_t>(x_ref.size()));
  for (std::int64_t i = 0; i < x_ref.size(); ++i) {
    eps[static_cast<std::size_t>(i)] = x_adv.at(i) - x_ref.at(i);
  }
  r.epsilon = Tensor::from_data(x_ref.shape(), std::move(eps));
  r.seed = seed;
  r.trace = {0.0};
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("msssim self-similarity is exactly one on dataset images") {
  DatasetSplit data = make_synthetic("shapes", 20, 5);
  MsssimConfig cfg = MsssimConfig().adapted_for(28, 28);
  CHECK(cfg.scales == 3);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    Tensor x = data.image(i);
    CHECK(std::fabs(msssim(x, x, cfg) - 1.0) < 1e-6);
  }
}

TEST_CASE("msssim is bitwise symmetric and bounded in [0,1]") {
  MsssimConfig cfg = MsssimConfig().adapted_for(28, 28);
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Tensor a = random_image({1, 28, 28}, 100 + static_cast<std::uint64_t>(i));
    Tensor b = random_image({1, 28, 28}, 200 + static_cast<std::uint64_t>(i));
    double ab = msssim(a, b, cfg);
    double ba = msssim(b, a, cfg);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("single-scale msssim matches the from-definition oracle") {
  // constant-vs-gradient synthetic pair plus random pairs
  std::int64_t h = 20, w = 20;
  std::vector<double> flat(static_cast<std::size_t>(h * w), 0.5);
  std::vector<double> grad(static_cast<std::size_t>(h * w));
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      grad[static_cast<std::size_t>(r * w + c)] =
          static_cast<double>(r + c) / static_cast<double>(h + w - 2);
    }
  }
  MsssimConfig cfg = MsssimConfig::single_scale(7, 1.5);

  Tensor a = Tensor::from_data({h, w}, flat);
  Tensor b = Tensor::from_data({h, w}, grad);
  double lib = msssim(a, b, cfg);
  double oracle = testing::ssim_from_definition(flat, grad, h, w, 7, 1.5, cfg.c1, cfg.c2);
  CHECK(std::fabs(lib - oracle) < 1e-8);

  // correlated pairs keep the raw index positive, so no flooring applies
  Rng rng(11);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> av(static_cast<std::size_t>(h * w));
    std::vector<double> bv(static_cast<std::size_t>(h * w));
    rng.fill_uniform(av, 0.0, 1.0);
    for (std::size_t p = 0; p < bv.size(); ++p) {
      bv[p] = std::min(1.0, std::max(0.0, 0.8 * av[p] + 0.2 * rng.uniform()));
    }
    double lib_r = msssim(Tensor::from_data({h, w}, av), Tensor::from_data({h, w}, bv), cfg);
    double orc_r = testing::ssim_from_definition(av, bv, h, w, 7, 1.5, cfg.c1, cfg.c2);
    CHECK(orc_r > 0.0);
    CHECK(std::fabs(lib_r - orc_r) < 1e-8);
  }

  // a pair whose raw index is negative floors to zero
  std::vector<double> pos(static_cast<std::size_t>(h * w)), negp(static_cast<std::size_t>(h * w));
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      pos[static_cast<std::size_t>(r * w + c)] = (r + c) % 2 == 0 ? 1.0 : 0.0;
      negp[static_cast<std::size_t>(r * w + c)] = (r + c) % 2 == 0 ? 0.0 : 1.0;
    }
  }
  double raw =
      testing::ssim_from_definition(pos, negp, h, w, 7, 1.5, cfg.c1, cfg.c2);
  CHECK(raw < 0.0);
  CHECK(msssim(Tensor::from_data({h, w}, pos), Tensor::from_data({h, w}, negp), cfg) == 0.0);
}

TEST_CASE("msssim rejects mismatched or too-small images, naming the limiting scale") {
  MsssimConfig cfg;  // 5 scales
  Tensor a = random_image({1, 28, 28}, 13);
  Tensor b = random_image({1, 27, 28}, 15);
  CHECK_THROWS_AS(msssim(a, a, cfg), ShapeError);  // 28x28 cannot host 5 scales
  CHECK_THROWS_AS(msssim(a, b, MsssimConfig().adapted_for(28, 28)), ShapeError);
  try {
    msssim(a, a, cfg);
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("scale 4") != std::string::npos);
  }
  CHECK_THROWS_AS(MsssimConfig().adapted_for(2, 2), ShapeError);

  MsssimConfig bad;
  bad.weights = {0.5, 0.5};
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("msssim degrades monotonically with noise amplitude") {
  DatasetSplit data = make_synthetic("shapes", 1, 17);
  Tensor x = data.image(0);
  MsssimConfig cfg = MsssimConfig().adapted_for(28, 28);
  double prev = 1.1;
  for (double sigma : {0.05, 0.1, 0.2}) {
    double acc = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Rng rng(1000 + static_cast<std::uint64_t>(rep));
      std::vector<double> noisy = x.data();
      for (double& v : noisy) {
        v += sigma * rng.normal();
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      }
      acc += msssim(x, Tensor::from_data(x.shape(), noisy), cfg);
    }
    double mean = acc / 20.0;
    CHECK(mean < prev);
    prev = mean;
  }
}

TEST_CASE("omega is zero for unperturbed pairs and exact for a single pair") {
  testing::MlpEncoder enc({1, 6, 6}, 12, 3, 19);
  Tensor x = random_image({1, 6, 6}, 21, 0.2, 0.8);

  std::vector<AttackResult> none = {fake_result(x, x, 1)};
  OmegaReport zero = omega(enc, none);
  CHECK(zero.sum == 0.0);
  CHECK(zero.per_pair_mean == 0.0);

  Tensor y = random_image({1, 6, 6}, 23, 0.2, 0.8);
  std::vector<AttackResult> one = {fake_result(x, y, 2)};
  OmegaReport rep = omega(enc, one);
  double expect = skl(enc.encode(y), enc.encode(x)).item();
  CHECK(rep.sum == expect);
  CHECK(rep.per_pair.size() == 1);
}

TEST_CASE("omega is additive over concatenated result lists") {
  testing::MlpEncoder enc({1, 6, 6}, 12, 3, 29);
  std::vector<AttackResult> part1, part2, all;
  for (int i = 0; i < 3; ++i) {
    Tensor x = random_image({1, 6, 6}, 300 + static_cast<std::uint64_t>(i), 0.2, 0.8);
    Tensor y = random_image({1, 6, 6}, 400 + static_cast<std::uint64_t>(i), 0.2, 0.8);
    AttackResult r = fake_result(x, y, static_cast<std::uint64_t>(i));
    (i < 2 ? part1 : part2).push_back(r);
    all.push_back(r);
  }
  double split_sum = omega(enc, part1).sum + omega(enc, part2).sum;
  CHECK(omega(enc, all).sum == doctest::Approx(split_sum).epsilon(1e-12));
}

TEST_CASE("omega refuses an effectively empty result list") {
  testing::MlpEncoder enc({1, 6, 6}, 12, 3, 31);
  std::vector<AttackResult> empty;
  CHECK_THROWS_AS(omega(enc, empty), ValueError);
  AttackResult failed;
  failed.error = "boom";
  std::vector<AttackResult> all_failed = {failed};
  CHECK_THROWS_AS(omega(enc, all_failed), ValueError);
}

TEST_CASE("hierarchical omega follows the attack's conditioning convention") {
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 33);
  Tensor x = random_image({1, 28, 28}, 35);
  Tensor y = random_image({1, 28, 28}, 37);
  AttackResult r = fake_result(x, y, 41);
  r.attacked_levels = 2;
  OmegaReport rep = omega(m, std::vector<AttackResult>{r});
  auto pairs = m.paired_posteriors(y, x, 2, derive_seed(41, "omega"));
  double expect = 0.0;
  for (const auto& [qa, qr] : pairs) expect += skl(qa, qr).item();
  CHECK(rep.sum == expect);
  CHECK(rep.sum > 0.0);
}

TEST_CASE("msssim_triple reports ones for an identical adversarial input") {
  VaeModel m = VaeModel::init(VaeSpec::desk_affine({1, 28, 28}, 32, 4), 43);
  DatasetSplit data = make_synthetic("shapes", 4, 45);
  Tensor x = data.image(0);
  Tensor tgt = data.image(1);
  MsssimConfig cfg = MsssimConfig().adapted_for(28, 28);
  auto recon = [&](const Tensor& t) { return m.reconstruct_mean(t); };
  MsssimTriple t = msssim_triple(x, x, tgt, recon, cfg);
  CHECK(t.ref_adv == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(t.recref_recadv == doctest::Approx(1.0).epsilon(1e-9));
  REQUIRE(t.rectgt_recadv.has_value());
  CHECK(*t.rectgt_recadv <= 1.0);

  MsssimTriple no_tgt = msssim_triple(x, x, std::nullopt, recon, cfg);
  CHECK_FALSE(no_tgt.rectgt_recadv.has_value());
}

TEST_CASE("anomaly curves have length levels+1 and anchor at h_elbo") {
  HierarchicalVae m = HierarchicalVae::init(HierVaeSpec::desk_default(2), 47);
  DatasetSplit data = make_synthetic("shapes", 6, 49);
  std::vector<std::pair<std::string, Tensor>> batches = {{"reference", data.images}};
  const int num_seeds = 2;
  const std::uint64_t seed = 51;
  AnomalyCurves curves = elbo_above_k_curves(m, batches, num_seeds, seed);
  REQUIRE(curves.labels.size() == 1);
  REQUIRE(curves.curves[0].size() == 3);

  double expect = 0.0;
  for (int s = 0; s < num_seeds; ++s) {
    std::uint64_t eval_seed = derive_seed(seed, "curve-reference", static_cast<std::uint64_t>(s));
    expect += -m.h_elbo(data.images, eval_seed).total.item();
  }
  expect /= num_seeds;
  CHECK(curves.curves[0][0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("reports aggregate per-pair rows and serialize deterministically") {
  VaeModel m = VaeModel::init(VaeSpec::desk_affine({1, 28, 28}, 32, 4), 53);
  VaeModel frozen = m.frozen_copy();
  DatasetSplit data = make_synthetic("shapes", 10, 55);

  std::vector<AttackItem> items = {{0, 1, -1}, {2, 3, -1}, {4, 9999, -1}};
  AttackConfig cfg;
  cfg.steps = 5;
  cfg.budget = 1.0;
  std::vector<AttackResult> results = attack_batch(frozen, data.images, items, cfg, 57, 1);

  ReportMeta meta;
  meta.run_id = "testrun";
  meta.mode = "supervised";
  meta.beta = 1.0;
  meta.steps = cfg.steps;
  MetricsReport rep = build_report(
      frozen, results, [&](const Tensor& x) { return frozen.reconstruct_mean(x); },
      MsssimConfig(), meta);

  REQUIRE(rep.rows.size() == 3);  // failures included as rows
  CHECK(rep.rows[2].status == "error");
  CHECK(rep.omega.per_pair.size() == 2);
  double mean = (rep.rows[0].skl_latent_shift + rep.rows[1].skl_latent_shift) / 2.0;
  CHECK(rep.omega.per_pair_mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(rep.mean_msssim_ref_adv ==
        doctest::Approx((*rep.rows[0].msssim_ref_adv + *rep.rows[1].msssim_ref_adv) / 2.0)
            .epsilon(1e-12));

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "vaeatk_metrics_test";
  fs::create_directories(dir);
  std::string p1 = (dir / "m1.csv").string();
  std::string p2 = (dir / "m2.csv").string();
  write_metrics_csv(p1, rep.rows);
  write_metrics_csv(p2, rep.rows);
  std::string c1 = slurp(p1);
  CHECK(c1 == slurp(p2));
  CHECK(c1.find("run_id,mode,beta,k_A,ref_id,target_id,init_id,epsilon_norm,skl,") == 0);
  CHECK(c1.find("testrun,supervised,1,0,0,1,-1,") != std::string::npos);
  CHECK(c1.find(",error,") != std::string::npos);

  std::string js = summary_json(rep);
  CHECK(js.find("\"omega_sum\"") != std::string::npos);
  CHECK(js.find("\"msssim_ref_adv\"") != std::string::npos);
}
