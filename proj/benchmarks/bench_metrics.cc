#include <benchmark/benchmark.h>

#include "vaeatk/dataset.hpp"
#include "vaeatk/gauss.hpp"
#include "vaeatk/msssim.hpp"
#include "vaeatk/rng.hpp"

namespace {

void BM_Msssim28(benchmark::State& state) {
  vaeatk::DatasetSplit data = vaeatk::make_synthetic("shapes", 2, 9);
  vaeatk::Tensor a = data.image(0);
  vaeatk::Tensor b = data.image(1);
  vaeatk::MsssimConfig cfg = vaeatk::MsssimConfig().adapted_for(28, 28);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vaeatk::msssim(a, b, cfg));
  }
}
BENCHMARK(BM_Msssim28);

void BM_Msssim256(benchmark::State& state) {
  std::vector<double> av(256 * 256), bv(256 * 256);
  vaeatk::Rng rng(13);
  rng.fill_uniform(av, 0.0, 1.0);
  rng.fill_uniform(bv, 0.0, 1.0);
  vaeatk::Tensor a = vaeatk::Tensor::from_data({256, 256}, std::move(av));
  vaeatk::Tensor b = vaeatk::Tensor::from_data({256, 256}, std::move(bv));
  vaeatk::MsssimConfig cfg;  // full five scales fit at this size
  for (auto _ : state) {
    benchmark::DoNotOptimize(vaeatk::msssim(a, b, cfg));
  }
}
BENCHMARK(BM_Msssim256);

void BM_KlClosedForm(benchmark::State& state) {
  std::vector<double> mp(64), lp(64), mq(64), lq(64);
  vaeatk::Rng rng(17);
  rng.fill_uniform(mp, -1.0, 1.0);
  rng.fill_uniform(lp, -1.0, 1.0);
  rng.fill_uniform(mq, -1.0, 1.0);
  rng.fill_uniform(lq, -1.0, 1.0);
  vaeatk::DiagGaussian p(vaeatk::Tensor::from_data({64}, mp),
                         vaeatk::Tensor::from_data({64}, lp));
  vaeatk::DiagGaussian q(vaeatk::Tensor::from_data({64}, mq),
                         vaeatk::Tensor::from_data({64}, lq));
  for (auto _ : state) {
    benchmark::DoNotOptimize(vaeatk::kl_diag(p, q).item());
  }
}
BENCHMARK(BM_KlClosedForm);

}  // namespace
