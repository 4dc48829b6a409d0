#include <benchmark/benchmark.h>

#include "vaeatk/autodiff.hpp"
#include "vaeatk/hiervae.hpp"
#include "vaeatk/vae.hpp"

namespace {

vaeatk::Tensor random_batch(std::int64_t n, std::uint64_t seed) {
  std::vector<double> v(static_cast<std::size_t>(n) * 28 * 28);
  vaeatk::Rng rng(seed);
  rng.fill_uniform(v, 0.0, 1.0);
  return vaeatk::Tensor::from_data({n, 1, 28, 28}, std::move(v));
}

void BM_ElboForwardBackward(benchmark::State& state) {
  std::int64_t batch = state.range(0);
  vaeatk::VaeModel model = vaeatk::VaeModel::init(vaeatk::VaeSpec::desk_default(16), 7);
  vaeatk::Tensor x = random_batch(batch, 11);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    vaeatk::ElboParts parts = model.elbo_seeded(x, ++seed);
    vaeatk::GradientMap grads = vaeatk::backward(vaeatk::neg(parts.total));
    benchmark::DoNotOptimize(grads.size());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ElboForwardBackward)->Arg(1)->Arg(32)->Arg(128);

void BM_HierElbo(benchmark::State& state) {
  vaeatk::HierarchicalVae model =
      vaeatk::HierarchicalVae::init(vaeatk::HierVaeSpec::desk_default(2), 13);
  vaeatk::Tensor x = random_batch(32, 17);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    vaeatk::HierElboParts parts = model.h_elbo(x, ++seed);
    benchmark::DoNotOptimize(parts.total.item());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_HierElbo);

void BM_NllImportance(benchmark::State& state) {
  vaeatk::VaeModel model =
      vaeatk::VaeModel::init(vaeatk::VaeSpec::desk_affine({1, 28, 28}, 64, 8), 19);
  vaeatk::Tensor batch = random_batch(1, 23);
  std::vector<double> img(batch.data().begin(), batch.data().end());
  vaeatk::Tensor x = vaeatk::Tensor::from_data({1, 28, 28}, std::move(img));
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.nll_importance(x, static_cast<int>(state.range(0)), 3));
  }
}
BENCHMARK(BM_NllImportance)->Arg(16)->Arg(64);

}  // namespace
