#include <benchmark/benchmark.h>

#include "vaeatk/autodiff.hpp"
#include "vaeatk/ops.hpp"
#include "vaeatk/rng.hpp"

namespace {

vaeatk::Tensor random_tensor(vaeatk::Shape shape, std::uint64_t seed, bool grad = false) {
  std::vector<double> v(static_cast<std::size_t>(vaeatk::numel(shape)));
  vaeatk::Rng rng(seed);
  rng.fill_uniform(v, -1.0, 1.0);
  return vaeatk::Tensor::from_data(std::move(shape), std::move(v), grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  std::int64_t batch = state.range(0);
  vaeatk::Tensor x = random_tensor({batch, 8, 14, 14}, 1);
  vaeatk::Tensor w = random_tensor({16, 8, 3, 3}, 2);
  vaeatk::Tensor b = random_tensor({16}, 3);
  for (auto _ : state) {
    vaeatk::Tensor y = vaeatk::conv2d(x, w, b, 2, 1);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(16)->Arg(64);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  std::int64_t batch = state.range(0);
  vaeatk::Tensor x = random_tensor({batch, 8, 14, 14}, 1, true);
  vaeatk::Tensor w = random_tensor({16, 8, 3, 3}, 2, true);
  vaeatk::Tensor b = random_tensor({16}, 3, true);
  for (auto _ : state) {
    vaeatk::Tensor loss = vaeatk::sum(vaeatk::conv2d(x, w, b, 2, 1));
    vaeatk::GradientMap grads = vaeatk::backward(loss);
    benchmark::DoNotOptimize(grads.at(w).data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(1)->Arg(16)->Arg(64);

void BM_AffineForwardBackward(benchmark::State& state) {
  vaeatk::Tensor x = random_tensor({64, 784}, 1);
  vaeatk::Tensor w = random_tensor({128, 784}, 2, true);
  vaeatk::Tensor b = random_tensor({128}, 3, true);
  for (auto _ : state) {
    vaeatk::Tensor loss = vaeatk::sum(vaeatk::sigmoid(vaeatk::affine(x, w, b)));
    vaeatk::GradientMap grads = vaeatk::backward(loss);
    benchmark::DoNotOptimize(grads.at(w).data());
  }
}
BENCHMARK(BM_AffineForwardBackward);

}  // namespace
