#include <benchmark/benchmark.h>

#include "vaeatk/attacks.hpp"
#include "vaeatk/dataset.hpp"
#include "vaeatk/vae.hpp"

namespace {

struct AttackFixture {
  AttackFixture()
      : data(vaeatk::make_synthetic("shapes", 8, 5)),
        model(vaeatk::VaeModel::init(vaeatk::VaeSpec::desk_default(16), 3).frozen_copy()) {}
  vaeatk::DatasetSplit data;
  vaeatk::VaeModel model;
};

AttackFixture& fixture() {
  static AttackFixture f;
  return f;
}

void BM_SupervisedAttackSteps(benchmark::State& state) {
  AttackFixture& f = fixture();
  vaeatk::AttackConfig cfg;
  cfg.steps = static_cast<int>(state.range(0));
  cfg.budget = 2.0;
  for (auto _ : state) {
    vaeatk::AttackResult r =
        vaeatk::supervised_attack(f.model, f.data.image(0), f.data.image(1), cfg);
    benchmark::DoNotOptimize(r.final_objective);
  }
  state.SetItemsProcessed(state.iterations() * cfg.steps);
}
BENCHMARK(BM_SupervisedAttackSteps)->Arg(8)->Arg(32);

void BM_JacobianMu(benchmark::State& state) {
  AttackFixture& f = fixture();
  for (auto _ : state) {
    vaeatk::Tensor jac = vaeatk::jacobian_mu(f.model, f.data.image(0));
    benchmark::DoNotOptimize(jac.data().data());
  }
}
BENCHMARK(BM_JacobianMu);

void BM_UnsupervisedPowerIteration(benchmark::State& state) {
  AttackFixture& f = fixture();
  vaeatk::AttackConfig cfg;
  cfg.mode = vaeatk::AttackMode::Unsupervised;
  cfg.budget = 1.0;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    cfg.seed = ++seed;
    vaeatk::AttackResult r = vaeatk::unsupervised_attack(f.model, f.data.image(0), cfg);
    benchmark::DoNotOptimize(r.final_objective);
  }
}
BENCHMARK(BM_UnsupervisedPowerIteration);

}  // namespace
