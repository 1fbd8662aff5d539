#include <benchmark/benchmark.h>

#include <random>

#include "prunecert/attack.hpp"
#include "prunecert/cert.hpp"
#include "prunecert/envs.hpp"
#include "prunecert/policy.hpp"
#include "prunecert/prune.hpp"
#include "prunecert/rl.hpp"
#include "prunecert/rng.hpp"

using namespace prunecert;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = uniform_range(rng, -1.0, 1.0);
  return m;
}

PolicyNetwork bench_net(std::size_t hidden) {
  std::mt19937_64 rng(7);
  std::vector<std::size_t> h{hidden, hidden};
  return make_mlp_policy(4, 2, h, Activation::kTanh, HeadFamily::kGaussian, 0.1, rng);
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, rng);
  const Matrix b = random_matrix(n, n, rng);
  for (auto _ : state) {
    Matrix c = matmul(a, b);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256)->Complexity();

static void BM_SurrogateLipschitz(benchmark::State& state) {
  PolicyNetwork net = bench_net(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(surrogate_lipschitz(net));
  }
}
BENCHMARK(BM_SurrogateLipschitz)->Arg(64)->Arg(256);

static void BM_InputJacobian(benchmark::State& state) {
  PolicyNetwork net = bench_net(static_cast<std::size_t>(state.range(0)));
  const std::vector<double> s{0.1, -0.2, 0.3, 0.0};
  for (auto _ : state) {
    Matrix j = input_jacobian(net, s);
    benchmark::DoNotOptimize(j.data.data());
  }
}
BENCHMARK(BM_InputJacobian)->Arg(64)->Arg(256);

static void BM_MadAttackStep(benchmark::State& state) {
  PolicyNetwork net = bench_net(64);
  AttackSpec spec;
  spec.family = AttackFamily::kMad;
  spec.epsilon = 0.075;
  spec.pgd_steps = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  const std::vector<double> s{0.4, -0.4, 0.1, 0.0};
  for (auto _ : state) {
    auto sh = mad_attack(net, s, spec, rng);
    benchmark::DoNotOptimize(sh.data());
  }
}
BENCHMARK(BM_MadAttackStep)->Arg(1)->Arg(10);

static void BM_PruneStep(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const std::size_t h = static_cast<std::size_t>(state.range(0));
  std::vector<Matrix> weights{random_matrix(h, 4, rng), random_matrix(h, h, rng),
                              random_matrix(2, h, rng)};
  std::vector<const Matrix*> views;
  for (const Matrix& w : weights) views.push_back(&w);
  PruneConfig cfg;
  cfg.criterion = PruneCriterion::kMagnitude;
  cfg.target_sparsity = 0.9;
  for (auto _ : state) {
    PruneState ps = PruneState::init(cfg, views);
    prune_step(ps, views, {}, 1, 1);
    benchmark::DoNotOptimize(ps.masks.data());
  }
}
BENCHMARK(BM_PruneStep)->Arg(64)->Arg(256);

static void BM_PpoMinibatchStep(benchmark::State& state) {
  auto env = make_point_mass();
  PpoConfig cfg;
  cfg.total_steps = 2048;
  cfg.num_envs = 2;
  cfg.rollout_len = 32;
  cfg.update_epochs = 1;
  cfg.minibatches = 2;
  cfg.hidden_sizes = {static_cast<std::size_t>(state.range(0)),
                      static_cast<std::size_t>(state.range(0))};
  PruneConfig pcfg;
  for (auto _ : state) {
    TrainResult r = train_ppo(*env, cfg, pcfg);
    benchmark::DoNotOptimize(r.metrics.data());
  }
}
BENCHMARK(BM_PpoMinibatchStep)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
