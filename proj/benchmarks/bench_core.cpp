#include <benchmark/benchmark.h>

#include "korr/dynamics.hpp"
#include "korr/numeric.hpp"
#include "korr/ppo.hpp"

using namespace korr;

namespace {

void BM_Matmul(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(1);
  Matrix a(n, n), b(n, n);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (int i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_MlpForward(benchmark::State& state) {
  const int batch = int(state.range(0));
  Rng rng(2);
  const Mlp mlp = make_mlp({kStateDim, 256, 256, 48}, rng);
  Matrix x(kStateDim, batch);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(mlp_forward(mlp, x));
  }
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(64)->Arg(512);

void BM_MlpBackward(benchmark::State& state) {
  const int batch = int(state.range(0));
  Rng rng(3);
  const Mlp mlp = make_mlp({kStateDim, 256, 256, 48}, rng);
  Matrix x(kStateDim, batch), dy(48, batch);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (int i = 0; i < dy.size(); ++i) dy.data()[i] = rng.normal();
  for (auto _ : state) {
    MlpCache cache;
    mlp_forward(mlp, x, &cache);
    MlpGrads grads = zero_grads(mlp);
    benchmark::DoNotOptimize(mlp_backward(mlp, cache, dy, grads));
  }
}
BENCHMARK(BM_MlpBackward)->Arg(64)->Arg(512);

void BM_Gae(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(4);
  Vector rewards(n), values(n), dones = Vector::Zero(n);
  for (int t = 0; t < n; ++t) {
    rewards(t) = rng.uniform() < 0.02 ? 1.0 : 0.0;
    values(t) = rng.normal();
    if (rng.uniform() < 0.01) dones(t) = 1.0;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_gae(rewards, values, dones, 0.99, 0.95));
  }
}
BENCHMARK(BM_Gae)->Arg(200)->Arg(2000);

void BM_KoopmanLoss(benchmark::State& state) {
  const int n = int(state.range(0));
  Rng rng(5);
  KoopmanModel model =
      make_koopman(KoopmanConfig{}, Normalizer::identity(kStateDim), rng);
  TransitionBatch batch;
  batch.x.resize(kStateDim, n);
  batch.a.resize(kActionDim, n);
  batch.xn.resize(kStateDim, n);
  for (int i = 0; i < batch.x.size(); ++i) batch.x.data()[i] = rng.normal();
  for (int i = 0; i < batch.a.size(); ++i) batch.a.data()[i] = rng.normal();
  for (int i = 0; i < batch.xn.size(); ++i) batch.xn.data()[i] = rng.normal();
  for (auto _ : state) {
    KoopmanGrads grads = zero_koopman_grads(model);
    benchmark::DoNotOptimize(koopman_loss(model, batch, &grads));
  }
}
BENCHMARK(BM_KoopmanLoss)->Arg(512);

}  // namespace
