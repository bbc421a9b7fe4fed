#include <benchmark/benchmark.h>

#include "evomoe/epsim.hpp"
#include "evomoe/gating.hpp"
#include "evomoe/moe_layer.hpp"
#include "evomoe/nn.hpp"
#include "evomoe/trainer.hpp"

using namespace evomoe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool param = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = normal(rng, 0.0, 1.0);
  return param ? Tensor::parameter(std::move(shape), std::move(v)) : Tensor::constant(std::move(shape), std::move(v));
}

void BM_Matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : st) benchmark::DoNotOptimize(matmul(a, b));
  st.SetItemsProcessed(st.iterations() * 2 * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_CausalMultiHead(benchmark::State& st) {
  const auto seq = static_cast<std::size_t>(st.range(0));
  const std::size_t d = 64, batch = 8;
  Rng rng(2);
  const Tensor x = random_tensor({batch * seq, d}, rng);
  const AttentionWeights w{random_tensor({d, d}, rng), random_tensor({d, d}, rng), random_tensor({d, d}, rng),
                           random_tensor({d, d}, rng)};
  for (auto _ : st) benchmark::DoNotOptimize(multi_head(x, x, x, w, 4, seq, true));
}
BENCHMARK(BM_CausalMultiHead)->Arg(16)->Arg(64);

void BM_DtsGateAndMoe(benchmark::State& st) {
  const auto experts = static_cast<std::size_t>(st.range(0));
  const std::size_t tokens = 128, d = 64, dff = 256;
  Rng rng(3);
  const Tensor x = random_tensor({tokens, d}, rng);
  GateParams gate;
  gate.w_g = random_tensor({d, experts}, rng, true);
  gate.threshold = 0.001;
  const Expert shared = Expert::init(d, dff, rng);
  const auto spawned = spawn_diverse(shared, experts, 0.1, 7);
  Rng noise(4);
  for (auto _ : st) {
    const auto decision = dts_gate(x, gate, 1.0, 0, 1, &noise);  // Top-1 branch
    benchmark::DoNotOptimize(moe_forward(x, decision, spawned));
  }
}
BENCHMARK(BM_DtsGateAndMoe)->Arg(4)->Arg(16);

void BM_TrainStep(benchmark::State& st) {
  ModelConfig cfg;
  cfg.shared_iters = st.range(0) ? 0 : cfg.shared_iters;
  cfg.dense_iters = st.range(0) ? 0 : cfg.dense_iters;
  cfg.decay_iters = st.range(0) ? 0 : cfg.decay_iters;
  TrainState state = init_state(cfg);
  for (auto _ : st) {
    if (state.iteration >= cfg.total_iters) state.iteration = cfg.total_iters - 1;
    benchmark::DoNotOptimize(train_step(state));
  }
  st.SetLabel(st.range(0) ? "sparse top-1" : "shared phase");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_HierarchicalSim(benchmark::State& st) {
  Topology t;
  t.nodes = static_cast<std::size_t>(st.range(0));
  const auto a = Assignment::uniform(t.workers(), 32, 512);
  for (auto _ : st) benchmark::DoNotOptimize(simulate_time(plan_hierarchical(a, t), t));
}
BENCHMARK(BM_HierarchicalSim)->Arg(2)->Arg(8);

}  // namespace
BENCHMARK_MAIN();
