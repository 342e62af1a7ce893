#include <benchmark/benchmark.h>

#include <vector>

#include "mimlab/data.hpp"
#include "mimlab/losses.hpp"
#include "mimlab/model.hpp"
#include "mimlab/ops.hpp"
#include "mimlab/optim.hpp"
#include "mimlab/tokenizer.hpp"
#include "mimlab/train.hpp"

using namespace mimlab;

namespace {

Tensor randn(Shape shape, uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  Rng rng(seed);
  for (auto& x : t.f32_mut()) x = static_cast<float>(rng.normal());
  return t;
}

void BM_Matmul(benchmark::State& state) {
  int64_t n = state.range(0);
  Tensor a = randn({n, n}, 1), b = randn({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(nullptr, a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Gelu(benchmark::State& state) {
  Tensor x = randn({256, 256}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(ops::gelu(nullptr, x));
  state.SetItemsProcessed(state.iterations() * 256 * 256);
}
BENCHMARK(BM_Gelu);

void BM_Softmax(benchmark::State& state) {
  Tensor x = randn({256, 256}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(ops::softmax(nullptr, x));
  state.SetItemsProcessed(state.iterations() * 256 * 256);
}
BENCHMARK(BM_Softmax);

void BM_LayerNorm(benchmark::State& state) {
  Tensor x = randn({256, 256}, 5);
  Tensor g = Tensor::zeros({256}), b = Tensor::zeros({256});
  for (auto& v : g.f32_mut()) v = 1.0f;
  for (auto _ : state) benchmark::DoNotOptimize(ops::layernorm(nullptr, x, g, b, 1e-6));
  state.SetItemsProcessed(state.iterations() * 256 * 256);
}
BENCHMARK(BM_LayerNorm);

void BM_Tokenize(benchmark::State& state) {
  Vocabulary v = build_random_projection(512, 192, 7);
  Tensor patches = randn({1024, 192}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(tokenize_rows(patches, v));
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_Tokenize);

ModelConfig bench_mc() {
  ModelConfig mc;
  mc.patch_size = 8;
  mc.image_size = 32;
  mc.embed_dim = 64;
  mc.encoder_depth = 4;
  mc.decoder_depth = 2;
  mc.num_heads = 4;
  mc.mlp_ratio = 4;
  mc.vocab_size = 64;
  return mc;
}

void BM_EncoderForward(benchmark::State& state) {
  ModelConfig mc = bench_mc();
  Model model(mc, 1);
  int64_t B = 8;
  Tensor patches = randn({B * mc.n_patches(), mc.patch_dim()}, 7);
  for (auto _ : state)
    benchmark::DoNotOptimize(model.features_at_layer(nullptr, patches, B, mc.encoder_depth));
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_EncoderForward);

void BM_SplitMaskStep(benchmark::State& state) {
  ModelConfig mc = bench_mc();
  Model model(mc, 1);
  Vocabulary vocab = build_random_projection(mc.vocab_size, mc.patch_dim(), 7);
  int64_t B = 8;
  Tensor patches = randn({B * mc.n_patches(), mc.patch_dim()}, 8);
  MaskSpec mspec;
  AdamW opt;
  uint64_t draw = 0;
  for (auto _ : state) {
    std::vector<MaskPlan> plans;
    plans.reserve(static_cast<size_t>(B));
    for (int64_t i = 0; i < B; ++i) {
      Rng rng(mix_seed_str(9, "bench", ++draw));
      plans.push_back(draw_mask(mspec, mc.grid_side(), mc.grid_side(), rng));
    }
    Tape tape;
    SplitForward fwd = model.forward_splitmask(&tape, patches, plans, vocab);
    LossBreakdown lb = total_loss(&tape, fwd.a, fwd.b, fwd.targets, 0.2, 1.0, 1.0);
    tape.backward(lb.total);
    opt.step(model.params(), tape, 1e-4, 0.05);
    benchmark::DoNotOptimize(lb.total.item());
  }
  state.SetItemsProcessed(state.iterations() * B);
}
BENCHMARK(BM_SplitMaskStep);

}  // namespace

BENCHMARK_MAIN();
