#include <benchmark/benchmark.h>

#include "heightformer/decoder.hpp"
#include "heightformer/encoder.hpp"
#include "heightformer/metrics.hpp"
#include "heightformer/model.hpp"

using namespace heightformer;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

ModelConfig reduced_model(int n_bins) {
  ModelConfig cfg;
  cfg.encoder.n_bins = n_bins;
  cfg.encoder.branch_channels = 64;
  cfg.encoder.conv_stem_width = 16;
  cfg.encoder.conv_stage_widths = {16, 32, 64};
  cfg.encoder.conv_stage_blocks = {1, 1, 1};
  cfg.encoder.swin_embed_dim = 32;
  cfg.encoder.swin_depths = {2, 2, 2};
  cfg.encoder.swin_heads = {2, 4, 8};
  cfg.encoder.window = 8;
  cfg.decoder.n_bins = n_bins;
  cfg.decoder.query_dim = 64;
  cfg.decoder.heads = 4;
  cfg.decoder.token_cap_side = 16;
  cfg.h_min = 0.0;
  cfg.h_max = 10.0;
  return cfg;
}

void BM_gemm(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = random_tensor(rng, {n, n});
  Tensor b = random_tensor(rng, {n, n});
  Tensor c({n, n});
  for (auto _ : state) {
    gemm(false, false, n, n, n, 1.0, a.data(), b.data(), 0.0, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_gemm)->Arg(128)->Arg(256)->Arg(512);

void BM_conv2d_forward(benchmark::State& state) {
  const int64_t hw = state.range(0);
  Rng rng(2);
  Tensor x = random_tensor(rng, {hw, hw, 32});
  Tensor w = random_tensor(rng, {3, 3, 32, 32}, -0.2, 0.2);
  Tensor b = random_tensor(rng, {32});
  for (auto _ : state) {
    Tape t;
    t.set_grad_enabled(false);
    Var y = conv2d(t.input(x), t.input(w), t.input(b), 1, 1);
    benchmark::DoNotOptimize(y.val().data());
  }
}
BENCHMARK(BM_conv2d_forward)->Arg(64)->Arg(128);

void BM_conv2d_train_step(benchmark::State& state) {
  const int64_t hw = state.range(0);
  Rng rng(3);
  ParamStore ps;
  Conv2d conv(ps, "conv", 16, 16, 3, 1, 1, rng);
  Tensor x = random_tensor(rng, {hw, hw, 16});
  for (auto _ : state) {
    Tape t;
    Var y = conv(t, t.input(x, true));
    Var loss = mean_all(mul(y, y));
    ps.zero_grads();
    t.backward(loss);
    benchmark::DoNotOptimize(loss.val()[0]);
  }
}
BENCHMARK(BM_conv2d_train_step)->Arg(64)->Arg(128);

void BM_window_attention(benchmark::State& state) {
  const int64_t hw = state.range(0);
  Rng rng(4);
  ParamStore ps;
  WindowAttention wa(ps, "wa", 64, 4, 8, rng);
  Tensor x = random_tensor(rng, {hw, hw, 64});
  for (auto _ : state) {
    Tape t;
    t.set_grad_enabled(false);
    Var y = wa(t, t.input(x), 4);
    benchmark::DoNotOptimize(y.val().data());
  }
}
BENCHMARK(BM_window_attention)->Arg(32)->Arg(64);

void BM_height_regression(benchmark::State& state) {
  const int64_t hw = state.range(0);
  Rng rng(5);
  Tensor bins = random_tensor(rng, {64});
  Tensor probs = random_tensor(rng, {hw, hw, 64});
  for (auto _ : state) {
    Tape t;
    t.set_grad_enabled(false);
    Var h = height_regression(t, t.input(bins), t.input(probs), 0.0, 30.0);
    benchmark::DoNotOptimize(h.val().data());
  }
}
BENCHMARK(BM_height_regression)->Arg(128)->Arg(256);

void BM_silog_loss(benchmark::State& state) {
  const int64_t hw = state.range(0);
  Rng rng(6);
  Tensor gt = random_tensor(rng, {hw, hw}, 1.0, 30.0);
  Tensor pred = random_tensor(rng, {hw, hw}, 1.0, 30.0);
  Tensor mask = Tensor::full({hw, hw}, 1.0);
  LossConfig cfg;
  for (auto _ : state) {
    Tape t;
    Var loss = silog_loss(t, t.input(pred, true), gt, mask, cfg);
    t.backward(loss);
    benchmark::DoNotOptimize(loss.val()[0]);
  }
}
BENCHMARK(BM_silog_loss)->Arg(256);

void BM_model_forward(benchmark::State& state) {
  const int64_t size = state.range(0);
  HeightFormerModel model(reduced_model(8), 1);
  Rng rng(7);
  Tensor img = random_tensor(rng, {size, size, 3}, 0.0, 1.0);
  for (auto _ : state) {
    auto pred = model.predict(img);
    benchmark::DoNotOptimize(pred.height_m.data());
  }
}
BENCHMARK(BM_model_forward)->Unit(benchmark::kMillisecond)->Arg(128)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
