// Microbenchmarks for the hot paths: the high-pass residual, both losses,
// and encoder/decoder forward passes at a reduced working resolution.

#include "vilocal/decoder.hpp"
#include "vilocal/encoder.hpp"
#include "vilocal/hp3d.hpp"
#include "vilocal/objectives.hpp"
#include "vilocal/rng.hpp"

#include <benchmark/benchmark.h>

using namespace vilocal;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    Tensor x = Tensor::uninitialized(shape);
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(lo, hi);
    return x;
}

void bm_hp3d_residual(benchmark::State& state) {
    const int h = static_cast<int>(state.range(0));
    const int w = h * 9 / 5;
    Tensor frames = random_tensor({5, h, w, 3}, 1, 0.0, 1.0);
    Hp3dKernel k = Hp3dKernel::laplacian();
    for (auto _ : state) benchmark::DoNotOptimize(hp3d_residual(frames, k));
    state.SetItemsProcessed(state.iterations() * frames.size());
}
BENCHMARK(bm_hp3d_residual)->Arg(120)->Arg(240);

void bm_contrastive_loss(benchmark::State& state) {
    const int per_class = static_cast<int>(state.range(0));
    Tensor emb = random_tensor({64 * 64, 32}, 2);
    Rng rng(3);
    Tensor mask = Tensor::uninitialized({64, 64});
    for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    ContrastiveConfig cfg;
    cfg.samples_per_class = per_class;
    PixelSampleBatch batch = sample_pixel_embeddings(emb, mask, cfg, 4);
    for (auto _ : state) {
        Var loss = contrastive_loss(constant(emb), batch, cfg);
        benchmark::DoNotOptimize(loss->value[0]);
    }
}
BENCHMARK(bm_contrastive_loss)->Arg(64)->Arg(256);

void bm_focal_loss(benchmark::State& state) {
    const int h = static_cast<int>(state.range(0));
    Tensor probs = random_tensor({h, h}, 5, 0.01, 0.99);
    Tensor gt = Tensor::uninitialized({h, h});
    Rng rng(6);
    for (std::int64_t i = 0; i < gt.size(); ++i) gt[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    FocalConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(focal_loss_value(gt, probs, cfg));
    state.SetItemsProcessed(state.iterations() * gt.size());
}
BENCHMARK(bm_focal_loss)->Arg(120)->Arg(432);

void bm_encoder_forward(benchmark::State& state) {
    EncoderConfig cfg;
    cfg.in_h = static_cast<int>(state.range(0));
    cfg.in_w = cfg.in_h * 9 / 5;
    Encoder enc(cfg, 7);
    Tensor x = random_tensor({5, cfg.in_h, cfg.in_w, 3}, 8, -0.1, 0.1);
    for (auto _ : state) benchmark::DoNotOptimize(enc.encode_value(x));
}
BENCHMARK(bm_encoder_forward)->Unit(benchmark::kMillisecond)->Arg(120);

void bm_decoder_forward(benchmark::State& state) {
    const int hq = static_cast<int>(state.range(0));
    const int wq = hq * 9 / 5;
    DecoderConfig cfg;
    Decoder dec(cfg, 9);
    Tensor emb = random_tensor({hq * wq, cfg.embed_dim}, 10);
    for (auto _ : state) benchmark::DoNotOptimize(dec.decode_value(emb, hq, wq));
    state.SetItemsProcessed(state.iterations() * hq * wq * 16);
}
BENCHMARK(bm_decoder_forward)->Unit(benchmark::kMillisecond)->Arg(30)->Arg(60);

}  // namespace

BENCHMARK_MAIN();
