#include <benchmark/benchmark.h>

#include "tica/adapt.hpp"
#include "tica/data.hpp"
#include "tica/geometry.hpp"
#include "tica/losses.hpp"
#include "tica/runtime.hpp"

namespace {

using namespace tica;

ModelConfig bench_model() {
  ModelConfig cfg;
  cfg.widths = {8, 16, 32, 64};
  cfg.decoder_width = 8;
  return cfg;
}

Tensor4<float> random_tensor(Rng& rng, int n, int h, int w, int c) {
  Tensor4<float> t(n, h, w, c);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  const auto x = random_tensor(rng, 4, 64, 64, c);
  std::vector<float> w(9 * c * c);
  for (auto& v : w) v = static_cast<float>(0.1 * rng.normal());
  const layers::ConvSpec<float> spec{3, c, c, w.data(), nullptr};
  layers::ConvCache<float> cache;
  for (auto _ : state) benchmark::DoNotOptimize(layers::conv_forward(x, spec, cache));
  state.SetItemsProcessed(state.iterations() * 4 * 64 * 64 * 9 * c * c);
}
BENCHMARK(BM_ConvForward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(2);
  std::vector<float> w(9 * c * c), dw(w.size());
  for (auto& v : w) v = static_cast<float>(0.1 * rng.normal());
  const layers::ConvSpec<float> spec{3, c, c, w.data(), nullptr};
  layers::ConvCache<float> cache;
  const auto y = layers::conv_forward(random_tensor(rng, 4, 64, 64, c), spec, cache);
  const auto dy = random_tensor(rng, y.n, y.h, y.w, y.c);
  for (auto _ : state) benchmark::DoNotOptimize(layers::conv_backward(dy, spec, dw.data(), static_cast<float*>(nullptr), cache, true));
}
BENCHMARK(BM_ConvBackward)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ModelInfer(benchmark::State& state) {
  Rng rng(3);
  const Model model(bench_model(), rng);
  const auto x = random_tensor(rng, 4, 128, 128, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.infer(x));
}
BENCHMARK(BM_ModelInfer)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  Rng rng(4);
  Model model(bench_model(), rng);
  const auto x = random_tensor(rng, 4, 128, 128, 3);
  Tensor4<float> g(4, 128, 128, 1, 1e-3f);
  for (auto _ : state) {
    const auto cache = model.forward(x, Mode::Train);
    model.store().zero_grad();
    benchmark::DoNotOptimize(model.backward(cache, g));
  }
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

void BM_TicaLoss(benchmark::State& state) {
  Rng rng(5);
  const Size2 canon{128, 128};
  const auto cfg = AugmentConfig::defaults(canon);
  const auto t1 = sample_view_transform(rng, cfg), t2 = sample_view_transform(rng, cfg);
  ShadowMask p1(cfg.output_size), p2(cfg.output_size);
  for (std::size_t i = 0; i < p1.size(); ++i) p1[i] = rng.uniform(), p2[i] = rng.uniform();
  for (auto _ : state) {
    const auto c1 = to_canonical(p1, t1), c2 = to_canonical(p2, t2);
    const auto loss = tica_loss(c1, c2, LossWeights{});
    benchmark::DoNotOptimize(to_canonical_backward(loss.total.grad_y1, t1));
    benchmark::DoNotOptimize(to_canonical_backward(loss.total.grad_y2, t2));
  }
}
BENCHMARK(BM_TicaLoss)->Unit(benchmark::kMicrosecond);

void BM_TicaEpoch(benchmark::State& state) {
  Rng rng(6);
  const Model base(bench_model(), rng);
  SynthConfig sc;
  std::vector<ImageTensor> images;
  for (int i = 0; i < 8; ++i) images.push_back(generate_sample(sc, "test", i).image);
  AdaptConfig ac;
  ac.epochs = 1;
  for (auto _ : state) {
    Model m = base;
    benchmark::DoNotOptimize(adapt(m, images, ac));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(images.size()));
}
BENCHMARK(BM_TicaEpoch)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  tica::tune_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
