// Microbenchmarks for the compute-heavy building blocks: wavelet transforms,
// a full model forward pass (eval and train+backward), and window gathering.
#include <benchmark/benchmark.h>

#include "wpmixer/data.hpp"
#include "wpmixer/model.hpp"
#include "wpmixer/tape.hpp"
#include "wpmixer/training.hpp"
#include "wpmixer/wavelet.hpp"

namespace {

using namespace wpmixer;

Tensor random_series(int64_t b, int64_t c, int64_t l, uint64_t seed) {
  Rng rng(seed);
  Tensor x({b, c, l});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

void BM_DwtDecompose(benchmark::State& state) {
  const FilterBank fb = filter_bank("db2");
  const Tensor x = random_series(32, 7, 512, 1);
  for (auto _ : state) {
    Tape t;
    auto coeffs = decompose(t, t.leaf(x), fb, 2);
    benchmark::DoNotOptimize(coeffs);
  }
}
BENCHMARK(BM_DwtDecompose);

void BM_DwtRoundTrip(benchmark::State& state) {
  const FilterBank fb = filter_bank("db2");
  const Tensor x = random_series(32, 7, 512, 1);
  for (auto _ : state) {
    Tape t;
    auto coeffs = decompose(t, t.leaf(x), fb, 2);
    Val back = reconstruct(t, coeffs, fb, 512);
    benchmark::DoNotOptimize(back);
  }
}
BENCHMARK(BM_DwtRoundTrip);

ModelConfig bench_model_config() {
  ModelConfig mc;
  mc.channels = 7;
  mc.lookback = 512;
  mc.horizon = 96;
  mc.wavelet = "db2";
  mc.level = 2;
  mc.patch_len = 16;
  mc.stride = 8;
  mc.embed_dim = 32;  // scaled-down embedding so one iteration stays in the ms range
  mc.t_factor = 5;
  mc.d_factor = 8;
  return mc;
}

void BM_ModelForwardEval(benchmark::State& state) {
  WPMixerModel model(bench_model_config(), 42);
  const Tensor x = random_series(state.range(0), 7, 512, 2);
  Rng drop(1);
  for (auto _ : state) {
    Tape t;
    Val out = model.forward(t, t.leaf(x), Mode::eval, drop);
    benchmark::DoNotOptimize(out);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelForwardEval)->Arg(8)->Arg(32);

void BM_ModelTrainStep(benchmark::State& state) {
  WPMixerModel model(bench_model_config(), 42);
  const Tensor x = random_series(state.range(0), 7, 512, 2);
  const Tensor y = random_series(state.range(0), 7, 96, 3);
  Rng drop(1);
  for (auto _ : state) {
    Tape t;
    Val pred = model.forward(t, t.leaf(x), Mode::train, drop);
    Val loss = loss_node(t, LossKind::smooth_l1, pred, t.leaf(y), 1.0);
    t.backward(loss, 1.0);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelTrainStep)->Arg(8)->Arg(32);

void BM_GatherWindows(benchmark::State& state) {
  SeriesTable table;
  table.columns = {"a", "b", "c", "d", "e", "f", "g"};
  table.values = random_series(1, 1, 20000 * 7, 4).reshaped({20000, 7});
  table.timestamps.resize(20000);
  SplitSpec split{18000, 1000, 1000, false};
  auto idx = window_indices(20000, split, 512, 96, Part::train);
  Tensor x, y;
  for (auto _ : state) {
    gather_windows(table, idx, 0, 256, 512, 96, &x, &y);
    benchmark::DoNotOptimize(x);
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_GatherWindows);

}  // namespace

BENCHMARK_MAIN();
