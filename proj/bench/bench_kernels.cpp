#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "platesym/kernels.hpp"
#include "platesym/models.hpp"
#include "platesym/signals.hpp"

using namespace platesym;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

// First halving block of a full-scale equivariant model: 16 channels x 8 group
// elements, kernel spanning the 158-sample input.
kernels::Conv1dShape block_shape(std::int64_t batch) {
  kernels::Conv1dShape s;
  s.batch = static_cast<std::size_t>(batch);
  s.in_channels = 128;
  s.in_len = 158;
  s.out_channels = 128;
  s.kernel = 158;
  s.stride = 2;
  s.padding = 78;
  return s;
}

template <bool Reference>
void BM_Conv1dForward(benchmark::State& st) {
  const auto s = block_shape(st.range(0));
  const auto x = noise(s.batch * s.in_channels * s.in_len, 1);
  const auto w = noise(s.out_channels * s.in_channels * s.kernel, 2);
  std::vector<double> y(s.batch * s.out_channels * s.out_len());
  for (auto _ : st) {
    if constexpr (Reference) kernels::conv1d_forward_reference(s, x, w, y);
    else kernels::conv1d_forward(s, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.batch));
}

template <bool Reference>
void BM_Conv1dBackward(benchmark::State& st) {
  const auto s = block_shape(st.range(0));
  const auto x = noise(s.batch * s.in_channels * s.in_len, 1);
  const auto w = noise(s.out_channels * s.in_channels * s.kernel, 2);
  const auto dy = noise(s.batch * s.out_channels * s.out_len(), 3);
  std::vector<double> dx(x.size()), dw(w.size());
  for (auto _ : st) {
    if constexpr (Reference) kernels::conv1d_backward_reference(s, x, w, dy, dx, dw);
    else kernels::conv1d_backward(s, x, w, dy, dx, dw);
    benchmark::DoNotOptimize(dx.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.batch));
}

template <bool Reference>
void BM_MatmulNT(benchmark::State& st) {
  const std::size_t rows = static_cast<std::size_t>(st.range(0)) * 8, inner = 16 * 5, cols = 128;
  const auto x = noise(rows * inner, 4);
  const auto w = noise(cols * inner, 5);
  std::vector<double> y(rows * cols);
  for (auto _ : st) {
    if constexpr (Reference) kernels::matmul_nt_reference(rows, inner, cols, x, w, y);
    else kernels::matmul_nt(rows, inner, cols, x, w, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_Synthesize(benchmark::State& st) {
  signals::SynthConfig cfg;
  cfg.plate.grid_points = 5;
  cfg.plate.baselines = 2;
  const bool parallel = st.range(0) != 0;
  for (auto _ : st) benchmark::DoNotOptimize(signals::synthesize_dataset(cfg, parallel).damaged.data());
}

void BM_Predict(benchmark::State& st) {
  const models::Model model(models::ModelSpec::full_scale(models::Variant::exact, models::Task::locate));
  const auto x = noise(static_cast<std::size_t>(st.range(0)) * 16 * 158, 6);
  for (auto _ : st) benchmark::DoNotOptimize(model.predict(x, static_cast<std::size_t>(st.range(0))).data());
}

}  // namespace

BENCHMARK(BM_Conv1dForward<true>)->Name("conv1d_forward/reference")->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv1dForward<false>)->Name("conv1d_forward/parallel")->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv1dBackward<true>)->Name("conv1d_backward/reference")->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv1dBackward<false>)->Name("conv1d_backward/parallel")->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatmulNT<true>)->Name("matmul_nt/reference")->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulNT<false>)->Name("matmul_nt/parallel")->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Synthesize)->Name("synthesize_dataset/serial")->Arg(0)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Synthesize)->Name("synthesize_dataset/parallel")->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Predict)->Name("predict/full_scale_exact")->Arg(32)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
