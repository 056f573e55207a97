// OpenMP im2col/GEMM kernels against the serial direct-loop reference.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "unirep/kernels.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

using unirep::kernels::ConvGeometry;

ConvGeometry geometry(int channels, int size) {
  ConvGeometry g;
  g.in_channels = channels;
  g.out_channels = channels;
  g.kernel = 3;
  g.pad = 1;
  g.in_h = size;
  g.in_w = size;
  return g;
}

constexpr int kBatch = 8;

void BM_GemmOmp(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  auto a = random_vec(static_cast<std::size_t>(n) * n, 1), b = random_vec(static_cast<std::size_t>(n) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : st) {
    unirep::kernels::gemm(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
  st.counters["threads"] = omp_get_max_threads();
}

void BM_GemmReference(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  auto a = random_vec(static_cast<std::size_t>(n) * n, 1), b = random_vec(static_cast<std::size_t>(n) * n, 2);
  std::vector<float> c(static_cast<std::size_t>(n) * n);
  for (auto _ : st) {
    unirep::reference::gemm(false, false, n, n, n, 1.0f, a.data(), b.data(), 0.0f, c.data());
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
}

void BM_ConvForwardOmp(benchmark::State& st) {
  const auto g = geometry(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  auto x = random_vec(static_cast<std::size_t>(kBatch) * g.in_channels * g.in_h * g.in_w, 3);
  auto w = random_vec(static_cast<std::size_t>(g.out_channels) * g.col_rows(), 4);
  auto bias = random_vec(static_cast<std::size_t>(g.out_channels), 5);
  std::vector<float> y(static_cast<std::size_t>(kBatch) * g.out_channels * g.col_cols());
  for (auto _ : st) {
    unirep::kernels::conv2d_forward(g, kBatch, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ConvForwardReference(benchmark::State& st) {
  const auto g = geometry(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  auto x = random_vec(static_cast<std::size_t>(kBatch) * g.in_channels * g.in_h * g.in_w, 3);
  auto w = random_vec(static_cast<std::size_t>(g.out_channels) * g.col_rows(), 4);
  auto bias = random_vec(static_cast<std::size_t>(g.out_channels), 5);
  std::vector<float> y(static_cast<std::size_t>(kBatch) * g.out_channels * g.col_cols());
  for (auto _ : st) {
    unirep::reference::conv2d_forward(g, kBatch, x, w, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_ConvBackwardOmp(benchmark::State& st) {
  const auto g = geometry(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  const std::size_t xs = static_cast<std::size_t>(kBatch) * g.in_channels * g.in_h * g.in_w;
  const std::size_t ys = static_cast<std::size_t>(kBatch) * g.out_channels * g.col_cols();
  auto x = random_vec(xs, 3), dy = random_vec(ys, 6);
  auto w = random_vec(static_cast<std::size_t>(g.out_channels) * g.col_rows(), 4);
  auto bias = random_vec(static_cast<std::size_t>(g.out_channels), 5);
  std::vector<float> y(ys), cols(static_cast<std::size_t>(kBatch) * g.col_rows() * g.col_cols()), dx(xs),
      dw(w.size()), db(bias.size());
  unirep::kernels::conv2d_forward(g, kBatch, x, w, bias, y, cols);
  for (auto _ : st) {
    unirep::kernels::conv2d_backward_data(g, kBatch, dy, w, dx);
    unirep::kernels::conv2d_backward_filter(g, kBatch, dy, cols, dw, db);
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& st) {
  const auto g = geometry(static_cast<int>(st.range(0)), static_cast<int>(st.range(1)));
  const std::size_t xs = static_cast<std::size_t>(kBatch) * g.in_channels * g.in_h * g.in_w;
  const std::size_t ys = static_cast<std::size_t>(kBatch) * g.out_channels * g.col_cols();
  auto x = random_vec(xs, 3), dy = random_vec(ys, 6);
  auto w = random_vec(static_cast<std::size_t>(g.out_channels) * g.col_rows(), 4);
  std::vector<float> dx(xs), dw(w.size()), db(static_cast<std::size_t>(g.out_channels));
  for (auto _ : st) {
    unirep::reference::conv2d_backward(g, kBatch, x, dy, w, dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmOmp)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_ConvForwardOmp)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_ConvForwardReference)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_ConvBackwardOmp)->Args({16, 32})->Args({32, 16});
BENCHMARK(BM_ConvBackwardReference)->Args({16, 32})->Args({32, 16});

BENCHMARK_MAIN();
