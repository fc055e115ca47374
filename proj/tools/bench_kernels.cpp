// Serial reference vs OpenMP kernel comparison at the tensor shapes the
// desk-scale transformer actually produces (batch 8, embed 64, 17 tokens).
#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "vitssp/kernels.hpp"
#include "vitssp/rng.hpp"

namespace {

using vitssp::Rng;
namespace kern = vitssp::kernels;

std::vector<double> randu(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <class Fn>
void bench_matmul(benchmark::State& state, Fn fn) {
    const int64_t m = state.range(0), k = state.range(1), n = state.range(2);
    const auto a = randu(m * k, 1), b = randu(k * n, 2);
    std::vector<double> c(static_cast<size_t>(m * n));
    for (auto _ : state) {
        fn(a.data(), b.data(), c.data(), m, k, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * m * k * n);
}

void BM_matmul_serial(benchmark::State& state) {
    bench_matmul(state, kern::serial::matmul<double>);
}
void BM_matmul_omp(benchmark::State& state) {
    bench_matmul(state, kern::omp::matmul<double>);
}

template <class Fn>
void bench_bmm(benchmark::State& state, Fn fn) {
    const int64_t bs = state.range(0), m = state.range(1), k = state.range(2),
                  n = state.range(3);
    const auto a = randu(bs * m * k, 3), b = randu(bs * k * n, 4);
    std::vector<double> c(static_cast<size_t>(bs * m * n));
    for (auto _ : state) {
        fn(a.data(), b.data(), c.data(), bs, m, k, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * bs * m * k * n);
}

void BM_bmm_serial(benchmark::State& state) {
    bench_bmm(state, kern::serial::bmm<double>);
}
void BM_bmm_omp(benchmark::State& state) { bench_bmm(state, kern::omp::bmm<double>); }

template <class Fn>
void bench_softmax(benchmark::State& state, Fn fn) {
    const int64_t rows = state.range(0), d = state.range(1);
    const auto x = randu(rows * d, 5);
    std::vector<double> y(static_cast<size_t>(rows * d));
    for (auto _ : state) {
        fn(x.data(), y.data(), rows, d);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * d);
}

void BM_softmax_serial(benchmark::State& state) {
    bench_softmax(state, kern::serial::softmax_rows<double>);
}
void BM_softmax_omp(benchmark::State& state) {
    bench_softmax(state, kern::omp::softmax_rows<double>);
}

template <class Fn>
void bench_layer_norm(benchmark::State& state, Fn fn) {
    const int64_t rows = state.range(0), d = state.range(1);
    const auto x = randu(rows * d, 6), gain = randu(d, 7), bias = randu(d, 8);
    std::vector<double> y(static_cast<size_t>(rows * d)),
        xhat(static_cast<size_t>(rows * d)), inv_std(static_cast<size_t>(rows));
    for (auto _ : state) {
        fn(x.data(), gain.data(), bias.data(), y.data(), xhat.data(), inv_std.data(),
           rows, d, 1e-5);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * d);
}

void BM_layer_norm_serial(benchmark::State& state) {
    bench_layer_norm(state, kern::serial::layer_norm_rows<double>);
}
void BM_layer_norm_omp(benchmark::State& state) {
    bench_layer_norm(state, kern::omp::layer_norm_rows<double>);
}

template <class Fn>
void bench_gelu(benchmark::State& state, Fn fn) {
    const int64_t n = state.range(0);
    const auto x = randu(n, 9);
    std::vector<double> y(static_cast<size_t>(n));
    for (auto _ : state) {
        fn(x.data(), y.data(), n);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void BM_gelu_serial(benchmark::State& state) {
    bench_gelu(state, kern::serial::gelu<double>);
}
void BM_gelu_omp(benchmark::State& state) { bench_gelu(state, kern::omp::gelu<double>); }

template <class Fn>
void bench_patchify(benchmark::State& state, Fn fn) {
    const int64_t n = state.range(0), c = 1, h = 28, w = 28, p = 7;
    const auto img = randu(n * c * h * w, 10);
    std::vector<double> out(static_cast<size_t>(n * (h / p) * (w / p) * c * p * p));
    for (auto _ : state) {
        fn(img.data(), out.data(), n, c, h, w, p);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * n * c * h * w);
}

void BM_patchify_serial(benchmark::State& state) {
    bench_patchify(state, kern::serial::patchify<double>);
}
void BM_patchify_omp(benchmark::State& state) {
    bench_patchify(state, kern::omp::patchify<double>);
}

}  // namespace

// Shapes: token matrix [batch*tokens x embed] against MLP weights, attention
// score products per head, and the full-image patch cut.
BENCHMARK(BM_matmul_serial)->Args({136, 64, 256})->Args({512, 128, 128});
BENCHMARK(BM_matmul_omp)->Args({136, 64, 256})->Args({512, 128, 128});
BENCHMARK(BM_bmm_serial)->Args({32, 17, 16, 17});
BENCHMARK(BM_bmm_omp)->Args({32, 17, 16, 17});
BENCHMARK(BM_softmax_serial)->Args({544, 17});
BENCHMARK(BM_softmax_omp)->Args({544, 17});
BENCHMARK(BM_layer_norm_serial)->Args({136, 64});
BENCHMARK(BM_layer_norm_omp)->Args({136, 64});
BENCHMARK(BM_gelu_serial)->Arg(1 << 16);
BENCHMARK(BM_gelu_omp)->Arg(1 << 16);
BENCHMARK(BM_patchify_serial)->Arg(128);
BENCHMARK(BM_patchify_omp)->Arg(128);

BENCHMARK_MAIN();
