// Serial reference kernels vs. the OpenMP versions.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "partseg/geometry.hpp"
#include "partseg/kernels.hpp"

namespace k = partseg::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <bool Parallel>
void BM_LinearForward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0)), p = 128, m = 128;
    const auto a = random_values(n * p, 1), w = random_values(m * p, 2), b = random_values(m, 3);
    std::vector<double> out(n * m);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::linear_forward(a, w, b, out, n, p, m);
        else
            k::serial::linear_forward(a, w, b, out, n, p, m);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * p * m));
}

template <bool Parallel>
void BM_LinearBackwardWeights(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0)), p = 128, m = 128;
    const auto d = random_values(n * m, 4), a = random_values(n * p, 5);
    std::vector<double> dw(m * p), db(m);
    for (auto _ : state) {
        if constexpr (Parallel)
            k::linear_backward_weights(d, a, dw, db, n, m, p);
        else
            k::serial::linear_backward_weights(d, a, dw, db, n, m, p);
        benchmark::DoNotOptimize(dw.data());
    }
}

template <bool Parallel>
void BM_RelaxedIouMatrix(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0)), t = 16, c = 25;
    auto gt = random_values(t * n, 6), pred = random_values(n * c, 7);
    for (auto& x : gt) x = x > 0.0 ? 1.0 : 0.0;
    for (auto& x : pred) x = 0.5 * (x + 1.0);
    std::vector<double> scores(t * (c - 1));
    for (auto _ : state) {
        if constexpr (Parallel)
            k::relaxed_iou_matrix(gt, t, pred, n, c, c - 1, scores);
        else
            k::serial::relaxed_iou_matrix(gt, t, pred, n, c, c - 1, scores);
        benchmark::DoNotOptimize(scores.data());
    }
}

template <bool Parallel>
void BM_FurthestPointSample(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const partseg::PointCloud cloud("bench", random_values(3 * n, 8));
    for (auto _ : state) {
        auto idx = Parallel ? partseg::furthest_point_sample(cloud, n / 4)
                            : partseg::furthest_point_sample_serial(cloud, n / 4);
        benchmark::DoNotOptimize(idx.data());
    }
}

}  // namespace

BENCHMARK(BM_LinearForward<false>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_LinearForward<true>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_LinearBackwardWeights<false>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_LinearBackwardWeights<true>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_RelaxedIouMatrix<false>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_RelaxedIouMatrix<true>)->Arg(1024)->Arg(4096);
BENCHMARK(BM_FurthestPointSample<false>)->Arg(2048)->Arg(8192);
BENCHMARK(BM_FurthestPointSample<true>)->Arg(2048)->Arg(8192);

BENCHMARK_MAIN();
