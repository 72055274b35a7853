#include <benchmark/benchmark.h>

#include "pointbert/geometry.hpp"
#include "pointbert/nn.hpp"
#include "pointbert/ops.hpp"
#include "pointbert/rng.hpp"

using namespace pointbert;
using geometry::Vec3;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    return pts;
}

void BM_Fps(benchmark::State& state) {
    const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 1);
    for (auto _ : state) benchmark::DoNotOptimize(geometry::sample_fps(pts, 64));
}
BENCHMARK(BM_Fps)->Arg(1024)->Arg(8192);

void BM_Knn(benchmark::State& state) {
    const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 2);
    const auto centers = random_points(64, 3);
    for (auto _ : state) benchmark::DoNotOptimize(geometry::knn(centers, pts, 32));
}
BENCHMARK(BM_Knn)->Arg(1024)->Arg(8192);

void BM_GroupPatches(benchmark::State& state) {
    geometry::PointCloud cloud{random_points(1024, 4), {}};
    for (auto _ : state) benchmark::DoNotOptimize(geometry::group_patches(cloud, 64, 32));
}
BENCHMARK(BM_GroupPatches);

void BM_ChamferForward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto a = random_points(n, 5), b = random_points(n, 6);
    for (auto _ : state) benchmark::DoNotOptimize(geometry::chamfer_l1(a, b));
}
BENCHMARK(BM_ChamferForward)->Arg(256)->Arg(2048);

void BM_ChamferBackward(benchmark::State& state) {
    const Tensor a = geometry::to_tensor(random_points(256, 7));
    const Tensor b = geometry::to_tensor(random_points(256, 8));
    for (auto _ : state) {
        Tensor p = Tensor::from(a.shape(), std::vector<double>(a.data().begin(), a.data().end()), true);
        geometry::chamfer_l1(p, b).backward();
        benchmark::DoNotOptimize(p.grad());
    }
}
BENCHMARK(BM_ChamferBackward);

void BM_Attention(benchmark::State& state) {
    const auto tokens = static_cast<std::size_t>(state.range(0));
    const auto dim = static_cast<std::size_t>(state.range(1));
    Rng rng(9);
    nn::MultiHeadAttention mha(dim, dim == 384 ? 6 : 4, rng);
    std::vector<double> v(tokens * dim);
    for (auto& x : v) x = rng.normal();
    const Tensor h = Tensor::from({tokens, dim}, std::move(v));
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(mha.forward(h));
}
BENCHMARK(BM_Attention)->Args({17, 48})->Args({65, 384});

void BM_TransformerBlockTrain(benchmark::State& state) {
    Rng rng(10);
    nn::TransformerConfig cfg;
    nn::TransformerBlock block(cfg, 0.0, rng);
    std::vector<double> v(17 * cfg.model_dim);
    for (auto& x : v) x = rng.normal();
    const Tensor h = Tensor::from({17, cfg.model_dim}, std::move(v), true);
    for (auto _ : state) {
        sum_all(block.forward(h, nn::ForwardContext{})).backward();
        benchmark::DoNotOptimize(h.grad());
    }
}
BENCHMARK(BM_TransformerBlockTrain);

}  // namespace

BENCHMARK_MAIN();
