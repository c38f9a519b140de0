#include <random>

#include <benchmark/benchmark.h>

#include "evcal/calibration.hpp"
#include "evcal/losses.hpp"
#include "evcal/network.hpp"
#include "evcal/numerics.hpp"
#include "evcal/pseudolabel.hpp"

using namespace evcal;

namespace {

Matrix random_matrix(std::size_t n, std::size_t k, std::uint64_t seed,
                     double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(n, k);
    for (double& v : m.storage()) v = dist(rng);
    return m;
}

Matrix random_probs(std::size_t n, std::size_t k, std::uint64_t seed) {
    Matrix m = random_matrix(n, k, seed, 0.02, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (double v : m.row(i)) sum += v;
        for (double& v : m.row(i)) v /= sum;
    }
    return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, static_cast<int>(k) - 1);
    std::vector<int> y(n);
    for (int& v : y) v = dist(rng);
    return y;
}

void BM_calibrated_softmax(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix logits = random_matrix(n, 40, 1, -4.0, 4.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(numerics::calibrated_softmax(logits, 1.0));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(n));
}
BENCHMARK(BM_calibrated_softmax)->Arg(256)->Arg(2048);

void BM_total_loss(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix logits = random_matrix(n, 40, 2, -4.0, 4.0);
    const Matrix y = losses::one_hot(random_labels(n, 40, 3), 40);
    const losses::LossWeights w;
    for (auto _ : state)
        benchmark::DoNotOptimize(losses::total_loss(logits, y, w, 1.0));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(n));
}
BENCHMARK(BM_total_loss)->Arg(64)->Arg(512);

void BM_rectify_unary(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix probs = random_probs(n, 10, 4);
    const std::vector<double> priors(10, 0.1);
    const auto prior = pseudolabel::PriorKnowledge::unary(priors, 0.3);
    for (auto _ : state)
        benchmark::DoNotOptimize(pseudolabel::rectify(probs, prior));
}
BENCHMARK(BM_rectify_unary)->Arg(100)->Arg(500);

void BM_ece(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const Matrix probs = random_probs(n, 40, 5);
    const auto y = random_labels(n, 40, 6);
    for (auto _ : state)
        benchmark::DoNotOptimize(calibration::ece(probs, y, 15));
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ece)->Arg(1000)->Arg(10000);

void BM_forward_backward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    network::Mlp model(16, 32, 16, 8, 7);
    const Matrix x = random_matrix(n, 16, 8, -1.0, 1.0);
    const Matrix y = losses::one_hot(random_labels(n, 8, 9), 8);
    const losses::LossWeights w;
    for (auto _ : state) {
        const auto acts = model.forward(x);
        const auto loss = losses::total_loss(acts.logits, y, w, 1.0);
        benchmark::DoNotOptimize(model.backward(x, acts, loss.grad_logits));
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                            static_cast<std::int64_t>(n));
}
BENCHMARK(BM_forward_backward)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
