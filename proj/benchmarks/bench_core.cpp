#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dfb/metrics.hpp"
#include "dfb/nnet.hpp"
#include "dfb/sweep.hpp"

using namespace dfb;

namespace {

NetConfig image_net() {
    NetConfig c;
    c.input_dim = 256;
    c.hidden_dims = {64, 32};
    c.output_dim = 3;
    c.seed = 1;
    return c;
}

Matrix batch(Eigen::Index rows) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> d;
    Matrix x(rows, 256);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
    return x;
}

struct Scores {
    std::vector<double> s;
    std::vector<int> y;
    ScoreRecord record;
};

Scores scores(std::size_t n) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u;
    Scores out;
    for (std::size_t i = 0; i < n; ++i) {
        out.y.push_back(u(rng) < 0.03);
        out.s.push_back(u(rng) + 0.3 * out.y.back());
        out.record.positive_probability.push_back(u(rng));
        out.record.uncertainty.push_back(u(rng));
    }
    return out;
}

void BM_Forward(benchmark::State& state) {
    const Network net(image_net());
    const Matrix x = batch(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(1000);

void BM_Backward(benchmark::State& state) {
    const Network net(image_net());
    const Matrix x = batch(state.range(0));
    std::vector<int> y(static_cast<std::size_t>(state.range(0)));
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
    const LossSpec loss = OneStageCost(0.2);
    for (auto _ : state) benchmark::DoNotOptimize(net.backward(x, y, loss));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Backward)->Arg(64)->Arg(1000);

void BM_Auc(benchmark::State& state) {
    const auto d = scores(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(auc(d.s, d.y));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

void BM_Pauc(benchmark::State& state) {
    const auto d = scores(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(pauc(d.s, d.y));
}
BENCHMARK(BM_Pauc)->Arg(1000)->Arg(100000);

void BM_UqSweep(benchmark::State& state) {
    const auto d = scores(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(uq_sweep(d.record, d.y, 200));
}
BENCHMARK(BM_UqSweep)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
