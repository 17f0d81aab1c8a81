#include "wsseg/net.hpp"
#include "wsseg/otrans.hpp"
#include "wsseg/trainer.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace wsseg;

namespace {

Matrix unit_columns(Index rows, Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
        m.col(j).normalize();
    }
    return m;
}

void BM_OrderPreserving(benchmark::State& state) {
    const Index n = state.range(0);
    const Matrix v = unit_columns(32, n, 1);
    const Matrix p = unit_columns(32, 8, 2);
    for (auto _ : state) benchmark::DoNotOptimize(solve_order_preserving(v, p, 0.1, 1.0).plan.data());
    state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_OrderPreserving)->Arg(512)->Arg(2000);

void BM_Forward(benchmark::State& state) {
    TcnConfig cfg;
    cfg.feature_dim = static_cast<int>(state.range(0));
    const Network net(cfg, 3);
    const Matrix x = unit_columns(cfg.input_dim, 512, 4);
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(x).outputs.probs().data());
    state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64);

void BM_ForwardBackward(benchmark::State& state) {
    TcnConfig cfg;
    cfg.feature_dim = static_cast<int>(state.range(0));
    const Network net(cfg, 3);
    const Matrix x = unit_columns(cfg.input_dim, 512, 4);
    for (auto _ : state) {
        const ForwardPass pass = net.forward(x);
        OutputGradients g;
        for (const auto& p : pass.outputs.stage_probs) g.stage_probs.push_back(Matrix::Ones(p.rows(), p.cols()));
        g.ml_logits = Vector::Ones(cfg.num_classes);
        g.embeddings = Matrix::Ones(cfg.projector_dim, 512);
        benchmark::DoNotOptimize(net.backward(pass, g).ml_w.data());
    }
    state.SetItemsProcessed(state.iterations() * 512);
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(64);

} // namespace

BENCHMARK_MAIN();
