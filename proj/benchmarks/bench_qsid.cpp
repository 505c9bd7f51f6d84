#include <benchmark/benchmark.h>

#include "qsid/calibration.hpp"
#include "qsid/collusion_metrics.hpp"
#include "qsid/group_detector.hpp"
#include "qsid/simulate.hpp"
#include "qsid/synthetic_control.hpp"

namespace {

qsid::ScoreMatrix exam(std::size_t n, std::size_t p) {
    return qsid::simulate_exam(qsid::make_null_generator({n, p, 0.3, 1}), 2);
}

void BM_IdentityScores(benchmark::State& state) {
    const auto m = exam(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(qsid::identity_scores(m));
    state.SetItemsProcessed(state.iterations() * state.range(0) * (state.range(0) - 1) / 2);
}
BENCHMARK(BM_IdentityScores)->Args({300, 80})->Args({1000, 100})->Args({3000, 100})->Unit(benchmark::kMillisecond);

void BM_StudentMetrics(benchmark::State& state) {
    const auto m = exam(static_cast<std::size_t>(state.range(0)), 80);
    const auto is = qsid::identity_scores(m);
    for (auto _ : state) benchmark::DoNotOptimize(qsid::student_metrics(m, is));
}
BENCHMARK(BM_StudentMetrics)->Arg(300)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_DetectGroups(benchmark::State& state) {
    const auto m = exam(1000, 80);
    const auto metrics = qsid::student_metrics(m);
    const auto t = qsid::threshold_lookup(qsid::ThresholdTable::builtin(), m.students());
    for (auto _ : state) benchmark::DoNotOptimize(qsid::detect_groups(metrics, m.student_ids(), t));
}
BENCHMARK(BM_DetectGroups)->Unit(benchmark::kMicrosecond);

void BM_FitCopula(benchmark::State& state) {
    const auto m = exam(static_cast<std::size_t>(state.range(0)), 100);
    for (auto _ : state) benchmark::DoNotOptimize(qsid::fit_copula(m, 5, 3));
}
BENCHMARK(BM_FitCopula)->Arg(300)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_SampleSynthetic(benchmark::State& state) {
    const auto model = qsid::fit_copula(exam(500, 100), 5, 3);
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(qsid::sample_synthetic(model, ++seed));
    state.SetItemsProcessed(state.iterations() * 500);
}
BENCHMARK(BM_SampleSynthetic)->Unit(benchmark::kMillisecond);

void BM_SyntheticFpr(benchmark::State& state) {
    const auto m = exam(500, 100);
    qsid::SyntheticFprOptions options;
    options.min_students = static_cast<std::size_t>(state.range(0));
    options.seed = 4;
    for (auto _ : state) benchmark::DoNotOptimize(qsid::synthetic_fpr(m, qsid::ThresholdTable::builtin(), options));
}
BENCHMARK(BM_SyntheticFpr)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
