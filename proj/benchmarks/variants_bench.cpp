#include <benchmark/benchmark.h>

#include "latt/elsa.hpp"
#include "latt/ops.hpp"
#include "latt/paradigm.hpp"
#include "latt/rng.hpp"

using namespace latt;

namespace {

struct Fixture {
    ElsaParams params;
    Tensor q, k;
};

Fixture make_fixture(std::size_t b, std::size_t c, std::size_t hw, int kernel, int heads) {
    Rng rng(1234);
    Fixture f{ElsaParams::init(static_cast<int>(c), heads, kernel, rng.stream("params"), DType::F32),
              Tensor({b, c, hw, hw}, DType::F32), Tensor({b, c, hw, hw}, DType::F32)};
    rng.fill_normal(f.q, 0.0, 1.0);
    rng.fill_normal(f.k, 0.0, 1.0);
    return f;
}

void attention_variant(benchmark::State& state, ElsaVariant variant) {
    const auto f = make_fixture(static_cast<std::size_t>(state.range(0)), 32,
                                static_cast<std::size_t>(state.range(1)),
                                static_cast<int>(state.range(2)), 4);
    for (auto _ : state) {
        HadamardAttention h = hadamard_attention(f.q, f.k, f.params, variant);
        benchmark::DoNotOptimize(h.values.raw());
    }
}

void unfold_only(benchmark::State& state) {
    Rng rng(7);
    Tensor x({static_cast<std::size_t>(state.range(0)), 32, static_cast<std::size_t>(state.range(1)),
              static_cast<std::size_t>(state.range(1))},
             DType::F32);
    rng.fill_normal(x, 0.0, 1.0);
    for (auto _ : state) {
        Tensor u = unfold(x, static_cast<int>(state.range(2)));
        benchmark::DoNotOptimize(u.raw());
    }
}

void dwconv_bench(benchmark::State& state) {
    Rng rng(8);
    const std::size_t c = 32;
    Tensor x({static_cast<std::size_t>(state.range(0)), c, static_cast<std::size_t>(state.range(1)),
              static_cast<std::size_t>(state.range(1))},
             DType::F32);
    Tensor w({c, static_cast<std::size_t>(state.range(2)), static_cast<std::size_t>(state.range(2))},
             DType::F32);
    rng.fill_normal(x, 0.0, 1.0);
    rng.fill_normal(w, 0.0, 0.3);
    for (auto _ : state) {
        Tensor y = dwconv_forward(x, w);
        benchmark::DoNotOptimize(y.raw());
    }
}

}  // namespace

BENCHMARK_CAPTURE(attention_variant, strict_unfold, ElsaVariant::StrictUnfold)
    ->Args({2, 14, 3})
    ->Args({2, 14, 7})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(attention_variant, shift_conv, ElsaVariant::ShiftConv)
    ->Args({2, 14, 3})
    ->Args({2, 14, 7})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(attention_variant, merged_conv, ElsaVariant::MergedConv)
    ->Args({2, 14, 3})
    ->Args({2, 14, 7})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(attention_variant, production, ElsaVariant::Production)
    ->Args({2, 14, 3})
    ->Args({2, 14, 7})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(unfold_only)->Args({2, 28, 7})->Unit(benchmark::kMillisecond);
BENCHMARK(dwconv_bench)->Args({2, 28, 7})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
