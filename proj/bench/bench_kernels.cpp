// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS set to compare.

#include <benchmark/benchmark.h>

#include <vector>

#include "unitprompt/datagen.hpp"
#include "unitprompt/kernels.hpp"
#include "unitprompt/prompting.hpp"
#include "unitprompt/random.hpp"
#include "unitprompt/spoken_lm.hpp"
#include "unitprompt/tuner.hpp"

namespace up = unitprompt;
namespace k = unitprompt::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  up::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

template <bool Parallel>
void BM_gemm_nn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vec(n * n, 1), b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::gemm_nn(a, b, c, {n, n, n}, false);
    } else {
      k::serial::gemm_nn(a, b, c, {n, n, n}, false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

template <bool Parallel>
void BM_nearest_centroid(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0)), dim = 16, kk = 100;
  const auto x = random_vec(rows * dim, 3), cent = random_vec(kk * dim, 4);
  std::vector<std::size_t> ids(rows);
  std::vector<double> d(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::nearest_centroid(x, cent, dim, ids, d);
    } else {
      k::serial::nearest_centroid(x, cent, dim, ids, d);
    }
    benchmark::DoNotOptimize(ids.data());
  }
}

// One tuning epoch over 64 short sequences.
void BM_tune_epoch(benchmark::State& state) {
  const auto exec = state.range(0) ? k::Execution::parallel : k::Execution::serial;
  up::LMConfig cfg;
  up::SpokenLM lm = up::build_lm(cfg, 1);
  lm.freeze();
  std::vector<up::datagen::UnitSequence> train;
  up::Rng rng(5);
  for (std::size_t i = 0; i < 64; ++i) {
    up::datagen::UnitSequence s;
    for (std::size_t t = 0; t < 12; ++t) {
      s.units.push_back(rng.below(cfg.vocab));
      s.durations.push_back(2);
      s.pitch.push_back(up::datagen::kUnvoicedBin);
    }
    s.label = i % 4;
    train.push_back(std::move(s));
  }
  up::TuneConfig tc;
  tc.epochs = 1;
  tc.exec = exec;
  for (auto _ : state) {
    up::PromptSet p = up::init_prompts(cfg, 5, 0);
    up::Verbalizer v = up::init_learnable(cfg.vocab, 4, 0);
    benchmark::DoNotOptimize(up::tune(lm, p, v, train, train, tc).best_valid);
  }
}

}  // namespace

BENCHMARK(BM_gemm_nn<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_nn<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_nearest_centroid<false>)->Arg(20000);
BENCHMARK(BM_nearest_centroid<true>)->Arg(20000);
BENCHMARK(BM_tune_epoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
