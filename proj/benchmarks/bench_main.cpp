#include <benchmark/benchmark.h>

#include <random>

#include "g2p/decoder.hpp"
#include "g2p/model.hpp"
#include "g2p/tensor.hpp"
#include "g2p/trainer.hpp"

namespace {

using namespace g2p;

void BM_Gemm(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int k = 128, n = 512;
  std::mt19937 rng(1);
  std::normal_distribution<float> dist;
  Matrix<float> a(m, k), b(k, n), out(m, n);
  for (auto& v : a.values()) v = dist(rng);
  for (auto& v : b.values()) v = dist(rng);
  for (auto _ : state) {
    matmul(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * m * k * n);
}
BENCHMARK(BM_Gemm)->Arg(16)->Arg(256)->Arg(1024);

std::vector<TokenSequence> words(int n, bool tagged) {
  std::mt19937_64 rng(3);
  std::vector<TokenSequence> out;
  for (int i = 0; i < n; ++i) {
    std::string w(3 + rng() % 6, 'a');
    for (char& c : w) c = static_cast<char>('a' + rng() % 20);
    out.push_back(tagged ? encode(w, LanguageTag("spa")) : encode(w));
  }
  return out;
}

// One micro-batch of 32 examples through forward and backward, default model.
void BM_TrainStep(benchmark::State& state) {
  const auto params = init_params<float>(ModelConfig{}, 1);
  const auto src = words(32, true);
  const auto tgt = words(32, false);
  for (auto _ : state) {
    auto acc = accumulate_batch(params, src, tgt, 32, ForwardMode::kTrain, 7);
    benchmark::DoNotOptimize(acc.loss_sum);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_BeamDecode(benchmark::State& state) {
  const auto params = init_params<float>(ModelConfig{}, 1);
  const auto src = words(16, true);
  const DecodeConfig cfg{static_cast<int>(state.range(0)), 12, 0};
  for (auto _ : state) {
    auto out = batch_decode(params, src, cfg);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_BeamDecode)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
