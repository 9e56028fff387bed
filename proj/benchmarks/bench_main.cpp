// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "deltaquant/quant.hpp"
#include "deltaquant/rng.hpp"
#include "deltaquant/search.hpp"
#include "deltaquant/signals.hpp"
#include "deltaquant/tensor_store.hpp"

namespace dq = deltaquant;

namespace {

dq::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  dq::Rng rng(seed);
  dq::Matrix m(rows, cols);
  for (float& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

void BM_RtnQuantize(benchmark::State& state) {
  const auto w = random_matrix(256, static_cast<std::size_t>(state.range(0)), 1);
  dq::quant::QuantConfig cfg;
  cfg.bits = 3;
  for (auto _ : state) benchmark::DoNotOptimize(dq::quant::rtn_quantize(w, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(w.values().size()));
}
BENCHMARK(BM_RtnQuantize)->Arg(256)->Arg(1024);

void BM_PackUnpack(benchmark::State& state) {
  const auto bits = static_cast<unsigned>(state.range(0));
  dq::Rng rng(2);
  std::vector<std::uint8_t> codes(1 << 16);
  for (auto& c : codes) c = static_cast<std::uint8_t>(rng.below(1u << bits));
  for (auto _ : state) {
    const auto packed = dq::quant::pack_codes(codes, bits);
    benchmark::DoNotOptimize(dq::quant::unpack_codes(packed, codes.size(), bits));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(codes.size()));
}
BENCHMARK(BM_PackUnpack)->Arg(3)->Arg(4);

void BM_SearchScale(benchmark::State& state) {
  const auto w = random_matrix(64, 128, 3);
  const auto x = random_matrix(256, 128, 4);
  std::vector<float> imp(128);
  dq::Rng rng(5);
  for (float& v : imp) v = static_cast<float>(rng.uniform(0.1, 10.0));
  dq::search::SearchConfig scfg;
  scfg.threads = static_cast<std::size_t>(state.range(0));
  dq::quant::QuantConfig qcfg;
  for (auto _ : state) benchmark::DoNotOptimize(dq::search::search_scale("m", w, imp, x, scfg, qcfg));
}
BENCHMARK(BM_SearchScale)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ImportanceBothEndsZero(benchmark::State& state) {
  auto delta = random_matrix(512, 512, 6);
  for (float& v : delta.values()) v = v < 0.3f ? 0.0f : v;
  dq::store::TensorMap map;
  map.put("m.delta", dq::store::Tensor::from_matrix(delta));
  const auto stats = dq::signals::global_delta_stats(map, 0.0);
  dq::signals::MappingConfig cfg;
  cfg.slices = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(dq::signals::importance("m", delta, &stats, cfg, nullptr));
  }
}
BENCHMARK(BM_ImportanceBothEndsZero)->Arg(1)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
