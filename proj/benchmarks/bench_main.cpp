#include <benchmark/benchmark.h>

#include "wr/encoder.hpp"
#include "wr/features.hpp"
#include "wr/rerank.hpp"
#include "wr/retrieval.hpp"
#include "wr/rng.hpp"

namespace {

wr::Matrix random_matrix(wr::Index rows, wr::Index cols, std::uint64_t seed) {
  wr::Rng rng(seed);
  wr::Matrix m(rows, cols);
  for (wr::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

wr::PageSet random_pages(wr::Index n, wr::Index dim) {
  const wr::Matrix m = random_matrix(n, dim, 7);
  wr::PageSet pages;
  for (wr::Index i = 0; i < n; ++i) {
    pages.push_back({"p" + std::to_string(i), "w" + std::to_string(i % 20), wr::l2_normalized(m.row(i).transpose())});
  }
  return pages;
}

// Default model shape: 32 -> 64 -> 64, 16 clusters.
void BM_EncodePatch(benchmark::State& state) {
  wr::encoder::EncoderModel model;
  const std::vector<wr::Index> dims{32, 64, 64};
  model.backbone = wr::encoder::Backbone::random(dims, 1, wr::encoder::Activation::relu,
                                                 wr::encoder::Activation::identity);
  model.codebook = wr::encoder::init_codebook(wr::encoder::EncodingMode::netrvlad, 16, 64, 2);
  const wr::Matrix xs = random_matrix(256, 32, 3);
  wr::Index i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.encode(xs.row(i).transpose()));
    i = (i + 1) % xs.rows();
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_EncodePatch);

void BM_Sgr(benchmark::State& state) {
  const auto pages = random_pages(state.range(0), 64);
  wr::rerank::RerankConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(wr::rerank::sgr(pages, cfg));
}
BENCHMARK(BM_Sgr)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_RankAll(benchmark::State& state) {
  const auto pages = random_pages(state.range(0), 64);
  for (auto _ : state) benchmark::DoNotOptimize(wr::retrieval::rank_all(pages));
}
BENCHMARK(BM_RankAll)->Arg(100)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  const wr::Matrix data = random_matrix(state.range(0), 32, 5);
  for (auto _ : state) benchmark::DoNotOptimize(wr::features::fit_kmeans(data, 64, 0));
}
BENCHMARK(BM_KMeans)->Arg(5000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
