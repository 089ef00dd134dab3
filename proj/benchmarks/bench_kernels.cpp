#include <benchmark/benchmark.h>

#include <random>

#include "circuitprobe/embedding_lab.hpp"
#include "circuitprobe/encoder.hpp"
#include "circuitprobe/patching.hpp"
#include "circuitprobe/surrogate.hpp"
#include "circuitprobe/tensor_ops.hpp"
#include "synthetic.hpp"

using namespace circuitprobe;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  Matrix m(r, c);
  for (float& v : m.data()) v = u(rng);
  return m;
}

const ModelWeights& model() {
  static const ModelWeights w = circuitprobe::testing::make_synthetic_model();
  return w;
}

EncodedInput input_of(std::size_t len) {
  EncodedInput in;
  for (std::size_t i = 0; i < len; ++i) {
    in.token_ids.push_back(static_cast<TokenId>(1000 + (i * 7919) % 28000));
    in.token_type_ids.push_back(i < len / 3 ? 0 : 1);
  }
  in.attention_mask.assign(len, 1);
  return in;
}

void BM_Matmul(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(t, 384, 1);
  const Matrix b = random_matrix(384, 1536, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * t * 384 * 1536));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_Softmax(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(t, t, 3);
  for (auto _ : state) benchmark::DoNotOptimize(softmax_rows(a));
}
BENCHMARK(BM_Softmax)->Arg(64)->Arg(256);

void BM_Forward(benchmark::State& state) {
  const auto in = input_of(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_logit(model(), in));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ForwardAllHooks(benchmark::State& state) {
  const auto in = input_of(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(model(), in, HookSet::all()));
}
BENCHMARK(BM_ForwardAllHooks)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_PathPatchHead(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  auto b = input_of(len);
  auto p = b;
  p.token_ids[len - 2] = 2000;
  b.query_span = p.query_span = {1, len / 3};
  b.doc_span = p.doc_span = {len / 3 + 1, len - 1};
  const PairContext ctx(model(), PatchPair{b, p, "bench"});
  const auto sender = HookPoint::head_hook(HookKind::head_z, 6, 3);
  for (auto _ : state) benchmark::DoNotOptimize(path_patch(ctx, sender, HookPoint::logit()));
}
BENCHMARK(BM_PathPatchHead)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ExtractFeatures(benchmark::State& state) {
  static const auto view = extract_u0(model());
  auto in = input_of(64);
  in.query_span = {1, 6};
  in.doc_span = {7, 63};
  const std::vector<HeadId> heads{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}, {10, 11}};
  for (auto _ : state)
    benchmark::DoNotOptimize(extract_features(model(), in, view, heads, FeatureMode::per_head));
}
BENCHMARK(BM_ExtractFeatures)->Unit(benchmark::kMillisecond);

void BM_TopSvdEmbeddings(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(top_k_svd(model().word_embeddings(), 1));
}
BENCHMARK(BM_TopSvdEmbeddings)->Unit(benchmark::kMillisecond)->Iterations(2);

void BM_LeastSquares(benchmark::State& state) {
  const Matrix x = random_matrix(5000, 136, 4);
  std::vector<double> y(5000);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x(i, 0) - 2.0 * x(i, 5);
  for (auto _ : state) benchmark::DoNotOptimize(least_squares(x, y));
}
BENCHMARK(BM_LeastSquares)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
