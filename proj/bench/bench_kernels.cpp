#include "layoutattn/kernels.hpp"
#include "layoutattn/layout.hpp"
#include "layoutattn/rng.hpp"
#include "layoutattn/scene_dsl.hpp"
#include "layoutattn/toy_generator.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace layoutattn;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

ExecPolicy policy_arg(const benchmark::State& state) {
  return state.range(0) == 0 ? ExecPolicy::Serial : ExecPolicy::Parallel;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "parallel"); }

// Query rows = pixels of a side x side grid, 12 tokens, d = 40.
void BM_Attention(benchmark::State& state) {
  const auto side = state.range(1);
  const Matrix q = random_matrix(side * side, 40, 1);
  const Matrix k = random_matrix(12, 40, 2);
  const Matrix v = random_matrix(12, 40, 3);
  const auto policy = policy_arg(state);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::attention(q, k, v, policy));
  state.SetItemsProcessed(state.iterations() * q.rows());
  label(state);
}

void BM_Combined(benchmark::State& state) {
  const auto side = state.range(1);
  constexpr int objects = 3;
  const Matrix q = random_matrix(side * side, 40, 1);
  const Matrix kg = random_matrix(16, 40, 2);
  const Matrix vg = random_matrix(16, 40, 3);
  std::vector<Matrix> kl, vl, w;
  Rng rng(4);
  for (int i = 0; i < objects; ++i) {
    kl.push_back(random_matrix(4, 40, 10 + i));
    vl.push_back(random_matrix(4, 40, 20 + i));
    Matrix m(side, side);
    for (Eigen::Index j = 0; j < m.size(); ++j) m.data()[j] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    w.push_back(m);
  }
  const std::vector<double> lambda(objects, 0.4);
  const auto policy = policy_arg(state);
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::combined(q, kg, vg, kl, vl, w, lambda, policy));
  state.SetItemsProcessed(state.iterations() * q.rows());
  label(state);
}

void BM_Generate(benchmark::State& state) {
  GeneratorConfig cfg;
  cfg.grid = {static_cast<int>(state.range(1)), static_cast<int>(state.range(1))};
  cfg.steps = 20;
  cfg.policy = policy_arg(state);
  const auto desc = parse_description("a red cup is to the left of a blue bowl, and a dog is above the bowl.");
  Layout layout;
  for (const Point2 c : {Point2{0.3, 0.6}, Point2{0.7, 0.6}, Point2{0.7, 0.25}})
    layout.regions.push_back({c, 0.2, std::nullopt});
  const Matrix lambda = Matrix::Constant(3, cfg.steps, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(generate(desc, layout, lambda, cfg, 7));
  label(state);
}

void BM_LambdaGradient(benchmark::State& state) {
  GeneratorConfig cfg;
  cfg.grid = {static_cast<int>(state.range(1)), static_cast<int>(state.range(1))};
  cfg.steps = 20;
  cfg.policy = policy_arg(state);
  const auto desc = parse_description("a red cup is to the left of a blue bowl.");
  Layout layout;
  layout.regions.push_back({{0.3, 0.5}, 0.2, std::nullopt});
  layout.regions.push_back({{0.7, 0.5}, 0.2, std::nullopt});
  const TokenEmbeddings emb(cfg);
  const GenerationProblem problem(emb, cfg, desc, region_mask(layout, cfg.grid), 7);
  const Matrix lambda = Matrix::Constant(2, cfg.steps, 0.5);
  const auto unit = [](const ToyScene& scene) {
    SceneGradient g;
    g.nouns = Matrix::Ones(scene.nouns.rows(), scene.nouns.cols());
    g.colors = Matrix::Ones(scene.colors.rows(), scene.colors.cols());
    return g;
  };
  ToyScene scene;
  for (auto _ : state) benchmark::DoNotOptimize(problem.run_with_gradient(lambda, unit, scene));
  label(state);
}

}  // namespace

BENCHMARK(BM_Attention)->ArgsProduct({{0, 1}, {32, 64}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Combined)->ArgsProduct({{0, 1}, {32, 64}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Generate)->ArgsProduct({{0, 1}, {32}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LambdaGradient)->ArgsProduct({{0, 1}, {32}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
