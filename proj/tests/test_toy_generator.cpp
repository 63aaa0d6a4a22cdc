#include "layoutattn/errors.hpp"
#include "layoutattn/toy_generator.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace layoutattn;
using testing::random_matrix;

namespace {

GeneratorConfig small_config(int steps = 6) {
  GeneratorConfig cfg;
  cfg.grid = {12, 12};
  cfg.steps = steps;
  return cfg;
}

Layout circles(std::initializer_list<Point2> centers, double r) {
  Layout l;
  for (const auto& c : centers) l.regions.push_back({c, r, std::nullopt});
  return l;
}

// Whole-grid denoising loop written directly from the blend definition.
ToyScene oracle_generate(const SceneDescription& desc, const MaskSet& weights, const Matrix& lambda,
                         const GeneratorConfig& cfg, std::uint64_t seed) {
  const TokenEmbeddings emb(cfg);
  const TokenKV global = emb.embed(desc.global_text);
  std::vector<TokenKV> locals;
  for (const auto& t : desc.local_texts) locals.push_back(emb.embed(t));
  Matrix z = initial_latent(cfg, seed);
  const double eta = 1.0 / cfg.steps;
  for (int t = cfg.steps; t >= 1; --t) {
    std::vector<double> lam(static_cast<std::size_t>(lambda.rows()));
    for (Eigen::Index i = 0; i < lambda.rows(); ++i) lam[static_cast<std::size_t>(i)] = lambda(i, t - 1);
    const Matrix o = combined_attention_soft(z * emb.w_q(), global, locals, weights, lam, ExecPolicy::Serial);
    z += eta * o;
  }
  ToyScene s = blank_scene(cfg.grid);
  auto dec = [&](double v) { return 1.0 / (1.0 + std::exp(-cfg.decode_gain * (v - cfg.decode_threshold))); };
  for (Eigen::Index p = 0; p < z.rows(); ++p) {
    for (int k = 0; k < kNumNouns; ++k) s.nouns(p, k) = dec(z(p, k));
    for (int k = 0; k < kNumColors; ++k) s.colors(p, k) = dec(z(p, kNumNouns + k));
  }
  return s;
}

Matrix random_lambda(Rng& rng, int n, int t) {
  Matrix m(n, t);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-0.5, 1.5);
  return m;
}

}  // namespace

TEST_SUITE("toy_generator") {

TEST_CASE("matches the whole-grid oracle for hard and soft regions") {
  const auto desc = parse_description("a red cup sits to the left of a blue bowl, a knife is above the cup.");
  const auto cfg = small_config();
  const auto layout = circles({{0.3, 0.6}, {0.7, 0.5}, {0.35, 0.25}}, 0.2);
  Rng rng(1);
  for (bool soft : {false, true}) {
    const MaskSet w = soft ? soft_regions(layout, 0.15, cfg.grid) : region_mask(layout, cfg.grid);
    const Matrix lambda = random_lambda(rng, 3, cfg.steps);
    const ToyScene got = generate(desc, layout, lambda, cfg, 5, soft ? 0.15 : 0.0);
    const ToyScene want = oracle_generate(desc, w, lambda, cfg, 5);
    CHECK(testing::max_abs_diff(got.nouns, want.nouns) <= 1e-9);
    CHECK(testing::max_abs_diff(got.colors, want.colors) <= 1e-9);
  }
}

TEST_CASE("execution policies agree bitwise") {
  const auto desc = parse_description("a dog is above a cat.");
  auto cfg = small_config();
  const auto layout = circles({{0.5, 0.3}, {0.5, 0.7}}, 0.25);
  const TokenEmbeddings emb(cfg);
  Rng rng(2);
  const Matrix lambda = random_lambda(rng, 2, cfg.steps);
  cfg.policy = ExecPolicy::Serial;
  const GenerationProblem serial(emb, cfg, desc, region_mask(layout, cfg.grid), 3);
  cfg.policy = ExecPolicy::Parallel;
  const GenerationProblem parallel(emb, cfg, desc, region_mask(layout, cfg.grid), 3);
  CHECK(serial.run(lambda) == parallel.run(lambda));
  CHECK(serial.run(lambda) == serial.run(lambda));
}

TEST_CASE("pixels outside every region ignore lambda") {
  const auto desc = parse_description("a dog is above a cat.");
  const auto cfg = small_config();
  const auto layout = circles({{0.3, 0.3}, {0.6, 0.7}}, 0.15);
  const auto masks = region_mask(layout, cfg.grid);
  Rng rng(3);
  const ToyScene a = generate(desc, layout, random_lambda(rng, 2, cfg.steps), cfg, 4);
  const ToyScene b = generate(desc, layout, Matrix::Zero(2, cfg.steps), cfg, 4);
  int outside = 0;
  for (Eigen::Index p = 0; p < a.nouns.rows(); ++p) {
    if (masks[0].data()[p] != 0.0 || masks[1].data()[p] != 0.0) continue;
    ++outside;
    CHECK(a.nouns.row(p) == b.nouns.row(p));
  }
  CHECK(outside > 0);
}

TEST_CASE("fused pass equals separate forward and backward") {
  const auto desc = parse_description("a cup is left of a bowl, a knife is below the bowl.");
  const auto cfg = small_config(8);
  const auto layout = circles({{0.3, 0.4}, {0.7, 0.4}, {0.6, 0.8}}, 0.2);
  const TokenEmbeddings emb(cfg);
  const GenerationProblem problem(emb, cfg, desc, region_mask(layout, cfg.grid), 6);
  Rng rng(4);
  const Matrix lambda = random_lambda(rng, 3, cfg.steps);
  SceneGradient sg{random_matrix(rng, cfg.grid.pixels(), kNumNouns), random_matrix(rng, cfg.grid.pixels(), kNumColors)};
  ToyScene fused_scene;
  const Matrix fused = problem.run_with_gradient(lambda, [&](const ToyScene&) { return sg; }, fused_scene);
  CHECK(fused_scene == problem.run(lambda));
  const Matrix separate = problem.lambda_gradient(lambda, sg);
  CHECK(testing::max_abs_diff(fused, separate) <= 1e-12 * std::max(1.0, separate.cwiseAbs().maxCoeff()));
}

TEST_CASE("lambda gradient matches central differences") {
  const auto desc = parse_description("a cup is left of a bowl, a knife is below the bowl.");
  const auto cfg = small_config(5);
  const auto layout = circles({{0.3, 0.4}, {0.7, 0.4}, {0.6, 0.8}}, 0.25);
  const TokenEmbeddings emb(cfg);
  for (bool soft : {false, true}) {
    const MaskSet w = soft ? soft_regions(layout, 0.2, cfg.grid) : region_mask(layout, cfg.grid);
    const GenerationProblem problem(emb, cfg, desc, w, 7);
    Rng rng(5);
    const Matrix lambda = random_lambda(rng, 3, cfg.steps);
    // A fixed linear functional of the scene.
    const SceneGradient sg{random_matrix(rng, cfg.grid.pixels(), kNumNouns),
                           random_matrix(rng, cfg.grid.pixels(), kNumColors)};
    auto f = [&](const Matrix& lam) {
      const ToyScene s = problem.run(lam);
      return (s.nouns.array() * sg.nouns.array()).sum() + (s.colors.array() * sg.colors.array()).sum();
    };
    const Matrix g = problem.lambda_gradient(lambda, sg);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      Matrix up = lambda, dn = lambda;
      up.data()[i] += 1e-5;
      dn.data()[i] -= 1e-5;
      const double fd = (f(up) - f(dn)) / 2e-5;
      CHECK(std::abs(g.data()[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("initial latent has unit variance everywhere") {
  GeneratorConfig cfg;
  cfg.grid = {6, 6};
  cfg.latent_dim = 34;
  constexpr int n = 3000;
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(36), sq = Eigen::ArrayXd::Zero(36);
  for (int s = 0; s < n; ++s) {
    const Matrix z = initial_latent(cfg, static_cast<std::uint64_t>(s));
    sum += z.col(0).array();
    sq += z.col(0).array().square();
  }
  const Eigen::ArrayXd mean = sum / n;
  const Eigen::ArrayXd var = sq / n - mean.square();
  CHECK(mean.abs().maxCoeff() < 0.1);
  CHECK((var - 1.0).abs().maxCoeff() < 0.1);
  // Neighbours are correlated after smoothing.
  const Matrix z = initial_latent(cfg, 1);
  cfg.noise_smoothing = 0.0;
  const Matrix raw = initial_latent(cfg, 1);
  CHECK_FALSE(z.isApprox(raw));
}

TEST_CASE("token embeddings") {
  const GeneratorConfig cfg;
  const TokenEmbeddings emb(cfg);
  const auto& v = Vocabulary::instance();
  const int cup = *v.noun_id("cup");
  CHECK(emb.table()(v.noun_token(cup), emb.noun_dim(cup)) == 1.0);
  CHECK(emb.table().row(v.noun_token(cup)).squaredNorm() == 1.0);
  const int red = *v.color_id("red");
  CHECK(emb.table()(v.color_token(red), emb.color_dim(red)) == 1.0);
  const int the = *v.token_id("the");
  CHECK(emb.table().row(the).head(kNumNouns + kNumColors).isZero());
  CHECK(emb.table().row(the).norm() == doctest::Approx(1.0));
  GeneratorConfig narrow;
  narrow.latent_dim = 32;
  CHECK_THROWS_AS(TokenEmbeddings{narrow}, ConfigError);
}

TEST_CASE("configuration checks") {
  const auto desc = parse_description("a dog is above a cat.");
  auto cfg = small_config();
  const auto layout = circles({{0.5, 0.3}, {0.5, 0.7}}, 0.25);
  const TokenEmbeddings emb(cfg);
  const GenerationProblem problem(emb, cfg, desc, region_mask(layout, cfg.grid), 1);
  CHECK_THROWS_AS(problem.run(Matrix::Zero(2, cfg.steps + 1)), ShapeError);
  CHECK_THROWS_AS(generate(desc, circles({{0.5, 0.5}}, 0.2), Matrix::Zero(1, cfg.steps), cfg, 1), ShapeError);
  cfg.steps = 0;
  CHECK_THROWS_AS(GenerationProblem(emb, cfg, desc, region_mask(layout, small_config().grid), 1), ConfigError);
}

TEST_CASE("crop of a ramp reproduces sample positions") {
  const GridSize grid{32, 32};
  ToyScene ramp = blank_scene(grid);
  for (int r = 0; r < grid.h; ++r) {
    for (int c = 0; c < grid.w; ++c) {
      ramp.nouns(r * grid.w + c, 0) = c + 0.5;
      ramp.nouns(r * grid.w + c, 1) = r + 0.5;
      ramp.colors(r * grid.w + c, 0) = 1.0;
    }
  }
  for (int side = 8; side <= 24; ++side) {
    CAPTURE(side);
    const double radius = side / 2.0 / grid.w;
    const Region region{{0.5, 0.5}, radius, std::nullopt};
    const CropWindow win = crop_window(region, grid);
    CHECK(win.x1 - win.x0 == doctest::Approx(side));
    const ToyScene patch = crop_region(ramp, region);
    REQUIRE(patch.nouns.rows() == kPatchSize * kPatchSize);
    for (int a = 0; a < kPatchSize; ++a) {
      for (int b = 0; b < kPatchSize; ++b) {
        const double x = win.x0 + (b + 0.5) * side / kPatchSize;
        const double y = win.y0 + (a + 0.5) * side / kPatchSize;
        CHECK(patch.nouns(a * kPatchSize + b, 0) == doctest::Approx(x).epsilon(1e-12));
        CHECK(patch.nouns(a * kPatchSize + b, 1) == doctest::Approx(y).epsilon(1e-12));
        CHECK(patch.colors(a * kPatchSize + b, 0) == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("crop windows") {
  const GridSize grid{32, 32};
  const CropWindow edge = crop_window({{0.05, 0.5}, 0.2, std::nullopt}, grid);
  CHECK(edge.x0 == 0.0);
  CHECK(edge.x1 == doctest::Approx(0.25 * 32));
  Matrix mask = Matrix::Zero(32, 32);
  mask.block(4, 10, 3, 6).setOnes();  // rows 4..6, cols 10..15
  const CropWindow m = crop_window({{}, 0.0, mask}, grid);
  CHECK(m.x0 == 10.0);
  CHECK(m.x1 == 16.0);
  CHECK(m.y1 - m.y0 == 6.0);
  CHECK(m.y0 + m.y1 == doctest::Approx(11.0));
  CHECK(m.col_begin() == 10);
  CHECK(m.row_begin() == 2);
  CHECK(m.row_end() == 9);
  const CropWindow empty = crop_window({{}, 0.0, Matrix::Zero(32, 32)}, grid);
  CHECK(empty.x1 == 32.0);
  CHECK(empty.y0 == 0.0);
}

TEST_CASE("crop adjoint") {
  const GridSize grid{20, 20};
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Region region{{rng.uniform(), rng.uniform()}, rng.uniform(0.1, 0.4), std::nullopt};
    ToyScene s{grid, random_matrix(rng, grid.pixels(), kNumNouns), random_matrix(rng, grid.pixels(), kNumColors)};
    const SceneGradient pg{random_matrix(rng, kPatchSize * kPatchSize, kNumNouns),
                           random_matrix(rng, kPatchSize * kPatchSize, kNumColors)};
    const ToyScene c = crop_region(s, region);
    const double lhs = (c.nouns.array() * pg.nouns.array()).sum() + (c.colors.array() * pg.colors.array()).sum();
    SceneGradient full{Matrix::Zero(grid.pixels(), kNumNouns), Matrix::Zero(grid.pixels(), kNumColors)};
    crop_region_adjoint(pg, region, grid, full);
    const double rhs = (s.nouns.array() * full.nouns.array()).sum() + (s.colors.array() * full.colors.array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

}
