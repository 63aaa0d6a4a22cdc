// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance --cli <layoutattn binary> --workdir <dir> [--only 1,5,12]

#include "layoutattn/attention.hpp"
#include "layoutattn/dataset.hpp"
#include "layoutattn/errors.hpp"
#include "layoutattn/evaluation.hpp"
#include "layoutattn/gmm.hpp"
#include "layoutattn/lambda_optimizer.hpp"
#include "layoutattn/layout_predictor.hpp"
#include "layoutattn/rng.hpp"

#include "support.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace layoutattn;
using testing::max_abs_diff;
using testing::naive_attention;
using testing::random_matrix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Context {
  std::string cli;
  fs::path workdir;
  std::optional<PredictorParams> predictor;  // trained in criterion 5, reused by 6 and 7
  std::optional<std::vector<EvalReport>> ablation;  // one report per seed
};

// ---- 1, 2: attention ------------------------------------------------------

TokenKV random_kv(Rng& rng, int tokens, int d) {
  return {random_matrix(rng, tokens, d), random_matrix(rng, tokens, d)};
}

Matrix oracle_combined(const Matrix& q, const TokenKV& global, const std::vector<TokenKV>& locals,
                       const MaskSet& w, const std::vector<double>& lambda) {
  const Matrix g = naive_attention(q, global.k, global.v);
  std::vector<Matrix> l;
  for (const auto& kv : locals) l.push_back(naive_attention(q, kv.k, kv.v));
  Matrix out(q.rows(), global.v.cols());
  for (Eigen::Index p = 0; p < q.rows(); ++p) {
    double c = 1.0;
    for (std::size_t i = 0; i < locals.size(); ++i) c -= lambda[i] * w[i].data()[p];
    for (Eigen::Index k = 0; k < out.cols(); ++k) {
      double v = c * g(p, k);
      for (std::size_t i = 0; i < locals.size(); ++i) v += lambda[i] * w[i].data()[p] * l[i](p, k);
      out(p, k) = v;
    }
  }
  return out;
}

Layout random_layout(Rng& rng, int n) {
  Layout l;
  for (int i = 0; i < n; ++i) l.regions.push_back({{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}, rng.uniform(0.1, 0.35), std::nullopt});
  return l;
}

Outcome attention_identities(Context&) {
  Rng rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    const GridSize grid{8 + static_cast<int>(rng.below(9)), 8 + static_cast<int>(rng.below(9))};
    const int d = 4 + static_cast<int>(rng.below(13));
    const Matrix q = random_matrix(rng, grid.pixels(), d);
    const TokenKV global = random_kv(rng, 3 + static_cast<int>(rng.below(8)), d);
    const int n = 1 + static_cast<int>(rng.below(4));
    std::vector<TokenKV> locals;
    for (int i = 0; i < n; ++i) locals.push_back(random_kv(rng, 2 + static_cast<int>(rng.below(6)), d));
    const MaskSet masks = region_mask(random_layout(rng, n), grid);
    const Matrix g = cross_attention(q, global);
    for (auto policy : {ExecPolicy::Serial, ExecPolicy::Parallel}) {
      const std::vector<double> zero(static_cast<std::size_t>(n), 0.0);
      worst = std::max(worst, max_abs_diff(combined_attention(q, global, locals, masks, zero, policy), g));
      const std::vector<TokenKV> one{locals[0]};
      const MaskSet m1{masks[0]};
      const std::vector<double> lam1{1.0};
      const Matrix c = combined_attention(q, global, one, m1, lam1, policy);
      const Matrix local = cross_attention(q, locals[0]);
      for (Eigen::Index p = 0; p < q.rows(); ++p) {
        const Matrix& ref = m1[0].data()[p] == 1.0 ? local : g;
        worst = std::max(worst, (c.row(p) - ref.row(p)).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst <= 1e-6, fmt("max deviation %.3g (tol 1e-6)", worst)};
}

Outcome attention_oracles(Context&) {
  Rng rng(202);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const GridSize grid{4 + static_cast<int>(rng.below(9)), 4 + static_cast<int>(rng.below(9))};
    const int d = 2 + static_cast<int>(rng.below(15));
    const Matrix q = random_matrix(rng, grid.pixels(), d, 1.5);
    const TokenKV global = random_kv(rng, 1 + static_cast<int>(rng.below(10)), d);
    const int n = 1 + static_cast<int>(rng.below(4));
    std::vector<TokenKV> locals;
    std::vector<double> lambda;
    for (int i = 0; i < n; ++i) {
      locals.push_back(random_kv(rng, 1 + static_cast<int>(rng.below(6)), d));
      lambda.push_back(rng.uniform(-0.5, 1.5));
    }
    const Layout layout = random_layout(rng, n);
    const MaskSet hard = region_mask(layout, grid);
    const MaskSet soft = soft_regions(layout, rng.uniform(0.05, 0.3), grid);
    for (auto policy : {ExecPolicy::Serial, ExecPolicy::Parallel}) {
      worst = std::max(worst, max_abs_diff(cross_attention(q, global, policy), naive_attention(q, global.k, global.v)));
      worst = std::max(worst, max_abs_diff(combined_attention(q, global, locals, hard, lambda, policy),
                                           oracle_combined(q, global, locals, hard, lambda)));
      worst = std::max(worst, max_abs_diff(combined_attention_soft(q, global, locals, soft, lambda, policy),
                                           oracle_combined(q, global, locals, soft, lambda)));
    }
  }
  return {worst <= 1e-6, fmt("50 instances x {cross, hard, soft} x {serial, parallel}, max deviation %.3g (tol 1e-6)", worst)};
}

// ---- 3: gradients ---------------------------------------------------------

// Random scene with ground-truth centers; one-object scenes are built here
// because the dataset sampler starts at two objects.
DatasetItem random_scene(int objects, std::uint64_t seed) {
  if (objects >= 2) return sample_description(objects, objects - 1, DatasetConfig{}, seed);
  Rng rng(seed);
  const auto& v = Vocabulary::instance();
  std::string text = "a ";
  if (rng.bernoulli(0.5)) text += v.colors()[rng.below(v.colors().size())] + " ";
  text += v.nouns()[rng.below(v.nouns().size())];
  return {parse_description(text), std::vector<Point2>{{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)}}};
}

bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-3});
}

Outcome gradient_checks(Context&) {
  DatasetConfig dc;
  dc.cells = {{2, 1, 10}, {3, 2, 10}, {4, 3, 10}, {5, 4, 10}};
  const auto data = generate_dataset(dc, 303);
  Rng rng(304);
  int checked = 0, bad = 0;
  double worst = 0.0;
  for (int b = 0; b < 10; ++b) {
    auto params = init_predictor(derive_seed(305, static_cast<std::uint64_t>(b)));
    std::vector<DatasetItem> batch;
    for (int k = 0; k < 6; ++k) batch.push_back(data[rng.below(data.size())]);
    const LossConfig lc{0.05, rng.uniform(0.5, 2.0)};
    ParameterSet grad = params.weights.zeros_like();
    total_loss_and_grad(batch, params, lc, grad);
    for (int s = 0; s < 40; ++s) {
      const auto idx = static_cast<std::size_t>(rng.below(params.weights.num_scalars()));
      const double h = 1e-5, orig = params.weights.scalar(idx);
      params.weights.scalar(idx) = orig + h;
      const double up = total_loss(batch, params, lc).total;
      params.weights.scalar(idx) = orig - h;
      const double dn = total_loss(batch, params, lc).total;
      params.weights.scalar(idx) = orig;
      const double fd = (up - dn) / (2 * h), an = grad.scalar(idx);
      ++checked;
      if (!close_rel(an, fd, 1e-3)) ++bad;
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}));
    }
  }
  const std::string predictor = fmt("predictor: %d/%d scalars over 10 batches, worst rel %.2g", checked - bad, checked, worst);
  const bool predictor_ok = bad == 0;

  int lchecked = 0, lbad = 0;
  double lworst = 0.0;
  const ScoreConfig score;
  for (int inst = 0; inst < 10; ++inst) {
    const int n = 1 + inst % 3;
    const auto item = random_scene(n, derive_seed(306, static_cast<std::uint64_t>(inst)));
    GeneratorConfig gen;
    gen.grid = {20, 20};
    gen.steps = 3 + static_cast<int>(rng.below(8));
    Layout layout;
    for (const auto& c : *item.layout) layout.regions.push_back({c, 0.22, std::nullopt});
    const MaskSet masks = inst % 2 == 0 ? region_mask(layout, gen.grid) : soft_regions(layout, 0.15, gen.grid);
    const LambdaObjective obj(item.desc, layout, gen, score, masks, derive_seed(307, static_cast<std::uint64_t>(inst)));
    Matrix lambda(n, gen.steps);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) lambda.data()[i] = rng.uniform(0.0, 1.0);
    Matrix g;
    obj.value_and_gradient(lambda, g);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      Matrix up = lambda, dn = lambda;
      up.data()[i] += 1e-5;
      dn.data()[i] -= 1e-5;
      const double fd = (obj.value(up) - obj.value(dn)) / 2e-5;
      ++lchecked;
      if (!close_rel(g.data()[i], fd, 1e-3)) ++lbad;
      lworst = std::max(lworst, std::abs(g.data()[i] - fd) / std::max({std::abs(fd), std::abs(g.data()[i]), 1e-3}));
    }
  }
  return {predictor_ok && lbad == 0,
          predictor + fmt("; lambda: %d/%d entries over 10 instances, worst rel %.2g (tol 1e-3)", lchecked - lbad, lchecked, lworst)};
}

// ---- 4: GMM ---------------------------------------------------------------

Outcome gmm_oracle(Context&) {
  Rng rng(404);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    GmmParams g;
    const int k = 1 + static_cast<int>(rng.below(5));
    double wsum = 0.0;
    for (int j = 0; j < k; ++j) {
      g.means.push_back({rng.uniform(), rng.uniform()});
      g.variances.push_back({std::exp(rng.uniform(-5.0, 0.0)), std::exp(rng.uniform(-5.0, 0.0))});
      g.weights.push_back(rng.uniform(0.05, 1.0));
      wsum += g.weights.back();
    }
    for (auto& w : g.weights) w /= wsum;
    const Point2 x{rng.uniform(-0.2, 1.2), rng.uniform(-0.2, 1.2)};
    double density = 0.0;
    for (int j = 0; j < k; ++j) {
      const double vx = g.variances[j].x, vy = g.variances[j].y;
      const double dx = x.x - g.means[j].x, dy = x.y - g.means[j].y;
      density += g.weights[j] / (2 * std::numbers::pi * std::sqrt(vx * vy)) * std::exp(-0.5 * (dx * dx / vx + dy * dy / vy));
    }
    if (density <= 1e-250) continue;
    worst = std::max(worst, std::abs(gmm_nll(x, g) + std::log(density)));
  }
  GmmParams unit;
  unit.means = {{0.3, 0.6}};
  unit.variances = {{1.0, 1.0}};
  unit.weights = {1.0};
  const double ident = std::abs(gmm_nll({0.3, 0.6}, unit) - std::log(2 * std::numbers::pi));
  return {worst <= 1e-9 && ident <= 1e-9, fmt("1000 mixtures, max |nll - oracle| %.3g; |NLL(mu) - log 2pi| %.3g (tol 1e-9)", worst, ident)};
}

// ---- 5: layout training ---------------------------------------------------

std::vector<CellCount> scaled_cells(int factor) {
  auto cells = default_cell_counts();
  for (auto& c : cells) c.count = c.count * factor / 5;
  return cells;
}

TrainConfig benchmark_train_config(double xi) {
  TrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 32;
  tc.seed = 505;
  tc.components = 3;
  tc.loss.xi = xi;
  return tc;
}

Outcome layout_training(Context& ctx) {
  DatasetConfig dc;
  dc.cells = scaled_cells(20);  // 2000 items
  auto data = generate_dataset(dc, 501);
  Rng rng(502);
  rng.shuffle(data);
  const std::span<const DatasetItem> train_split(data.data(), 1600);
  const std::span<const DatasetItem> held_out(data.data() + 1600, data.size() - 1600);
  const auto with_rel = train(train_split, benchmark_train_config(5.0));
  const auto without = train(train_split, benchmark_train_config(0.0));
  const auto a = relation_satisfaction(held_out, with_rel.params);
  const auto b = relation_satisfaction(held_out, without.params);
  ctx.predictor = with_rel.params;
  return {data.size() == 2000 && a.rate() >= 0.9 && b.rate() < a.rate(),
          fmt("held-out %zu items, K=3: xi=5 %.3f (%d/%d, need >= 0.90), xi=0 %.3f (%d/%d, need lower)", held_out.size(), a.rate(),
              a.satisfied, a.total, b.rate(), b.satisfied, b.total)};
}

void ensure_predictor(Context& ctx) {
  if (!ctx.predictor) layout_training(ctx);
}

// ---- 6, 7: ablations ------------------------------------------------------

constexpr int kAblationSeeds = 5;

void ensure_ablation(Context& ctx) {
  if (ctx.ablation) return;
  ensure_predictor(ctx);
  DatasetConfig dc;
  dc.cells = scaled_cells(1);  // 100 descriptions
  const auto bench = generate_dataset(dc, 601);
  SuiteConfig sc;
  sc.ground_truth_layout = true;
  sc.gen.steps = 20;
  sc.opt.iterations = 10;
  std::vector<EvalReport> reports;
  for (int s = 0; s < kAblationSeeds; ++s) {
    sc.seed = derive_seed(602, static_cast<std::uint64_t>(s));
    reports.push_back(run_suite(bench, &*ctx.predictor, sc));
  }
  ctx.ablation = std::move(reports);
}

// One-sided paired t-test of mean(a - b) > 0.
double paired_p(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += (a[i] - b[i]) / n;
  double var = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) var += (a[i] - b[i] - mean) * (a[i] - b[i] - mean) / (n - 1);
  if (var == 0.0) return mean > 0.0 ? 0.0 : 1.0;
  const double t = mean / std::sqrt(var / n);
  const boost::math::students_t dist(n - 1);
  return boost::math::cdf(boost::math::complement(dist, t));
}

std::vector<double> per_seed(const Context& ctx, Variant v, LayoutSource src, bool sprel) {
  std::vector<double> out;
  for (const auto& r : *ctx.ablation) {
    const EvalRow* row = r.find(v, src);
    const auto value = row ? (sprel ? row->sprel.value() : row->recall.value()) : std::nullopt;
    out.push_back(value.value_or(0.0));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Outcome ablation_ordering(Context& ctx) {
  ensure_ablation(ctx);
  bool ok = true;
  std::string detail;
  for (bool sprel : {true, false}) {
    const auto full = per_seed(ctx, Variant::Full, LayoutSource::Predicted, sprel);
    const auto spatial = per_seed(ctx, Variant::NoSpatial, LayoutSource::Predicted, sprel);
    const auto temporal = per_seed(ctx, Variant::NoTemporal, LayoutSource::Predicted, sprel);
    const auto noopt = per_seed(ctx, Variant::NoOptimization, LayoutSource::Predicted, sprel);
    const double p1 = paired_p(full, temporal), p2 = paired_p(temporal, noopt), p3 = paired_p(full, spatial);
    ok = ok && p1 < 0.05 && p2 < 0.05 && p3 < 0.05;
    detail += fmt("%s full %.3f notemp %.3f noopt %.3f nospat %.3f p(F>T)=%.3g p(T>O)=%.3g p(F>S)=%.3g; ", sprel ? "sprel" : "recall",
                  mean_of(full), mean_of(temporal), mean_of(noopt), mean_of(spatial), p1, p2, p3);
  }
  return {ok, detail + "100 descriptions x 5 seeds, T=20, 10 iterations"};
}

Outcome gt_vs_predicted(Context& ctx) {
  ensure_ablation(ctx);
  const double gt = mean_of(per_seed(ctx, Variant::Full, LayoutSource::GroundTruth, true));
  const double pred = mean_of(per_seed(ctx, Variant::Full, LayoutSource::Predicted, true));
  return {gt >= pred, fmt("mean sprel over 5 seeds: ground truth %.3f, predicted %.3f", gt, pred)};
}

// ---- 8: optimization efficacy ---------------------------------------------

Outcome optimization_efficacy(Context&) {
  const GeneratorConfig gen;
  const ScoreConfig score;
  int wins = 0;
  for (int f = 0; f < 100; ++f) {
    const auto item = random_scene(1, derive_seed(802, static_cast<std::uint64_t>(f)));
    Layout layout;
    layout.regions.push_back({item.layout->front(), 0.2, std::nullopt});
    const auto seed = derive_seed(803, static_cast<std::uint64_t>(f));
    OptimizerConfig full;
    OptimizerConfig fixed;
    fixed.variant = Variant::NoOptimization;
    const auto a = optimize(item.desc, layout, gen, score, full, seed);
    const auto b = optimize(item.desc, layout, gen, score, fixed, seed);
    if (a.terms.loss < b.terms.loss) ++wins;
  }
  return {wins >= 95, fmt("Full below NoOptimization on %d/100 single-object fixtures (need >= 95)", wins)};
}

// ---- 9: dataset generator -------------------------------------------------

RelationSpec ordered(int before, int after, bool vertical, bool flip) {
  if (!vertical) return flip ? RelationSpec{after, before, RelationKind::RightOf} : RelationSpec{before, after, RelationKind::LeftOf};
  return flip ? RelationSpec{after, before, RelationKind::Below} : RelationSpec{before, after, RelationKind::Above};
}

Outcome dataset_generator(Context&) {
  DatasetConfig dc;
  dc.cells = default_cell_counts();
  const auto data = generate_dataset(dc, 901);
  std::map<std::pair<int, int>, int> cells;
  for (const auto& it : data) ++cells[{it.desc.num_objects(), static_cast<int>(it.desc.relations.size())}];
  const std::map<std::pair<int, int>, int> want{{{2, 1}, 200}, {{3, 1}, 50}, {{3, 2}, 50}, {{4, 2}, 50},
                                                {{4, 3}, 50},  {{5, 3}, 50}, {{5, 4}, 50}};
  const bool counts_ok = cells == want && data.size() == 500;

  Rng rng(902);
  int rejected = 0, controls = 0;
  for (int c = 0; c < 1000; ++c) {
    const int n = 3 + static_cast<int>(rng.below(4));
    std::vector<int> ids(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i + 1;
    rng.shuffle(ids);
    const bool vertical = rng.bernoulli(0.5);
    std::vector<RelationSpec> cycle;
    for (int e = 0; e < 3; ++e) cycle.push_back(ordered(ids[e], ids[(e + 1) % 3], vertical, rng.bernoulli(0.5)));
    // Distractors follow a fixed order on both axes.
    std::vector<RelationSpec> rels = cycle;
    std::vector<int> order = ids;
    rng.shuffle(order);
    const int extra = static_cast<int>(rng.below(5));
    for (int e = 0; e < extra; ++e) {
      auto i = rng.below(static_cast<std::uint64_t>(n)), j = rng.below(static_cast<std::uint64_t>(n));
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      rels.push_back(ordered(order[i], order[j], !vertical, rng.bernoulli(0.5)));
    }
    rng.shuffle(rels);
    if (!check_contradictions(rels)) ++rejected;
    cycle.erase(cycle.begin() + static_cast<std::ptrdiff_t>(rng.below(3)));
    if (check_contradictions(cycle)) ++controls;
  }
  return {counts_ok && rejected == 1000 && controls == 1000,
          fmt("default cells %s (%zu items); 3-cycles rejected %d/1000, broken cycles accepted %d/1000",
              cells == want ? "match" : "differ", data.size(), rejected, controls)};
}

// ---- 10: metric oracle ----------------------------------------------------

Outcome metric_oracle(Context&) {
  DatasetConfig dc;
  dc.cells = default_cell_counts();
  const auto data = generate_dataset(dc, 1001);
  const GridSize grid{32, 32};
  long long matched = 0, objects = 0, correct = 0, evaluable = 0, relations = 0;
  for (const auto& it : data) {
    const ToyScene s = paint_scene(it.desc, *it.layout, 0.04, grid);
    const auto det = detect_objects(s);
    const auto m = match_objects(det, it.desc);
    for (const auto& x : m) matched += x.has_value();
    objects += it.desc.num_objects();
    const auto sc = sprel_counts(det, it.desc);
    correct += sc.correct;
    evaluable += sc.evaluable;
    relations += static_cast<long long>(it.desc.relations.size());
  }
  const double recall = static_cast<double>(matched) / static_cast<double>(objects);
  const double sprel = static_cast<double>(correct) / static_cast<double>(evaluable);
  return {recall == 1.0 && sprel == 1.0 && evaluable == relations,
          fmt("500 painted scenes, disc radius 0.04: recall %lld/%lld, sprel %lld/%lld (%lld relations)", matched, objects, correct, evaluable, relations)};
}

// ---- 11: provided masks ---------------------------------------------------

Outcome mask_honoring(Context& ctx) {
  const GeneratorConfig gen;
  const ScoreConfig score;
  const fs::path dir = ctx.workdir / "masks";
  fs::create_directories(dir);
  Rng rng(1101);
  int honored = 0;
  double sum_in = 0.0, sum_out = 0.0;
  for (int f = 0; f < 50; ++f) {
    const int n = 1 + f % 2;
    const auto item = random_scene(n, derive_seed(1102, static_cast<std::uint64_t>(f)));
    Matrix taken = Matrix::Zero(gen.grid.h, gen.grid.w);
    Layout provided;
    for (const auto& c : *item.layout) {
      const double hx = rng.uniform(0.08, 0.2), hy = rng.uniform(0.08, 0.2);
      const bool ellipse = rng.bernoulli(0.5);
      Matrix m = Matrix::Zero(gen.grid.h, gen.grid.w);
      for (int r = 0; r < gen.grid.h; ++r) {
        for (int col = 0; col < gen.grid.w; ++col) {
          const Point2 p = pixel_center(gen.grid, r, col);
          const double u = (p.x - c.x) / hx, v = (p.y - c.y) / hy;
          const bool in = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
          if (in && taken(r, col) == 0.0) m(r, col) = 1.0;
        }
      }
      taken += m;
      provided.regions.push_back({c, 0.0, m});
    }
    const auto path = (dir / fmt("fixture%02d.json", f)).string();
    write_layout_file(path, provided);
    const Layout layout = read_layout_file(path, gen.grid);
    const auto res = optimize(item.desc, layout, gen, score, OptimizerConfig{}, derive_seed(1103, static_cast<std::uint64_t>(f)));
    double in_mean = 0.0, out_mean = 0.0;
    for (int i = 0; i < n; ++i) {
      const Matrix& m = *layout.regions[static_cast<std::size_t>(i)].mask;
      double in = 0.0, out = 0.0, cin = 0.0;
      for (Eigen::Index p = 0; p < m.size(); ++p) {
        const double s = res.scene.signature(p, item.desc.objects[static_cast<std::size_t>(i)]);
        if (m.data()[p] == 1.0) {
          in += s;
          cin += 1.0;
        } else {
          out += s;
        }
      }
      in_mean += in / cin / n;
      out_mean += out / (static_cast<double>(m.size()) - cin) / n;
    }
    sum_in += in_mean / 50;
    sum_out += out_mean / 50;
    if (in_mean > out_mean) ++honored;
  }
  return {honored >= 45, fmt("inside > outside on %d/50 mask fixtures (need >= 45); mean inside %.3f, outside %.3f", honored,
                             sum_in, sum_out)};
}

// ---- 12: CLI determinism --------------------------------------------------

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Runs the command with output confined to `out_dir`; returns a digest of exit
// status, stdout and every file written.
std::string run_and_digest(const std::string& command, const fs::path& out_dir) {
  fs::remove_all(out_dir);
  fs::create_directories(out_dir);
  const fs::path stdout_file = out_dir.string() + ".stdout";
  const int status = std::system((command + " > " + stdout_file.string() + " 2>/dev/null").c_str());
  std::ostringstream d;
  d << "status " << status << " stdout " << std::hex << fnv1a(slurp(stdout_file)) << '\n';
  std::set<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
    if (e.is_regular_file()) files.insert(e.path());
  }
  for (const auto& f : files) d << fs::relative(f, out_dir).string() << ' ' << std::hex << fnv1a(slurp(f)) << '\n';
  return d.str();
}

Outcome cli_determinism(Context& ctx) {
  const fs::path root = ctx.workdir / "cli";
  fs::create_directories(root / "inputs");
  Layout masks;
  const GridSize grid{32, 32};
  for (Point2 c : {Point2{0.3, 0.5}, Point2{0.72, 0.45}}) {
    Matrix m = Matrix::Zero(grid.h, grid.w);
    for (int r = 0; r < grid.h; ++r) {
      for (int col = 0; col < grid.w; ++col) {
        const Point2 p = pixel_center(grid, r, col);
        m(r, col) = std::abs(p.x - c.x) <= 0.12 && std::abs(p.y - c.y) <= 0.15 ? 1.0 : 0.0;
      }
    }
    masks.regions.push_back({c, 0.0, m});
  }
  const auto layout_file = (root / "inputs" / "layout.json").string();
  write_layout_file(layout_file, masks);

  const std::string cli = ctx.cli;
  const std::string data = (root / "data" / "d.jsonl").string();
  const std::string ckpt = (root / "train" / "m.ckpt").string();
  struct Step {
    std::string name;
    std::string command;
  };
  const std::string text = "\"a red cup is to the left of a blue bowl\"";
  const std::vector<Step> steps{
      {"data", cli + " gen-data --out " + data + " --counts 2:1=12,3:2=6,4:3=6 --seed 3"},
      {"train", cli + " train --data " + data + " --out " + ckpt + " --epochs 2 --batch-size 8 --seed 4 --quiet"},
      {"gen", cli + " generate --text " + text + " --ckpt " + ckpt + " --steps 8 --iterations 3 --seed 5 --trace --sidecar --out " +
                  (root / "gen" / "g").string()},
      {"gen_layout", cli + " generate --text " + text + " --layout-file " + layout_file +
                         " --variant no-temporal --steps 8 --iterations 3 --seed 6 --out " + (root / "gen_layout" / "g").string()},
      {"eval", cli + " eval --data " + data + " --ckpt " + ckpt + " --ground-truth-layout --limit 4 --steps 8 --iterations 3 --seed 7 --out " +
                   (root / "eval" / "e.json").string() + " --csv " + (root / "eval" / "e.csv").string()},
      {"bad_text", cli + " generate --text \"a cup sits near a bowl\" --ckpt " + ckpt + " --out " + (root / "bad_text" / "g").string()},
  };
  int same = 0;
  std::string detail;
  for (const auto& s : steps) {
    const auto first = run_and_digest(s.command, root / s.name);
    const auto second = run_and_digest(s.command, root / s.name);
    const bool expect_ok = s.name != "bad_text";
    const bool eq = first == second && (first.starts_with("status 0 ") == expect_ok);
    same += eq;
    const auto files = std::count(first.begin(), first.end(), '\n') - 1;
    detail += fmt("%s %s (%ld files); ", s.name.c_str(), eq ? "identical" : "DIFFERS", static_cast<long>(files));
  }
  return {same == static_cast<int>(steps.size()), detail + "double-run digests"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  std::set<int> only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string key = argv[i];
    if (key == "--cli") {
      ctx.cli = argv[i + 1];
    } else if (key == "--workdir") {
      ctx.workdir = argv[i + 1];
    } else if (key == "--only") {
      std::stringstream ss(argv[i + 1]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else {
      std::cerr << "unknown argument " << key << '\n';
      return 2;
    }
  }
  if (ctx.cli.empty() || ctx.workdir.empty()) {
    std::cerr << "usage: acceptance --cli PATH --workdir DIR [--only 1,2,...]\n";
    return 2;
  }
  fs::create_directories(ctx.workdir);
  apply_thread_limit_from_env();

  const std::vector<Criterion> criteria{
      {1, "attention identities", attention_identities},
      {2, "attention oracle equivalence", attention_oracles},
      {3, "gradient checks", gradient_checks},
      {4, "GMM NLL oracle", gmm_oracle},
      {5, "layout training", layout_training},
      {6, "ablation ordering", ablation_ordering},
      {7, "ground-truth vs predicted layout", gt_vs_predicted},
      {8, "optimization efficacy", optimization_efficacy},
      {9, "dataset generator", dataset_generator},
      {10, "metric oracle", metric_oracle},
      {11, "provided mask honoring", mask_honoring},
      {12, "CLI determinism", cli_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << fmt(" (%.1fs)", secs)
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
