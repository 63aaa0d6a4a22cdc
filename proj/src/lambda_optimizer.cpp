#include "layoutattn/lambda_optimizer.hpp"

#include "layoutattn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace layoutattn {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoSpatial: return "no-spatial";
    case Variant::NoTemporal: return "no-temporal";
    case Variant::NoOptimization: return "no-optimization";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  for (auto v : {Variant::Full, Variant::NoSpatial, Variant::NoTemporal, Variant::NoOptimization}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + std::string(s) +
                    "' (expected full, no-spatial, no-temporal or no-optimization)");
}

const char* to_string(GradientMode m) { return m == GradientMode::Analytic ? "analytic" : "finite-difference"; }

GradientMode gradient_mode_from_string(std::string_view s) {
  if (s == "analytic") return GradientMode::Analytic;
  if (s == "finite-difference" || s == "fd") return GradientMode::FiniteDifference;
  throw ConfigError("unknown gradient mode '" + std::string(s) + "'");
}

VariantSetup variant_setup(Variant variant, const SceneDescription& desc, const Layout& layout, GridSize grid,
                           double soft_sigma) {
  VariantSetup setup;
  if (variant == Variant::NoSpatial) {
    setup.masks = full_masks(desc.num_objects(), grid);
    setup.local_terms = false;
  } else if (soft_sigma > 0.0) {
    setup.masks = soft_regions(layout, soft_sigma, grid);
  } else {
    setup.masks = region_mask(layout, grid);
  }
  setup.tied_over_steps = variant == Variant::NoTemporal;
  setup.optimize = variant != Variant::NoOptimization;
  return setup;
}

LambdaObjective::LambdaObjective(const SceneDescription& desc, const Layout& layout, const GeneratorConfig& gen,
                                 const ScoreConfig& score, MaskSet masks, std::uint64_t seed)
    : embeddings_(gen),
      desc_(desc),
      layout_(layout),
      score_(score),
      problem_(embeddings_, gen, desc, std::move(masks), seed) {}

double LambdaObjective::value(const Matrix& lambda) const {
  return attend_terms(problem_.run(lambda), desc_, layout_, score_).loss;
}

double LambdaObjective::value_and_gradient(const Matrix& lambda, Matrix& grad) const {
  double loss = 0.0;
  ToyScene scene;
  grad = problem_.run_with_gradient(
      lambda,
      [&](const ToyScene& s) {
        SceneGradient sg;
        loss = attend_terms(s, desc_, layout_, score_, &sg).loss;
        return sg;
      },
      scene);
  return loss;
}

Matrix numeric_gradient(const Matrix& x, const std::function<double(const Matrix&)>& f, double step,
                        ExecPolicy policy) {
  Matrix grad(x.rows(), x.cols());
  const auto n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(dynamic) if (policy == ExecPolicy::Parallel)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    Matrix xp = x, xm = x;
    xp.data()[k] += step;
    xm.data()[k] -= step;
    grad.data()[k] = (f(xp) - f(xm)) / (2.0 * step);
  }
  return grad;
}

OptimizeResult optimize(const SceneDescription& desc, const Layout& layout, const GeneratorConfig& gen,
                        const ScoreConfig& score, const OptimizerConfig& opt, std::uint64_t seed,
                        double soft_sigma) {
  if (!(opt.lr > 0.0) || opt.iterations < 0 || !(opt.clamp_lo < opt.clamp_hi)) {
    throw ConfigError("invalid optimizer configuration");
  }
  const int n = desc.num_objects();
  if (n < 1) throw ConfigError("description has no objects");
  VariantSetup setup = variant_setup(opt.variant, desc, layout, gen.grid, soft_sigma);
  ScoreConfig objective_score = score;
  if (!setup.local_terms) objective_score.gamma = 0.0;
  const MaskSet masks_copy = setup.masks;
  const LambdaObjective objective(desc, layout, gen, objective_score, std::move(setup.masks), seed);
  const int T = gen.steps;

  // Free parameters: the full N x T matrix, or one column tiled over T.
  const int free_cols = setup.tied_over_steps ? 1 : T;
  auto expand = [&](const Matrix& free) -> Matrix {
    if (!setup.tied_over_steps) return free;
    return free.col(0).replicate(1, T);
  };
  auto reduce = [&](const Matrix& g) -> Matrix {
    if (!setup.tied_over_steps) return g;
    return g.rowwise().sum();
  };
  auto eval = [&](const Matrix& free, Matrix* grad) {
    double loss = 0.0;
    if (grad == nullptr) {
      loss = objective.value(expand(free));
    } else if (opt.gradient == GradientMode::Analytic) {
      Matrix g;
      loss = objective.value_and_gradient(expand(free), g);
      *grad = reduce(g);
    } else {
      loss = objective.value(expand(free));
      *grad = numeric_gradient(
          free, [&](const Matrix& x) { return objective.value(expand(x)); }, opt.fd_step, gen.policy);
    }
    if (!std::isfinite(loss)) throw NonFiniteLossError("attend loss became non-finite");
    return loss;
  };

  Matrix free = Matrix::Constant(n, free_cols, 1.0 / n);
  Matrix best = free;
  OptimizeResult result;
  const int iterations = setup.optimize ? opt.iterations : 0;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Matrix m = Matrix::Zero(n, free_cols), v = Matrix::Zero(n, free_cols), grad;
  for (int it = 0; it <= iterations; ++it) {
    const bool last = it == iterations;
    const double loss = eval(free, last ? nullptr : &grad);
    result.loss_trace.push_back(loss);
    if (it == 0 || loss < result.best_loss) {
      result.best_loss = loss;
      result.best_iteration = it;
      best = free;
    }
    if (last) break;
    if (!grad.allFinite()) throw NonFiniteLossError("lambda gradient became non-finite");
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(kBeta1, it + 1);
    const double bc2 = 1.0 - std::pow(kBeta2, it + 1);
    free.array() -= opt.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kEps);
    free = free.cwiseMax(opt.clamp_lo).cwiseMin(opt.clamp_hi);
  }
  result.initial_loss = result.loss_trace.front();
  result.lambda = expand(best);
  result.scene = objective.scene(result.lambda);
  result.terms = attend_terms(result.scene, desc, layout, score);
  // Worst case over steps.
  std::vector<double> lam(static_cast<std::size_t>(n));
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < n; ++i) lam[static_cast<std::size_t>(i)] = result.lambda(i, t);
    const auto d = overlap_diagnostics(masks_copy, lam);
    if (t == 0) {
      result.overlap = d;
      continue;
    }
    result.overlap.out_of_range_pixels = std::max(result.overlap.out_of_range_pixels, d.out_of_range_pixels);
    result.overlap.min_coefficient = std::min(result.overlap.min_coefficient, d.min_coefficient);
    result.overlap.max_coefficient = std::max(result.overlap.max_coefficient, d.max_coefficient);
  }
  return result;
}

}  // namespace layoutattn
