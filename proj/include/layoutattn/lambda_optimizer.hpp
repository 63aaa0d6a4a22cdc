#pragma once

#include "layoutattn/attention.hpp"
#include "layoutattn/consistency_scorer.hpp"
#include "layoutattn/toy_generator.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace layoutattn {

enum class Variant { Full, NoSpatial, NoTemporal, NoOptimization };
enum class GradientMode { Analytic, FiniteDifference };

/// "full", "no-spatial", "no-temporal", "no-optimization".
const char* to_string(Variant v);
Variant variant_from_string(std::string_view s);
const char* to_string(GradientMode m);
GradientMode gradient_mode_from_string(std::string_view s);

struct OptimizerConfig {
  double lr = 0.05;
  int iterations = 50;
  double clamp_lo = -1.0;
  double clamp_hi = 2.0;
  GradientMode gradient = GradientMode::Analytic;
  Variant variant = Variant::Full;
  double fd_step = 1e-3;
};

/// Masks and lambda constraints implied by a variant.
struct VariantSetup {
  MaskSet masks;
  bool tied_over_steps = false;  // one free weight per object, tiled over T
  bool optimize = true;
  bool local_terms = true;       // false: the loss keeps only the global term
};

/// soft_sigma > 0 replaces hard circles with soft regions (ignored by
/// NoSpatial, whose masks are all ones).
VariantSetup variant_setup(Variant variant, const SceneDescription& desc, const Layout& layout, GridSize grid,
                           double soft_sigma = 0.0);

/// attend_loss(generate(lambda)) for one description, prepared once.
class LambdaObjective {
 public:
  LambdaObjective(const SceneDescription& desc, const Layout& layout, const GeneratorConfig& gen,
                  const ScoreConfig& score, MaskSet masks, std::uint64_t seed);

  [[nodiscard]] int objects() const { return problem_.objects(); }
  [[nodiscard]] int steps() const { return problem_.steps(); }
  [[nodiscard]] ToyScene scene(const Matrix& lambda) const { return problem_.run(lambda); }
  [[nodiscard]] double value(const Matrix& lambda) const;
  /// Reverse-mode gradient; returns the loss as well.
  double value_and_gradient(const Matrix& lambda, Matrix& grad) const;
  [[nodiscard]] const GenerationProblem& problem() const { return problem_; }

 private:
  TokenEmbeddings embeddings_;
  SceneDescription desc_;
  Layout layout_;
  ScoreConfig score_;
  GenerationProblem problem_;
};

/// Central differences, one entry at a time (entries evaluated in parallel
/// under ExecPolicy::Parallel).
Matrix numeric_gradient(const Matrix& x, const std::function<double(const Matrix&)>& f, double step,
                        ExecPolicy policy = ExecPolicy::Parallel);

struct OptimizeResult {
  Matrix lambda;                   // best-loss weights, objects x steps
  ToyScene scene;                  // generated with lambda
  AttendTerms terms;               // full attend loss terms of scene
  std::vector<double> loss_trace;  // objective at lambda_0 .. lambda_iterations
  double initial_loss = 0.0;
  double best_loss = 0.0;
  int best_iteration = 0;
  OverlapDiagnostics overlap;
};

/// Adam on the variant's objective from lambda = 1/N, clamping after every
/// step; returns the best iterate. Throws NonFiniteLossError.
OptimizeResult optimize(const SceneDescription& desc, const Layout& layout, const GeneratorConfig& gen,
                        const ScoreConfig& score, const OptimizerConfig& opt, std::uint64_t seed,
                        double soft_sigma = 0.0);

}  // namespace layoutattn
