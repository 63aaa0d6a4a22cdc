#pragma once

#include "layoutattn/attention.hpp"
#include "layoutattn/common.hpp"
#include "layoutattn/kernels.hpp"
#include "layoutattn/layout.hpp"
#include "layoutattn/scene_dsl.hpp"
#include "layoutattn/vocabulary.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace layoutattn {

struct GeneratorConfig {
  GridSize grid;
  int latent_dim = 40;  // nouns, colors, then a function-word subspace
  int steps = 50;
  double step_size = 0.0;  // 0 selects 1 / steps
  double attention_gain = 1.5;  // logit scale along the token basis
  double value_gain = 16.0;
  double projection_noise = 0.05;
  double decode_gain = 3.0;
  double decode_threshold = 3.5;
  double noise_smoothing = 1.5;  // Gaussian blur of the initial latent, in pixels
  double attribute_binding = 1.0;  // share of a color word mixed into the next noun
  double function_word_scale = 1.0;  // embedding norm of non-noun, non-color words
  std::uint64_t embedding_seed = 0x6c61796f7574ULL;
  ExecPolicy policy = ExecPolicy::Parallel;

  [[nodiscard]] double eta() const { return step_size > 0.0 ? step_size : 1.0 / steps; }
};

/// Frozen text embedding of the generator. Noun and color tokens map to
/// orthonormal basis directions that double as decode readouts; function
/// words get seeded unit vectors inside the remaining subspace. A noun
/// directly after a color word also carries that color's direction.
class TokenEmbeddings {
 public:
  explicit TokenEmbeddings(const GeneratorConfig& config);

  [[nodiscard]] int dim() const { return static_cast<int>(table_.cols()); }
  [[nodiscard]] const Matrix& table() const { return table_; }
  [[nodiscard]] const Matrix& w_q() const { return w_q_; }
  [[nodiscard]] const Matrix& w_k() const { return w_k_; }
  [[nodiscard]] const Matrix& w_v() const { return w_v_; }
  [[nodiscard]] int noun_dim(NounId n) const { return n; }
  [[nodiscard]] int color_dim(ColorId c) const { return kNumNouns + c; }

  /// Keys and values of a text; throws VocabError on unknown tokens.
  [[nodiscard]] TokenKV embed(std::string_view text) const;
  [[nodiscard]] TokenKV embed_ids(std::span<const int> ids) const;

 private:
  Matrix table_;
  Matrix w_q_, w_k_, w_v_;
  double attribute_binding_ = 1.0;
};

/// Decoded generator output: per-pixel noun and color activations in (0, 1),
/// one pixel per row (row-major pixel order).
struct ToyScene {
  GridSize grid;
  Matrix nouns;   // pixels x 24
  Matrix colors;  // pixels x 8

  /// noun * color activation of an object at pixel p (color factor omitted
  /// when the object has none).
  [[nodiscard]] double signature(Eigen::Index p, const ObjectSpec& obj) const;
  friend bool operator==(const ToyScene&, const ToyScene&) = default;
};

ToyScene blank_scene(GridSize grid);

/// d loss / d activations, shaped like ToyScene.
struct SceneGradient {
  Matrix nouns;
  Matrix colors;
};

/// Seeded initial latent Z_T (pixels x d): standard normal, blurred spatially
/// per channel, rescaled so every entry keeps unit variance.
Matrix initial_latent(const GeneratorConfig& config, std::uint64_t seed);

/// One description prepared for repeated generation under different lambda.
/// Pixels outside every region never depend on lambda; their result is
/// computed once here.
class GenerationProblem {
 public:
  GenerationProblem(const TokenEmbeddings& embeddings, const GeneratorConfig& config,
                    const SceneDescription& desc, MaskSet weights, std::uint64_t seed);

  [[nodiscard]] int objects() const { return static_cast<int>(weights_.size()); }
  [[nodiscard]] int steps() const { return config_.steps; }
  [[nodiscard]] const MaskSet& weights() const { return weights_; }

  /// lambda is objects() x steps(); column t - 1 holds the weights of
  /// denoising step t (steps run from t = T down to 1).
  [[nodiscard]] ToyScene run(const Matrix& lambda) const;

  /// Reverse-mode gradient of a scalar loss with respect to lambda, given the
  /// loss gradient with respect to the scene produced by run(lambda).
  [[nodiscard]] Matrix lambda_gradient(const Matrix& lambda, const SceneGradient& grad) const;

  /// run() and lambda_gradient() in one pass: the forward tape is kept so the
  /// backward sweep does not repeat it. scene_grad maps the scene to d loss /
  /// d scene. Reuses an internal buffer, so concurrent calls on one object
  /// are not allowed.
  [[nodiscard]] Matrix run_with_gradient(const Matrix& lambda,
                                         const std::function<SceneGradient(const ToyScene&)>& scene_grad,
                                         ToyScene& scene) const;

  /// Z_0 for every pixel (pixels x d).
  [[nodiscard]] Matrix final_latent(const Matrix& lambda) const;

 private:
  struct Attn {
    Matrix proj;    // d x l logit projection
    Matrix values;  // l x d
  };

  // Per-pixel forward record: latents, then global and local probabilities
  // and outputs of every step.
  struct Tape {
    double* traj = nullptr;
    double* pg = nullptr;
    double* og = nullptr;
    std::vector<double*> pl, ol;
  };

  void check_lambda(const Matrix& lambda) const;
  void check_scene_gradient(const SceneGradient& grad) const;
  [[nodiscard]] std::size_t tape_size() const;
  [[nodiscard]] Tape tape_at(double* base) const;
  [[nodiscard]] Eigen::Index max_tokens() const;
  void forward_tape(Eigen::Index p, const Matrix& lambda, const Tape& tape) const;
  void backward_tape(Eigen::Index p, const Matrix& lambda, const Tape& tape, const SceneGradient& grad,
                     Matrix& acc, double* scratch) const;
  void decode_row(const double* z, Eigen::Index p, ToyScene& scene) const;
  void integrate_pixel(Eigen::Index p, const Matrix& lambda, double* z) const;

  GeneratorConfig config_;
  std::vector<Attn> locals_;
  Attn global_;
  MaskSet weights_;
  Matrix z_init_;
  std::vector<Eigen::Index> active_;  // pixels with some nonzero region weight
  std::vector<std::vector<Eigen::Index>> active_by_row_;
  Matrix z_final_static_;             // rows for inactive pixels
  std::vector<bool> is_active_;
  mutable std::vector<double> tape_buffer_;
};

/// Convenience: region masks from the layout (or soft regions when
/// soft_sigma > 0), then one run.
ToyScene generate(const SceneDescription& desc, const Layout& layout, const Matrix& lambda,
                  const GeneratorConfig& config, std::uint64_t seed, double soft_sigma = 0.0);

/// Axis-aligned crop window in pixel units, [x0, x1) x [y0, y1).
struct CropWindow {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  [[nodiscard]] int col_begin() const;
  [[nodiscard]] int col_end() const;
  [[nodiscard]] int row_begin() const;
  [[nodiscard]] int row_end() const;
};

/// Smallest square around the region (circle, or explicit mask bounding box),
/// clipped to the grid.
CropWindow crop_window(const Region& region, GridSize grid);

inline constexpr int kPatchSize = 16;

/// Bilinear resample of the crop window to patch x patch.
ToyScene crop_region(const ToyScene& scene, const Region& region, int patch = kPatchSize);

/// Adjoint of crop_region: adds the pull-back of a patch gradient into full.
void crop_region_adjoint(const SceneGradient& patch_grad, const Region& region, GridSize grid,
                         SceneGradient& full, int patch = kPatchSize);

}  // namespace layoutattn
