#include "layoutattn/consistency_scorer.hpp"

#include "layoutattn/errors.hpp"

#include <cmath>

namespace layoutattn {

namespace {

// Adds d(mean signature)/d activations, scaled, into grad.
void add_signature_grad(const ToyScene& scene, const ObjectSpec& obj, Eigen::Index p, double scale,
                        SceneGradient& grad) {
  const double noun = scene.nouns(p, obj.noun);
  if (obj.color) {
    const double color = scene.colors(p, *obj.color);
    grad.nouns(p, obj.noun) += scale * color;
    grad.colors(p, *obj.color) += scale * noun;
  } else {
    grad.nouns(p, obj.noun) += scale;
  }
}

// Softmax weights of s / temperature and their weighted mean.
double smooth_max_with_weights(const ToyScene& scene, const ObjectSpec& obj, double temperature,
                               Vector* weights_out) {
  if (!(temperature > 0.0)) throw ConfigError("smooth-max temperature must be positive");
  const Eigen::Index n = scene.nouns.rows();
  Vector s(n);
  for (Eigen::Index p = 0; p < n; ++p) s[p] = scene.signature(p, obj);
  Vector w = ((s.array() - s.maxCoeff()) / temperature).exp();
  w /= w.sum();
  const double value = w.dot(s);
  if (weights_out) *weights_out = std::move(w);
  return value;
}

}  // namespace

double local_score(const ToyScene& patch, const ObjectSpec& obj) {
  const Eigen::Index n = patch.nouns.rows();
  double sum = 0.0;
  for (Eigen::Index p = 0; p < n; ++p) sum += patch.signature(p, obj);
  return sum / static_cast<double>(n);
}

double smooth_max_presence(const ToyScene& scene, const ObjectSpec& obj, double temperature) {
  return smooth_max_with_weights(scene, obj, temperature, nullptr);
}

double global_score(const ToyScene& scene, const SceneDescription& desc, double temperature) {
  if (desc.objects.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& obj : desc.objects) sum += smooth_max_presence(scene, obj, temperature);
  return sum / static_cast<double>(desc.objects.size());
}

AttendTerms attend_terms(const ToyScene& scene, const SceneDescription& desc, const Layout& layout,
                         const ScoreConfig& config, SceneGradient* grad) {
  if (layout.regions.size() != desc.objects.size()) throw ShapeError("layout must have one region per object");
  if (config.gamma < 0.0) throw ConfigError("gamma must be non-negative");
  AttendTerms terms;
  const auto n_obj = static_cast<double>(desc.objects.size());
  if (grad) {
    grad->nouns = Matrix::Zero(scene.nouns.rows(), scene.nouns.cols());
    grad->colors = Matrix::Zero(scene.colors.rows(), scene.colors.cols());
  }
  for (const auto& obj : desc.objects) {
    Vector w;
    const double m = smooth_max_with_weights(scene, obj, config.temperature, grad ? &w : nullptr);
    terms.global += m / n_obj;
    if (grad) {
      // d(sum_p w_p s_p)/d s_q = w_q (1 + (s_q - m) / temperature)
      for (Eigen::Index p = 0; p < w.size(); ++p) {
        const double ds = w[p] * (1.0 + (scene.signature(p, obj) - m) / config.temperature);
        if (ds != 0.0) add_signature_grad(scene, obj, p, -ds / n_obj, *grad);
      }
    }
  }
  double local_sum = 0.0;
  for (std::size_t i = 0; i < desc.objects.size(); ++i) {
    const auto& obj = desc.objects[i];
    const ToyScene patch = crop_region(scene, layout.regions[i], config.patch);
    const double ls = local_score(patch, obj);
    terms.local.push_back(ls);
    local_sum += ls;
    if (grad && config.gamma != 0.0) {
      SceneGradient pg{Matrix::Zero(patch.nouns.rows(), patch.nouns.cols()),
                       Matrix::Zero(patch.colors.rows(), patch.colors.cols())};
      const double scale = -config.gamma / static_cast<double>(patch.nouns.rows());
      for (Eigen::Index p = 0; p < patch.nouns.rows(); ++p) add_signature_grad(patch, obj, p, scale, pg);
      crop_region_adjoint(pg, layout.regions[i], scene.grid, *grad, config.patch);
    }
  }
  terms.loss = -terms.global - config.gamma * local_sum;
  return terms;
}

double attend_loss(const ToyScene& scene, const SceneDescription& desc, const Layout& layout,
                   const ScoreConfig& config) {
  return attend_terms(scene, desc, layout, config).loss;
}

}  // namespace layoutattn
