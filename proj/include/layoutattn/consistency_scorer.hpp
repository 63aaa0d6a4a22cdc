#pragma once

#include "layoutattn/layout.hpp"
#include "layoutattn/scene_dsl.hpp"
#include "layoutattn/toy_generator.hpp"

#include <vector>

namespace layoutattn {

struct ScoreConfig {
  double gamma = 5.0;         // weight of the local terms
  double temperature = 0.1;   // smooth-max temperature of the global term
  int patch = kPatchSize;
};

/// Mean over the patch of the object's signature (noun * color).
double local_score(const ToyScene& patch, const ObjectSpec& obj);

/// Softmax(s / temperature)-weighted mean of one object's signature over all
/// pixels: a smooth maximum that stays inside [min s, max s].
double smooth_max_presence(const ToyScene& scene, const ObjectSpec& obj, double temperature);

/// (1/N) sum_i smooth_max_presence over the objects.
double global_score(const ToyScene& scene, const SceneDescription& desc, double temperature = 0.1);

struct AttendTerms {
  double loss = 0.0;
  double global = 0.0;
  std::vector<double> local;  // one per object
};

/// loss = -global - gamma * sum_i local_i, locals over crop_region(scene, R_i).
/// When grad is given it receives d loss / d scene.
AttendTerms attend_terms(const ToyScene& scene, const SceneDescription& desc, const Layout& layout,
                         const ScoreConfig& config, SceneGradient* grad = nullptr);

double attend_loss(const ToyScene& scene, const SceneDescription& desc, const Layout& layout,
                   const ScoreConfig& config);

}  // namespace layoutattn
