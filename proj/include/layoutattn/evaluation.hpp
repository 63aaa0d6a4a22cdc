#pragma once

#include "layoutattn/dataset.hpp"
#include "layoutattn/lambda_optimizer.hpp"
#include "layoutattn/layout_predictor.hpp"
#include "layoutattn/toy_generator.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace layoutattn {

struct DetectionConfig {
  double threshold = 0.5;
  int min_area = 4;
};

struct Detection {
  NounId noun = 0;
  ColorId color = 0;
  int row_begin = 0, col_begin = 0, row_end = 0, col_end = 0;  // half-open pixel box
  Point2 centroid;
  int area = 0;
};

/// Pixels where some noun channel exceeds the threshold are foreground; each
/// 4-connected foreground component of at least min_area pixels becomes one
/// detection labelled with its argmax mean noun and color channels.
std::vector<Detection> detect_objects(const ToyScene& scene, const DetectionConfig& config = {});

/// For each object, the index of its matched detection: the largest detection
/// with the same noun and (if the object has one) the same color that no
/// earlier object claimed.
std::vector<std::optional<std::size_t>> match_objects(std::span<const Detection> detections,
                                                      const SceneDescription& desc);

double object_recall(std::span<const Detection> detections, const SceneDescription& desc);

struct SprelCounts {
  int correct = 0;
  int evaluable = 0;  // relations whose two objects were matched
  std::map<RelationKind, std::pair<int, int>> by_kind;  // correct, evaluable
};
SprelCounts sprel_counts(std::span<const Detection> detections, const SceneDescription& desc);

/// Share of correct relations among evaluable ones; nullopt when none are.
std::optional<double> sprel_precision(std::span<const Detection> detections, const SceneDescription& desc);

/// Scene with a saturated disc of each object's noun (and color) at its
/// center; later objects overwrite earlier ones.
ToyScene paint_scene(const SceneDescription& desc, std::span<const Point2> centers, double radius, GridSize grid);

struct Rate {
  long long hits = 0;
  long long total = 0;
  [[nodiscard]] std::optional<double> value() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(total);
  }
  Rate& operator+=(const Rate& o) {
    hits += o.hits;
    total += o.total;
    return *this;
  }
};

enum class LayoutSource { Predicted, GroundTruth };
const char* to_string(LayoutSource s);

struct EvalRow {
  Variant variant = Variant::Full;
  LayoutSource layout = LayoutSource::Predicted;
  int items = 0;
  int failures = 0;
  Rate recall;
  Rate sprel;
  std::map<RelationKind, Rate> sprel_by_kind;
  std::map<std::pair<int, int>, std::pair<Rate, Rate>> by_cell;  // (N, M) -> recall, sprel
  double mean_attend_loss = 0.0;  // over successful items
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string provenance_json = "{}";

  [[nodiscard]] const EvalRow* find(Variant v, LayoutSource s) const;
  [[nodiscard]] std::string to_json() const;
  [[nodiscard]] std::string to_csv() const;
};

struct SuiteConfig {
  std::vector<Variant> variants{Variant::Full, Variant::NoSpatial, Variant::NoTemporal, Variant::NoOptimization};
  bool predicted_layout = true;      // needs a predictor
  bool ground_truth_layout = false;  // adds a Full row on dataset layouts
  GeneratorConfig gen;
  ScoreConfig score;
  OptimizerConfig opt;
  DetectionConfig detect;
  double radius = 0.2;
  bool edge_clamp = false;
  SampleMode sample_mode = SampleMode::Sample;
  double soft_sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Runs every (layout source, variant) pair on every item with per-item
/// seeds shared across rows. Item errors are counted, never thrown.
EvalReport run_suite(std::span<const DatasetItem> dataset, const PredictorParams* predictor,
                     const SuiteConfig& config);

}  // namespace layoutattn
