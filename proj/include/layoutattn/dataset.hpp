#pragma once

#include "layoutattn/scene_dsl.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace layoutattn {

/// Number of descriptions to emit with a given object and relation count.
struct CellCount {
  int objects = 2;
  int relations = 1;
  int count = 0;

  friend bool operator==(const CellCount&, const CellCount&) = default;
};

struct DatasetConfig {
  std::vector<CellCount> cells;
  bool emit_layout = true;
  double color_probability = 0.5;
  /// Minimum coordinate gap between related centers in emitted layouts.
  double layout_margin = 0.15;
  double layout_lo = 0.1;
  double layout_hi = 0.9;
  double min_separation = 0.12;  // between any two centers, related or not
};

/// The 500-description cell table: 200 at 2/1, then 50 each at 3/1, 3/2,
/// 4/2, 4/3, 5/3, 5/4.
std::vector<CellCount> default_cell_counts();

/// Parses "2:1=10,3:2=5" into cells. Throws ConfigError.
std::vector<CellCount> parse_cell_counts(const std::string& spec);

struct DatasetItem {
  SceneDescription desc;
  /// Ground-truth centers, indexed like desc.objects.
  std::optional<std::vector<Point2>> layout;

  friend bool operator==(const DatasetItem&, const DatasetItem&) = default;
};

/// Deterministic given (config, seed). Each cell uses its own derived seed so
/// cells may be generated independently. Throws ConfigError on infeasible cells.
std::vector<DatasetItem> generate_dataset(const DatasetConfig& config, std::uint64_t seed);

/// Samples one description with `objects` objects and `relations` relations.
DatasetItem sample_description(int objects, int relations, const DatasetConfig& config,
                               std::uint64_t seed);

/// Centers in [lo, hi]^2 satisfying every relation with the given margin.
std::vector<Point2> sample_consistent_layout(int num_objects, std::span<const RelationSpec> relations,
                                             double margin, double lo, double hi,
                                             std::uint64_t seed, double min_separation = 0.0);

/// Same relation structure under fresh nouns and colors, new wording and
/// random mirror flips (relations and layout flipped together).
DatasetItem augment_item(const DatasetItem& item, std::uint64_t seed);

void write_dataset_jsonl(std::ostream& out, const std::vector<DatasetItem>& items);
std::vector<DatasetItem> read_dataset_jsonl(std::istream& in);

std::string item_to_json_line(const DatasetItem& item);
DatasetItem item_from_json_line(const std::string& line);

}  // namespace layoutattn
