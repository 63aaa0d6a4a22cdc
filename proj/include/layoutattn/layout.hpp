#pragma once

#include "layoutattn/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace layoutattn {

/// Pixel region of one object: a circle, or an explicit binary mask that
/// replaces the circle when present.
struct Region {
  Point2 center;
  double radius = 0.2;
  std::optional<Matrix> mask;  // h x w, entries in {0, 1}
};

struct Layout {
  std::vector<Region> regions;  // indexed like SceneDescription::objects

  [[nodiscard]] std::vector<Point2> centers() const;
};

/// Binary (or soft) per-object weight maps, each h x w.
using MaskSet = std::vector<Matrix>;

/// M_i(x,y) = 1 iff the pixel center lies in R_i (closed disk). Explicit
/// masks pass through. Throws ShapeError for grids below 4 or mask mismatch.
MaskSet region_mask(const Layout& layout, GridSize grid);

/// Every mask all ones (the no-spatial-control ablation).
MaskSet full_masks(int count, GridSize grid);

bool is_binary(const MaskSet& masks);

/// Layout file: {"objects": [{"id", "cx", "cy", "r"}]} or
/// {"objects": [{"id", "mask_pgm": path}]}; relative PGM paths resolve
/// against the layout file's directory. Masks must match `grid`.
Layout read_layout_file(const std::string& path, GridSize grid);
/// Writes circles inline; explicit masks go to sibling P2 files.
/// `provenance_json` (an object) is stored under "provenance".
void write_layout_file(const std::string& path, const Layout& layout,
                       const std::string& provenance_json = "{}");

}  // namespace layoutattn
