#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

namespace layoutattn {

/// Row-major dense matrix; pixel-indexed tensors store one pixel per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Normalized image coordinate. Origin top-left, x rightward, y downward.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

struct GridSize {
  int h = 32;
  int w = 32;

  [[nodiscard]] int pixels() const { return h * w; }
  friend bool operator==(const GridSize&, const GridSize&) = default;
};

/// Normalized center of pixel (row, col).
inline Point2 pixel_center(GridSize grid, int row, int col) {
  return {(col + 0.5) / grid.w, (row + 0.5) / grid.h};
}

inline const char* version_string() {
#ifdef LAYOUTATTN_VERSION
  return LAYOUTATTN_VERSION;
#else
  return "dev";
#endif
}

}  // namespace layoutattn
