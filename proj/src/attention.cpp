#include "layoutattn/attention.hpp"

#include "layoutattn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace layoutattn {

namespace {

void check_kv(const Matrix& q, const TokenKV& kv, const char* what) {
  if (kv.k.rows() < 1) throw ShapeError(std::string(what) + ": no tokens");
  if (q.cols() < 1) throw ShapeError(std::string(what) + ": zero head dimension");
  if (kv.k.cols() != q.cols()) throw ShapeError(std::string(what) + ": key width differs from query width");
  if (kv.v.rows() != kv.k.rows()) throw ShapeError(std::string(what) + ": key/value token counts differ");
}

Matrix combine(const Matrix& q, const TokenKV& global, std::span<const TokenKV> locals, const MaskSet& masks,
               std::span<const double> lambda, ExecPolicy policy) {
  check_kv(q, global, "global");
  if (locals.size() != masks.size() || lambda.size() != masks.size()) {
    throw ShapeError("locals, masks and lambda must have one entry per object");
  }
  std::vector<Matrix> ks, vs;
  for (const auto& kv : locals) {
    check_kv(q, kv, "local");
    if (kv.v.cols() != global.v.cols()) throw ShapeError("local value width differs from global");
    ks.push_back(kv.k);
    vs.push_back(kv.v);
  }
  for (const auto& m : masks) {
    if (m.size() != q.rows()) throw ShapeError("mask size does not match the number of query pixels");
  }
  return kernels::combined(q, global.k, global.v, ks, vs, masks, lambda, policy);
}

}  // namespace

Matrix cross_attention(const Matrix& q, const TokenKV& kv, ExecPolicy policy) {
  check_kv(q, kv, "cross_attention");
  return kernels::attention(q, kv.k, kv.v, policy);
}

Matrix combined_attention(const Matrix& q, const TokenKV& global, std::span<const TokenKV> locals,
                          const MaskSet& masks, std::span<const double> lambda, ExecPolicy policy) {
  if (!is_binary(masks)) throw ConfigError("hard masks must be binary; use combined_attention_soft");
  return combine(q, global, locals, masks, lambda, policy);
}

Matrix combined_attention_soft(const Matrix& q, const TokenKV& global, std::span<const TokenKV> locals,
                               const MaskSet& weights, std::span<const double> lambda, ExecPolicy policy) {
  return combine(q, global, locals, weights, lambda, policy);
}

Matrix soft_region(Point2 center, double sigma, GridSize grid) {
  if (!(sigma > 0.0)) throw ConfigError("soft region sigma must be positive");
  Matrix g(grid.h, grid.w);
  for (int r = 0; r < grid.h; ++r) {
    for (int c = 0; c < grid.w; ++c) {
      const Point2 p = pixel_center(grid, r, c);
      const double dx = p.x - center.x, dy = p.y - center.y;
      g(r, c) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  return g;
}

MaskSet soft_regions(const Layout& layout, double sigma, GridSize grid) {
  MaskSet out;
  for (const auto& region : layout.regions) out.push_back(soft_region(region.center, sigma, grid));
  return out;
}

OverlapDiagnostics overlap_diagnostics(const MaskSet& masks, std::span<const double> lambda) {
  OverlapDiagnostics diag;
  if (masks.empty()) return diag;
  const auto n = masks.front().size();
  for (Eigen::Index p = 0; p < n; ++p) {
    int covering = 0;
    double c = 1.0;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      const double m = masks[i].data()[p];
      if (m != 0.0) ++covering;
      c -= lambda[i] * m;
    }
    if (covering >= 2) ++diag.overlap_pixels;
    if (c < 0.0 || c > 1.0) ++diag.out_of_range_pixels;
    diag.min_coefficient = std::min(diag.min_coefficient, c);
    diag.max_coefficient = std::max(diag.max_coefficient, c);
  }
  return diag;
}

}  // namespace layoutattn
