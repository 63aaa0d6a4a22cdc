#pragma once

#include "layoutattn/common.hpp"
#include "layoutattn/kernels.hpp"
#include "layoutattn/layout.hpp"

#include <span>
#include <vector>

namespace layoutattn {

/// Per-token keys and values of one text (l x d each).
struct TokenKV {
  Matrix k;
  Matrix v;
};

/// softmax(Q K^T / sqrt(d)) V with row-max stabilization. Q is (h*w) x d.
Matrix cross_attention(const Matrix& q, const TokenKV& kv, ExecPolicy policy = ExecPolicy::Parallel);

/// Masked combination of global and local attention for one step:
/// sum_i lambda_i M_i * Attn_i + (1 - sum_i lambda_i M_i) * Attn_global.
/// Masks must be binary; the coefficient is not clamped.
Matrix combined_attention(const Matrix& q, const TokenKV& global, std::span<const TokenKV> locals,
                          const MaskSet& masks, std::span<const double> lambda,
                          ExecPolicy policy = ExecPolicy::Parallel);

/// G(x, y) = exp(-|(x, y) - c|^2 / (2 sigma^2)) at pixel centers.
Matrix soft_region(Point2 center, double sigma, GridSize grid);
MaskSet soft_regions(const Layout& layout, double sigma, GridSize grid);

/// combined_attention with continuous region weights.
Matrix combined_attention_soft(const Matrix& q, const TokenKV& global, std::span<const TokenKV> locals,
                               const MaskSet& weights, std::span<const double> lambda,
                               ExecPolicy policy = ExecPolicy::Parallel);

/// Where the global coefficient 1 - sum_i lambda_i M_i leaves [0, 1].
struct OverlapDiagnostics {
  int overlap_pixels = 0;       // covered by two or more regions
  int out_of_range_pixels = 0;  // coefficient outside [0, 1]
  double min_coefficient = 1.0;
  double max_coefficient = 1.0;
};
OverlapDiagnostics overlap_diagnostics(const MaskSet& masks, std::span<const double> lambda);

}  // namespace layoutattn
