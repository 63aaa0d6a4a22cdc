#pragma once

#include "layoutattn/common.hpp"
#include "layoutattn/scene_dsl.hpp"

#include <span>
#include <vector>

namespace layoutattn {

/// Diagonal-covariance mixture over one object's normalized center.
struct GmmParams {
  std::vector<Point2> means;
  std::vector<Point2> variances;
  std::vector<double> weights;

  [[nodiscard]] int components() const { return static_cast<int>(weights.size()); }
  /// Mean of the highest-weight component (first on ties).
  [[nodiscard]] Point2 argmax_mean() const;
};

/// Per-component head outputs before squashing: mean logits (sigmoid),
/// log-variances (exp plus floor) and mixture logits (softmax).
inline constexpr int kHeadOutputsPerComponent = 5;
inline constexpr double kVarianceFloor = 1e-6;

/// Converts a row of K*5 raw head outputs into GmmParams.
GmmParams gmm_from_raw(std::span<const double> raw);

/// -log sum_k w_k N(c; mu_k, Sigma_k), log-sum-exp stabilized.
/// Throws NumericalError if a variance is not a positive normal number.
double gmm_nll(Point2 c, const GmmParams& g);

/// gmm_nll evaluated from raw head outputs; writes d nll / d raw into grad.
double gmm_nll_raw(Point2 c, std::span<const double> raw, std::span<double> grad);

/// Hinge on mixture means with margin delta; always >= -delta.
/// LeftOf compares the rightmost x-mean of i against the leftmost x-mean of j.
double rel_penalty(RelationKind kind, const GmmParams& gi, const GmmParams& gj, double delta);

/// rel_penalty from raw head outputs, accumulating d/d raw (scaled by `scale`).
double rel_penalty_raw(RelationKind kind, std::span<const double> raw_i,
                       std::span<const double> raw_j, double delta, double scale,
                       std::span<double> grad_i, std::span<double> grad_j);

}  // namespace layoutattn
