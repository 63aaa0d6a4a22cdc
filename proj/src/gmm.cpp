#include "layoutattn/gmm.hpp"

#include "layoutattn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace layoutattn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

int components_of(std::span<const double> raw) {
  if (raw.size() % kHeadOutputsPerComponent != 0 || raw.empty()) {
    throw ShapeError("GMM head row must hold K*5 values");
  }
  return static_cast<int>(raw.size()) / kHeadOutputsPerComponent;
}

double coord(Point2 p, int axis) { return axis == 0 ? p.x : p.y; }

}  // namespace

Point2 GmmParams::argmax_mean() const {
  const auto it = std::max_element(weights.begin(), weights.end());
  return means[static_cast<std::size_t>(it - weights.begin())];
}

GmmParams gmm_from_raw(std::span<const double> raw) {
  const int k_count = components_of(raw);
  GmmParams g;
  std::vector<double> logits;
  for (int k = 0; k < k_count; ++k) {
    const double* r = raw.data() + static_cast<std::ptrdiff_t>(k) * kHeadOutputsPerComponent;
    g.means.push_back({sigmoid(r[0]), sigmoid(r[1])});
    g.variances.push_back({std::exp(r[2]) + kVarianceFloor, std::exp(r[3]) + kVarianceFloor});
    logits.push_back(r[4]);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& a : logits) z += (a = std::exp(a - mx));
  for (double a : logits) g.weights.push_back(a / z);
  return g;
}

double gmm_nll(Point2 c, const GmmParams& g) {
  const int k_count = g.components();
  if (k_count == 0 || g.means.size() != g.weights.size() || g.variances.size() != g.weights.size()) {
    throw ShapeError("inconsistent GMM parameters");
  }
  std::vector<double> terms(static_cast<std::size_t>(k_count));
  for (int k = 0; k < k_count; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const Point2 s = g.variances[i];
    if (!(s.x >= std::numeric_limits<double>::min()) || !(s.y >= std::numeric_limits<double>::min()) ||
        !std::isfinite(s.x) || !std::isfinite(s.y)) {
      throw NumericalError("GMM variance underflow");
    }
    const double dx = c.x - g.means[i].x;
    const double dy = c.y - g.means[i].y;
    terms[i] = std::log(g.weights[i]) - std::log(2.0 * std::numbers::pi) -
               0.5 * (std::log(s.x) + std::log(s.y) + dx * dx / s.x + dy * dy / s.y);
  }
  const double mx = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(mx)) throw NumericalError("GMM log-density is not finite");
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  return -(mx + std::log(acc));
}

double gmm_nll_raw(Point2 c, std::span<const double> raw, std::span<double> grad) {
  const int k_count = components_of(raw);
  const auto kc = static_cast<std::size_t>(k_count);
  std::vector<double> mu_x(kc), mu_y(kc), s_x(kc), s_y(kc), logit(kc), ell(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    const double* r = raw.data() + k * kHeadOutputsPerComponent;
    mu_x[k] = sigmoid(r[0]);
    mu_y[k] = sigmoid(r[1]);
    s_x[k] = std::exp(r[2]) + kVarianceFloor;
    s_y[k] = std::exp(r[3]) + kVarianceFloor;
    logit[k] = r[4];
  }
  const double lmax = *std::max_element(logit.begin(), logit.end());
  double lz = 0.0;
  for (double a : logit) lz += std::exp(a - lmax);
  const double log_norm = lmax + std::log(lz);
  for (std::size_t k = 0; k < kc; ++k) {
    const double dx = c.x - mu_x[k];
    const double dy = c.y - mu_y[k];
    ell[k] = (logit[k] - log_norm) - std::log(2.0 * std::numbers::pi) -
             0.5 * (std::log(s_x[k]) + std::log(s_y[k]) + dx * dx / s_x[k] + dy * dy / s_y[k]);
  }
  const double emax = *std::max_element(ell.begin(), ell.end());
  if (!std::isfinite(emax)) throw NumericalError("GMM log-density is not finite");
  double acc = 0.0;
  for (double t : ell) acc += std::exp(t - emax);
  const double nll = -(emax + std::log(acc));

  if (!grad.empty()) {
    for (std::size_t k = 0; k < kc; ++k) {
      const double resp = std::exp(ell[k] + nll);  // posterior responsibility
      const double w = std::exp(logit[k] - log_norm);
      double* g = grad.data() + k * kHeadOutputsPerComponent;
      const double dx = c.x - mu_x[k];
      const double dy = c.y - mu_y[k];
      g[0] += -resp * dx / s_x[k] * mu_x[k] * (1.0 - mu_x[k]);
      g[1] += -resp * dy / s_y[k] * mu_y[k] * (1.0 - mu_y[k]);
      g[2] += -resp * (-0.5 / s_x[k] + 0.5 * dx * dx / (s_x[k] * s_x[k])) * (s_x[k] - kVarianceFloor);
      g[3] += -resp * (-0.5 / s_y[k] + 0.5 * dy * dy / (s_y[k] * s_y[k])) * (s_y[k] - kVarianceFloor);
      g[4] += w - resp;
    }
  }
  return nll;
}

namespace {

struct HingeRoles {
  bool swap = false;  // true when j plays the "lower coordinate" role
  int axis = 0;
};

HingeRoles roles(RelationKind kind) {
  switch (kind) {
    case RelationKind::LeftOf: return {false, 0};
    case RelationKind::RightOf: return {true, 0};
    case RelationKind::Above: return {false, 1};
    case RelationKind::Below: return {true, 1};
  }
  return {};
}

}  // namespace

double rel_penalty(RelationKind kind, const GmmParams& gi, const GmmParams& gj, double delta) {
  const auto [swap, axis] = roles(kind);
  const GmmParams& lower = swap ? gj : gi;
  const GmmParams& upper = swap ? gi : gj;
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& m : lower.means) hi = std::max(hi, coord(m, axis));
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& m : upper.means) lo = std::min(lo, coord(m, axis));
  return std::max(hi - lo, -delta);
}

double rel_penalty_raw(RelationKind kind, std::span<const double> raw_i,
                       std::span<const double> raw_j, double delta, double scale,
                       std::span<double> grad_i, std::span<double> grad_j) {
  const auto [swap, axis] = roles(kind);
  const auto raw_lower = swap ? raw_j : raw_i;
  const auto raw_upper = swap ? raw_i : raw_j;
  const auto grad_lower = swap ? grad_j : grad_i;
  const auto grad_upper = swap ? grad_i : grad_j;
  const int kl = components_of(raw_lower);
  const int ku = components_of(raw_upper);

  double hi = -std::numeric_limits<double>::infinity();
  int hi_k = 0;
  for (int k = 0; k < kl; ++k) {
    const double m = sigmoid(raw_lower[static_cast<std::size_t>(k * kHeadOutputsPerComponent + axis)]);
    if (m > hi) {
      hi = m;
      hi_k = k;
    }
  }
  double lo = std::numeric_limits<double>::infinity();
  int lo_k = 0;
  for (int k = 0; k < ku; ++k) {
    const double m = sigmoid(raw_upper[static_cast<std::size_t>(k * kHeadOutputsPerComponent + axis)]);
    if (m < lo) {
      lo = m;
      lo_k = k;
    }
  }
  const double gap = hi - lo;
  if (gap > -delta && !grad_lower.empty()) {
    grad_lower[static_cast<std::size_t>(hi_k * kHeadOutputsPerComponent + axis)] += scale * hi * (1.0 - hi);
    grad_upper[static_cast<std::size_t>(lo_k * kHeadOutputsPerComponent + axis)] -= scale * lo * (1.0 - lo);
  }
  return std::max(gap, -delta);
}

}  // namespace layoutattn
