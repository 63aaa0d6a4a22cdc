#pragma once

#include "layoutattn/common.hpp"
#include "layoutattn/rng.hpp"

#include <algorithm>
#include <cmath>

namespace testing {

using layoutattn::Matrix;

inline Matrix random_matrix(layoutattn::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return (a - b).cwiseAbs().maxCoeff();
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Loop-only softmax attention, one pixel at a time.
inline Matrix naive_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (Eigen::Index p = 0; p < q.rows(); ++p) {
    std::vector<double> logits(static_cast<std::size_t>(k.rows()));
    double mx = -INFINITY;
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < q.cols(); ++c) s += q(p, c) * k(j, c);
      logits[static_cast<std::size_t>(j)] = s * scale;
      mx = std::max(mx, s * scale);
    }
    double z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) out(p, c) += logits[static_cast<std::size_t>(j)] / z * v(j, c);
    }
  }
  return out;
}

}  // namespace testing
