#include "layoutattn/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

namespace layoutattn {

int apply_thread_limit_from_env() {
  if (const char* env = std::getenv("LAYOUTATTN_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) omp_set_num_threads(static_cast<int>(n));
  }
  return omp_get_max_threads();
}

}  // namespace layoutattn

namespace layoutattn::kernels {

void attend_row(const double* q, const Matrix& logit_proj, const Matrix& values, double* probs, double* out) {
  // Plain loops: every sum runs in index order whatever the pointer alignment.
  const auto d = logit_proj.rows();
  const auto l = logit_proj.cols();
  const auto dv = values.cols();
  std::fill(probs, probs + l, 0.0);
  for (Eigen::Index k = 0; k < d; ++k) {
    const double qk = q[k];
    const double* row = logit_proj.data() + k * l;
    for (Eigen::Index j = 0; j < l; ++j) probs[j] += qk * row[j];
  }
  double mx = probs[0];
  for (Eigen::Index j = 1; j < l; ++j) mx = std::max(mx, probs[j]);
  double z = 0.0;
  for (Eigen::Index j = 0; j < l; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    z += probs[j];
  }
  std::fill(out, out + dv, 0.0);
  for (Eigen::Index j = 0; j < l; ++j) {
    probs[j] /= z;
    const double pj = probs[j];
    const double* row = values.data() + j * dv;
    for (Eigen::Index c = 0; c < dv; ++c) out[c] += pj * row[c];
  }
}

void attend_row_backward(const double* dout, const Matrix& logit_proj, const Matrix& values,
                         const double* probs, double scale, double* dq, double* scratch) {
  const auto d = logit_proj.rows();
  const auto l = logit_proj.cols();
  Eigen::Map<const RowVector> go(dout, values.cols());
  Eigen::Map<const RowVector> p(probs, l);
  Eigen::Map<RowVector> g(scratch, l);
  g.noalias() = go * values.transpose();
  const double mean = p.dot(g);
  g.array() = p.array() * (g.array() - mean);
  Eigen::Map<RowVector> dqv(dq, d);
  dqv.noalias() += scale * (g * logit_proj.transpose());
}

namespace {

Matrix softmax_rows(Matrix logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return logits;
}

Matrix dense_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return softmax_rows(q * k.transpose() * scale) * v;
}

}  // namespace

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, ExecPolicy policy) {
  if (policy == ExecPolicy::Serial) return dense_attention(q, k, v);
  const Matrix proj = k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  Matrix out(q.rows(), v.cols());
  const auto n = static_cast<std::ptrdiff_t>(q.rows());
#pragma omp parallel
  {
    std::vector<double> probs(static_cast<std::size_t>(k.rows()));
#pragma omp for schedule(static)
    for (std::ptrdiff_t p = 0; p < n; ++p) {
      attend_row(q.row(p).data(), proj, v, probs.data(), out.row(p).data());
    }
  }
  return out;
}

Matrix combined(const Matrix& q, const Matrix& k_global, const Matrix& v_global,
                std::span<const Matrix> k_locals, std::span<const Matrix> v_locals,
                std::span<const Matrix> weights, std::span<const double> lambda, ExecPolicy policy) {
  const auto n_obj = weights.size();
  if (policy == ExecPolicy::Serial) {
    Matrix global = dense_attention(q, k_global, v_global);
    Matrix out = global;
    for (std::size_t i = 0; i < n_obj; ++i) {
      const Matrix local = dense_attention(q, k_locals[i], v_locals[i]);
      const Eigen::Map<const Vector> w(weights[i].data(), weights[i].size());
      const Vector coef = lambda[i] * w;
      out += coef.asDiagonal() * (local - global);
    }
    return out;
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Matrix proj_g = k_global.transpose() * inv_sqrt_d;
  std::vector<Matrix> proj_l(n_obj);
  Eigen::Index max_l = k_global.rows();
  for (std::size_t i = 0; i < n_obj; ++i) {
    proj_l[i] = k_locals[i].transpose() * inv_sqrt_d;
    max_l = std::max(max_l, k_locals[i].rows());
  }
  Matrix out(q.rows(), v_global.cols());
  const auto n = static_cast<std::ptrdiff_t>(q.rows());
#pragma omp parallel
  {
    std::vector<double> probs(static_cast<std::size_t>(max_l));
    RowVector local(v_global.cols());
#pragma omp for schedule(static)
    for (std::ptrdiff_t p = 0; p < n; ++p) {
      double* o = out.row(p).data();
      attend_row(q.row(p).data(), proj_g, v_global, probs.data(), o);
      double c = 1.0;
      for (std::size_t i = 0; i < n_obj; ++i) c -= lambda[i] * weights[i].data()[p];
      auto orow = out.row(p);
      orow *= c;
      for (std::size_t i = 0; i < n_obj; ++i) {
        const double coef = lambda[i] * weights[i].data()[p];
        if (coef == 0.0) continue;
        attend_row(q.row(p).data(), proj_l[i], v_locals[i], probs.data(), local.data());
        orow += coef * local;
      }
    }
  }
  return out;
}

}  // namespace layoutattn::kernels
