#pragma once

#include "layoutattn/common.hpp"

#include <span>

namespace layoutattn {

enum class ExecPolicy { Serial, Parallel };

/// Caps OpenMP threads from LAYOUTATTN_THREADS when set to a positive
/// integer; returns the resulting maximum thread count.
int apply_thread_limit_from_env();

/// Low-level attention kernels. The Serial policy runs a dense reference
/// formulation (whole-matrix products); Parallel runs a per-pixel kernel
/// distributed with OpenMP. Results agree to rounding; each policy is
/// deterministic on its own regardless of thread count.
namespace kernels {

/// One query row: probs = softmax(q * logit_proj), out = probs * values.
/// logit_proj is d x l (already scaled), values is l x d_v.
void attend_row(const double* q, const Matrix& logit_proj, const Matrix& values, double* probs, double* out);

/// Backpropagates d out through attend_row given the stored probs. Adds
/// scale * d q into dq. Scratch must hold l doubles.
void attend_row_backward(const double* dout, const Matrix& logit_proj, const Matrix& values,
                         const double* probs, double scale, double* dq, double* scratch);

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, ExecPolicy policy);

/// Per-pixel blend: out_p = c_p * global_p + sum_i lambda_i w_ip * local_ip with
/// c_p = 1 - sum_i lambda_i w_ip. weights[i] is h x w, flattened row-major.
Matrix combined(const Matrix& q, const Matrix& k_global, const Matrix& v_global,
                std::span<const Matrix> k_locals, std::span<const Matrix> v_locals,
                std::span<const Matrix> weights, std::span<const double> lambda, ExecPolicy policy);

}  // namespace kernels
}  // namespace layoutattn
