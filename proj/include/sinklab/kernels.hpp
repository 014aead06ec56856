#pragma once

#include "sinklab/tensor.hpp"

namespace sinklab::kernels {

// OpenMP-parallel dense kernels. Parallelism is always over independent output
// rows/elements with a serial accumulation per element, so results are
// bit-identical for any thread count. A naive serial mirror of each kernel
// lives in refk:: and is compared against these in tests and in the benchmark.

// c = a(m×k) · b(k×n)
Tensor matmul(const Tensor& a, const Tensor& b);

// c = a(m×k) · b(n×k)ᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// c = a(k×m)ᵀ · b(k×n)
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// out += a · b (shapes as matmul); used by backward accumulation.
void matmul_acc(Tensor& out, const Tensor& a, const Tensor& b);
void matmul_nt_acc(Tensor& out, const Tensor& a, const Tensor& b);
void matmul_tn_acc(Tensor& out, const Tensor& a, const Tensor& b);

// Row-wise causally masked softmax of a square score matrix. Row i is a
// softmax over columns j <= i; entries above the diagonal are exactly zero.
Tensor causal_softmax(const Tensor& scores);

// Per-row RMS normalization with learned gain: h / sqrt(mean(h^2) + eps) * gain.
Tensor rms_norm(const Tensor& h, const Tensor& gain, double eps);

// Mean-subtracting layer norm variant (ablation flag): (h - mean) / sqrt(var + eps) * gain.
Tensor layer_norm(const Tensor& h, const Tensor& gain, double eps);

// x * sigmoid(x) elementwise.
Tensor silu(const Tensor& x);

// Elementwise helpers.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void add_inplace(Tensor& a, const Tensor& b);

// Non-overlapping window average over rows; a final partial window is averaged
// over its true length.
Tensor average_pool_rows(const Tensor& stream, int64_t factor);

}  // namespace sinklab::kernels
