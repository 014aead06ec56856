#pragma once

#include <vector>

#include "sinklab/tensor.hpp"

namespace sinklab::refk {

// Serial scalar-loop reference implementations, written independently of the
// kernels:: fast path. Tests compare the two; the benchmark times them against
// each other. Nothing here calls into kernels:: or the tape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor causal_softmax(const Tensor& scores);
Tensor rms_norm(const Tensor& h, const Tensor& gain, double eps);
Tensor layer_norm(const Tensor& h, const Tensor& gain, double eps);
Tensor silu(const Tensor& x);
Tensor average_pool_rows(const Tensor& stream, int64_t factor);
double cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets);
double cosine(const Tensor& u, const Tensor& v);

// Single-loop multi-head causal attention with rotary position encoding on
// Q/K (half-split pair layout, angle pos * base^(-2t/d_head)). Produces the
// merged MHSA output and per-head attention maps.
Tensor mhsa(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
            const Tensor& wo, int64_t heads, double rope_base,
            std::vector<Tensor>* attn_maps);

Tensor glu_mlp(const Tensor& h, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down);

}  // namespace sinklab::refk
