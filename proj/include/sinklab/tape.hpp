#pragma once

#include <functional>
#include <vector>

#include "sinklab/tensor.hpp"

namespace sinklab {

using NodeId = int32_t;
constexpr NodeId kInvalidNode = -1;

// Reverse-mode differentiation tape. Nodes are appended in evaluation order,
// which is a topological order by construction; one backward sweep walks the
// tape in reverse and populates the grad of every needs-grad leaf reachable
// from the loss. Unreachable needs-grad leaves end with zero grads.
//
// A tape is single-threaded. Independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeId leaf(Tensor value, bool needs_grad = false);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(NodeId id) const { return node(id).value; }
    double scalar_value(NodeId id) const;
    const Tensor& grad(NodeId id) const;
    bool needs_grad(NodeId id) const { return node(id).needs_grad; }
    int64_t size() const { return static_cast<int64_t>(nodes_.size()); }
    bool backward_done() const { return backward_done_; }

    // Matrix / elementwise ops.
    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);  // a · bᵀ
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double s);
    NodeId silu(NodeId x);

    // Normalization.
    NodeId rms_norm(NodeId h, NodeId gain, double eps = 1e-6);
    NodeId layer_norm(NodeId h, NodeId gain, double eps = 1e-6);

    // Attention building blocks.
    NodeId causal_softmax(NodeId scores);
    NodeId rope(NodeId x, int64_t heads, double base);  // rotary on N×d, per head segment

    // Structural ops.
    NodeId col_slice(NodeId x, int64_t start, int64_t count);
    NodeId col_concat(const std::vector<NodeId>& parts);
    NodeId row_slice(NodeId x, int64_t start, int64_t count);
    NodeId row_concat(const std::vector<NodeId>& parts);
    NodeId gather_rows(NodeId table, std::vector<int64_t> ids);

    // Losses and reductions.
    NodeId cosine_sim(NodeId u, NodeId v);  // flat vectors; zero-norm -> value 0, grad 0
    NodeId cross_entropy(NodeId logits, std::vector<int64_t> targets);  // target -1 = ignored
    // Mean over rows i>=1 with include[i] of cos²(h[i], h[0]).
    NodeId bos_alignment_sq_mean(NodeId h, std::vector<bool> include);
    NodeId mean_scalars(const std::vector<NodeId>& xs);

    // Norm-preserving rotation of row i toward the direction of row j; all
    // other rows pass through. i == j returns the input node unchanged.
    NodeId rotate_row_to(NodeId h, int64_t i, int64_t j);

    // Populates grads of every needs-grad node reachable from `loss`.
    // `loss` must be scalar; a second call on the same tape is rejected.
    void backward(NodeId loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&)> backprop;  // empty for leaves
    };

    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    NodeId push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop);
    Tensor& grad_buf(NodeId id);
    void accumulate(NodeId id, const Tensor& g);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// Max over coordinates of |analytic - central difference| / max(1, |central difference|)
// for a scalar-valued tape function of one tensor input.
double grad_check(const std::function<NodeId(Tape&, NodeId)>& f, const Tensor& point,
                  double step);

}  // namespace sinklab
