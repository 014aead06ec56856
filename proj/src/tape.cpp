#include "sinklab/tape.hpp"

#include <algorithm>
#include <cmath>

#include "sinklab/kernels.hpp"

namespace sinklab {

Tape::Node& Tape::node(NodeId id) {
    SINKLAB_CHECK_INDEX(id >= 0 && id < size(), "node id " << id << " out of range");
    return nodes_[static_cast<size_t>(id)];
}

const Tape::Node& Tape::node(NodeId id) const {
    SINKLAB_CHECK_INDEX(id >= 0 && id < size(), "node id " << id << " out of range");
    return nodes_[static_cast<size_t>(id)];
}

NodeId Tape::leaf(Tensor value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

NodeId Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

double Tape::scalar_value(NodeId id) const {
    const Tensor& v = value(id);
    SINKLAB_CHECK(v.numel() == 1, "expected a scalar node, got " << v.numel() << " elements");
    return v[0];
}

const Tensor& Tape::grad(NodeId id) const {
    const Node& n = node(id);
    SINKLAB_CHECK(n.grad_alloc, "grad requested before backward reached node " << id);
    return n.grad;
}

Tensor& Tape::grad_buf(NodeId id) {
    Node& n = node(id);
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_alloc = true;
    }
    return n.grad;
}

void Tape::accumulate(NodeId id, const Tensor& g) {
    if (!node(id).needs_grad) return;
    kernels::add_inplace(grad_buf(id), g);
}

void Tape::backward(NodeId loss) {
    SINKLAB_CHECK(!backward_done_, "backward already ran on this tape; build a fresh graph");
    const Node& ln = node(loss);
    SINKLAB_CHECK(ln.value.numel() == 1, "backward requires a scalar loss node");
    backward_done_ = true;

    // Zero grads for every needs-grad node so disconnected leaves report 0.
    for (NodeId id = 0; id < size(); ++id) {
        if (nodes_[static_cast<size_t>(id)].needs_grad) grad_buf(id);
    }
    grad_buf(loss)[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.needs_grad && n.backprop) n.backprop(*this);
    }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

NodeId Tape::matmul(NodeId a, NodeId b) {
    Tensor c = kernels::matmul(value(a), value(b));
    const bool ng = needs_grad(a) || needs_grad(b);
    NodeId out = push(std::move(c), ng, nullptr);
    if (ng) {
        node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& gc = t.grad(out);
            if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(gc, t.value(b)));
            if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(t.value(a), gc));
        };
    }
    return out;
}

NodeId Tape::matmul_nt(NodeId a, NodeId b) {
    Tensor c = kernels::matmul_nt(value(a), value(b));
    const bool ng = needs_grad(a) || needs_grad(b);
    NodeId out = push(std::move(c), ng, nullptr);
    if (ng) {
        node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& gc = t.grad(out);
            if (t.needs_grad(a)) t.accumulate(a, kernels::matmul(gc, t.value(b)));
            if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(gc, t.value(a)));
        };
    }
    return out;
}

NodeId Tape::add(NodeId a, NodeId b) {
    Tensor c = kernels::add(value(a), value(b));
    const bool ng = needs_grad(a) || needs_grad(b);
    NodeId out = push(std::move(c), ng, nullptr);
    if (ng) {
        node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& gc = t.grad(out);
            t.accumulate(a, gc);
            t.accumulate(b, gc);
        };
    }
    return out;
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Tensor c = kernels::mul(value(a), value(b));
    const bool ng = needs_grad(a) || needs_grad(b);
    NodeId out = push(std::move(c), ng, nullptr);
    if (ng) {
        node(out).backprop = [a, b, out](Tape& t) {
            const Tensor& gc = t.grad(out);
            if (t.needs_grad(a)) t.accumulate(a, kernels::mul(gc, t.value(b)));
            if (t.needs_grad(b)) t.accumulate(b, kernels::mul(gc, t.value(a)));
        };
    }
    return out;
}

NodeId Tape::scale(NodeId a, double s) {
    Tensor c = kernels::scale(value(a), s);
    const bool ng = needs_grad(a);
    NodeId out = push(std::move(c), ng, nullptr);
    if (ng) {
        node(out).backprop = [a, s, out](Tape& t) {
            t.accumulate(a, kernels::scale(t.grad(out), s));
        };
    }
    return out;
}

NodeId Tape::silu(NodeId x) {
    Tensor y = kernels::silu(value(x));
    const bool ng = needs_grad(x);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [x, out](Tape& t) {
            const Tensor& xv = t.value(x);
            const Tensor& gy = t.grad(out);
            Tensor gx(xv.shape());
            for (int64_t i = 0; i < xv.numel(); ++i) {
                const double sig = 1.0 / (1.0 + std::exp(-xv[i]));
                gx[i] = gy[i] * sig * (1.0 + xv[i] * (1.0 - sig));
            }
            t.accumulate(x, gx);
        };
    }
    return out;
}

NodeId Tape::rms_norm(NodeId h, NodeId gain, double eps) {
    const Tensor& hv = value(h);
    const Tensor& gv = value(gain);
    Tensor y = kernels::rms_norm(hv, gv, eps);
    const bool ng = needs_grad(h) || needs_grad(gain);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [h, gain, eps, out](Tape& t) {
            const Tensor& x = t.value(h);
            const Tensor& g = t.value(gain);
            const Tensor& gy = t.grad(out);
            const int64_t n = x.dim(0), d = x.dim(1);
            Tensor gx({n, d});
            Tensor gg({d});
            for (int64_t i = 0; i < n; ++i) {
                double ms = 0.0;
                for (int64_t j = 0; j < d; ++j) ms += x.at(i, j) * x.at(i, j);
                ms /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(ms + eps);
                double dot = 0.0;  // Σ_k gy_ik · g_k · x_ik
                for (int64_t k = 0; k < d; ++k) dot += gy.at(i, k) * g[k] * x.at(i, k);
                const double c = inv * inv * inv / static_cast<double>(d) * dot;
                for (int64_t j = 0; j < d; ++j) {
                    gx.at(i, j) = inv * g[j] * gy.at(i, j) - c * x.at(i, j);
                    gg[j] += gy.at(i, j) * x.at(i, j) * inv;
                }
            }
            t.accumulate(h, gx);
            t.accumulate(gain, gg);
        };
    }
    return out;
}

NodeId Tape::layer_norm(NodeId h, NodeId gain, double eps) {
    const Tensor& hv = value(h);
    const Tensor& gv = value(gain);
    Tensor y = kernels::layer_norm(hv, gv, eps);
    const bool ng = needs_grad(h) || needs_grad(gain);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [h, gain, eps, out](Tape& t) {
            const Tensor& x = t.value(h);
            const Tensor& g = t.value(gain);
            const Tensor& gy = t.grad(out);
            const int64_t n = x.dim(0), d = x.dim(1);
            Tensor gx({n, d});
            Tensor gg({d});
            for (int64_t i = 0; i < n; ++i) {
                double mean = 0.0;
                for (int64_t j = 0; j < d; ++j) mean += x.at(i, j);
                mean /= static_cast<double>(d);
                double var = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    const double c = x.at(i, j) - mean;
                    var += c * c;
                }
                var /= static_cast<double>(d);
                const double inv = 1.0 / std::sqrt(var + eps);
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    const double xh = (x.at(i, j) - mean) * inv;
                    const double dxh = gy.at(i, j) * g[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                    gg[j] += gy.at(i, j) * xh;
                }
                mean_dxh /= static_cast<double>(d);
                mean_dxh_xh /= static_cast<double>(d);
                for (int64_t j = 0; j < d; ++j) {
                    const double xh = (x.at(i, j) - mean) * inv;
                    const double dxh = gy.at(i, j) * g[j];
                    gx.at(i, j) = inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
            t.accumulate(h, gx);
            t.accumulate(gain, gg);
        };
    }
    return out;
}

NodeId Tape::causal_softmax(NodeId scores) {
    Tensor y = kernels::causal_softmax(value(scores));
    const bool ng = needs_grad(scores);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [scores, out](Tape& t) {
            const Tensor& y = t.value(out);
            const Tensor& gy = t.grad(out);
            const int64_t n = y.dim(0);
            Tensor gx({n, n});
            for (int64_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (int64_t j = 0; j <= i; ++j) dot += gy.at(i, j) * y.at(i, j);
                for (int64_t j = 0; j <= i; ++j) gx.at(i, j) = y.at(i, j) * (gy.at(i, j) - dot);
            }
            t.accumulate(scores, gx);
        };
    }
    return out;
}

namespace {
// Rotates pairs (t, t+half) of each head segment of one row, in place.
void apply_rope_row(double* row, int64_t heads, int64_t d_head, int64_t pos, double base,
                    double sign) {
    const int64_t half = d_head / 2;
    for (int64_t h = 0; h < heads; ++h) {
        double* seg = row + h * d_head;
        for (int64_t k = 0; k < half; ++k) {
            const double theta = sign * static_cast<double>(pos) *
                                 std::pow(base, -2.0 * static_cast<double>(k) /
                                                    static_cast<double>(d_head));
            const double c = std::cos(theta), s = std::sin(theta);
            const double x1 = seg[k], x2 = seg[k + half];
            seg[k] = x1 * c - x2 * s;
            seg[k + half] = x1 * s + x2 * c;
        }
    }
}
}  // namespace

NodeId Tape::rope(NodeId x, int64_t heads, double base) {
    const Tensor& xv = value(x);
    SINKLAB_CHECK(xv.ndim() == 2, "rope expects N×d input");
    const int64_t n = xv.dim(0), d = xv.dim(1);
    SINKLAB_CHECK(heads >= 1 && d % heads == 0, "rope: width not divisible by heads");
    const int64_t d_head = d / heads;
    SINKLAB_CHECK(d_head % 2 == 0, "rope: head width must be even");
    Tensor y = xv;
    for (int64_t i = 0; i < n; ++i) apply_rope_row(y.data() + i * d, heads, d_head, i, base, 1.0);
    const bool ng = needs_grad(x);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [x, heads, d_head, base, out](Tape& t) {
            Tensor gx = t.grad(out);
            const int64_t n = gx.dim(0), d = gx.dim(1);
            // The rotation is orthogonal; its adjoint is the inverse rotation.
            for (int64_t i = 0; i < n; ++i)
                apply_rope_row(gx.data() + i * d, heads, d_head, i, base, -1.0);
            t.accumulate(x, gx);
        };
    }
    return out;
}

NodeId Tape::col_slice(NodeId x, int64_t start, int64_t count) {
    const Tensor& xv = value(x);
    SINKLAB_CHECK(xv.ndim() == 2, "col_slice expects a 2-D input");
    const int64_t n = xv.dim(0), d = xv.dim(1);
    SINKLAB_CHECK(start >= 0 && count >= 0 && start + count <= d, "col_slice out of bounds");
    Tensor y({n, count});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < count; ++j) y.at(i, j) = xv.at(i, start + j);
    const bool ng = needs_grad(x);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [x, start, count, out](Tape& t) {
            const Tensor& gy = t.grad(out);
            const Tensor& xv = t.value(x);
            Tensor gx(xv.shape());
            const int64_t n = xv.dim(0);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < count; ++j) gx.at(i, start + j) = gy.at(i, j);
            t.accumulate(x, gx);
        };
    }
    return out;
}

NodeId Tape::col_concat(const std::vector<NodeId>& parts) {
    SINKLAB_CHECK(!parts.empty(), "col_concat of nothing");
    const int64_t n = value(parts[0]).dim(0);
    int64_t total = 0;
    bool ng = false;
    for (NodeId p : parts) {
        const Tensor& pv = value(p);
        SINKLAB_CHECK(pv.ndim() == 2 && pv.dim(0) == n, "col_concat parts must share row count");
        total += pv.dim(1);
        ng = ng || needs_grad(p);
    }
    Tensor y({n, total});
    int64_t off = 0;
    for (NodeId p : parts) {
        const Tensor& pv = value(p);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < pv.dim(1); ++j) y.at(i, off + j) = pv.at(i, j);
        off += pv.dim(1);
    }
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        std::vector<NodeId> ps = parts;
        node(out).backprop = [ps, out](Tape& t) {
            const Tensor& gy = t.grad(out);
            const int64_t n = gy.dim(0);
            int64_t off = 0;
            for (NodeId p : ps) {
                const int64_t w = t.value(p).dim(1);
                if (t.needs_grad(p)) {
                    Tensor gp({n, w});
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < w; ++j) gp.at(i, j) = gy.at(i, off + j);
                    t.accumulate(p, gp);
                }
                off += w;
            }
        };
    }
    return out;
}

NodeId Tape::row_slice(NodeId x, int64_t start, int64_t count) {
    const Tensor& xv = value(x);
    SINKLAB_CHECK(xv.ndim() == 2, "row_slice expects a 2-D input");
    const int64_t n = xv.dim(0), d = xv.dim(1);
    SINKLAB_CHECK(start >= 0 && count >= 0 && start + count <= n, "row_slice out of bounds");
    Tensor y({count, d});
    for (int64_t i = 0; i < count; ++i)
        for (int64_t j = 0; j < d; ++j) y.at(i, j) = xv.at(start + i, j);
    const bool ng = needs_grad(x);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [x, start, count, out](Tape& t) {
            const Tensor& gy = t.grad(out);
            const Tensor& xv = t.value(x);
            Tensor gx(xv.shape());
            const int64_t d = xv.dim(1);
            for (int64_t i = 0; i < count; ++i)
                for (int64_t j = 0; j < d; ++j) gx.at(start + i, j) = gy.at(i, j);
            t.accumulate(x, gx);
        };
    }
    return out;
}

NodeId Tape::row_concat(const std::vector<NodeId>& parts) {
    SINKLAB_CHECK(!parts.empty(), "row_concat of nothing");
    const int64_t d = value(parts[0]).dim(1);
    int64_t total = 0;
    bool ng = false;
    for (NodeId p : parts) {
        const Tensor& pv = value(p);
        SINKLAB_CHECK(pv.ndim() == 2 && pv.dim(1) == d, "row_concat parts must share width");
        total += pv.dim(0);
        ng = ng || needs_grad(p);
    }
    Tensor y({total, d});
    int64_t off = 0;
    for (NodeId p : parts) {
        const Tensor& pv = value(p);
        for (int64_t i = 0; i < pv.dim(0); ++i)
            for (int64_t j = 0; j < d; ++j) y.at(off + i, j) = pv.at(i, j);
        off += pv.dim(0);
    }
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        std::vector<NodeId> ps = parts;
        node(out).backprop = [ps, out](Tape& t) {
            const Tensor& gy = t.grad(out);
            const int64_t d = gy.dim(1);
            int64_t off = 0;
            for (NodeId p : ps) {
                const int64_t r = t.value(p).dim(0);
                if (t.needs_grad(p)) {
                    Tensor gp({r, d});
                    for (int64_t i = 0; i < r; ++i)
                        for (int64_t j = 0; j < d; ++j) gp.at(i, j) = gy.at(off + i, j);
                    t.accumulate(p, gp);
                }
                off += r;
            }
        };
    }
    return out;
}

NodeId Tape::gather_rows(NodeId table, std::vector<int64_t> ids) {
    const Tensor& tv = value(table);
    SINKLAB_CHECK(tv.ndim() == 2, "gather_rows expects a 2-D table");
    const int64_t rows = tv.dim(0), d = tv.dim(1);
    for (int64_t id : ids)
        SINKLAB_CHECK_INDEX(id >= 0 && id < rows, "gather_rows id " << id << " out of range");
    Tensor y({static_cast<int64_t>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < d; ++j) y.at(static_cast<int64_t>(i), j) = tv.at(ids[i], j);
    const bool ng = needs_grad(table);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [table, ids = std::move(ids), out](Tape& t) {
            const Tensor& gy = t.grad(out);
            const Tensor& tv = t.value(table);
            Tensor gt(tv.shape());
            const int64_t d = tv.dim(1);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int64_t j = 0; j < d; ++j)
                    gt.at(ids[i], j) += gy.at(static_cast<int64_t>(i), j);
            t.accumulate(table, gt);
        };
    }
    return out;
}

NodeId Tape::cosine_sim(NodeId u, NodeId v) {
    const Tensor& uv = value(u);
    const Tensor& vv = value(v);
    SINKLAB_CHECK(uv.numel() == vv.numel(), "cosine_sim operands must have equal length");
    double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
    for (int64_t i = 0; i < uv.numel(); ++i) {
        dot += uv[i] * vv[i];
        nu2 += uv[i] * uv[i];
        nv2 += vv[i] * vv[i];
    }
    const bool degenerate = (nu2 == 0.0 || nv2 == 0.0);
    const double c = degenerate ? 0.0 : dot / (std::sqrt(nu2) * std::sqrt(nv2));
    const bool ng = needs_grad(u) || needs_grad(v);
    NodeId out = push(Tensor::scalar(c), ng, nullptr);
    if (ng && !degenerate) {
        node(out).backprop = [u, v, out](Tape& t) {
            const Tensor& uv = t.value(u);
            const Tensor& vv = t.value(v);
            const double g = t.grad(out)[0];
            double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
            for (int64_t i = 0; i < uv.numel(); ++i) {
                dot += uv[i] * vv[i];
                nu2 += uv[i] * uv[i];
                nv2 += vv[i] * vv[i];
            }
            const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
            const double c = dot / (nu * nv);
            if (t.needs_grad(u)) {
                Tensor gu(uv.shape());
                for (int64_t i = 0; i < uv.numel(); ++i)
                    gu[i] = g * (vv[i] / (nu * nv) - c * uv[i] / nu2);
                t.accumulate(u, gu);
            }
            if (t.needs_grad(v)) {
                Tensor gv(vv.shape());
                for (int64_t i = 0; i < vv.numel(); ++i)
                    gv[i] = g * (uv[i] / (nu * nv) - c * vv[i] / nv2);
                t.accumulate(v, gv);
            }
        };
    }
    return out;
}

NodeId Tape::cross_entropy(NodeId logits, std::vector<int64_t> targets) {
    const Tensor& lv = value(logits);
    SINKLAB_CHECK(lv.ndim() == 2, "cross_entropy expects T×V logits");
    const int64_t t_len = lv.dim(0), v = lv.dim(1);
    SINKLAB_CHECK(static_cast<int64_t>(targets.size()) == t_len,
                  "cross_entropy targets length mismatch");
    int64_t counted = 0;
    for (int64_t y : targets) {
        SINKLAB_CHECK_INDEX(y >= -1 && y < v, "cross_entropy target " << y << " out of range");
        if (y >= 0) ++counted;
    }
    SINKLAB_CHECK(counted > 0, "cross_entropy needs at least one counted position");
    double total = 0.0;
    for (int64_t i = 0; i < t_len; ++i) {
        const int64_t y = targets[static_cast<size_t>(i)];
        if (y < 0) continue;
        double m = lv.at(i, 0);
        for (int64_t j = 1; j < v; ++j) m = std::max(m, lv.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(lv.at(i, j) - m);
        total += -(lv.at(i, y) - m - std::log(z));
    }
    const double loss = total / static_cast<double>(counted);
    const bool ng = needs_grad(logits);
    NodeId out = push(Tensor::scalar(loss), ng, nullptr);
    if (ng) {
        node(out).backprop = [logits, targets = std::move(targets), counted, out](Tape& t) {
            const Tensor& lv = t.value(logits);
            const double g = t.grad(out)[0] / static_cast<double>(counted);
            const int64_t t_len = lv.dim(0), v = lv.dim(1);
            Tensor gl({t_len, v});
            for (int64_t i = 0; i < t_len; ++i) {
                const int64_t y = targets[static_cast<size_t>(i)];
                if (y < 0) continue;
                double m = lv.at(i, 0);
                for (int64_t j = 1; j < v; ++j) m = std::max(m, lv.at(i, j));
                double z = 0.0;
                for (int64_t j = 0; j < v; ++j) z += std::exp(lv.at(i, j) - m);
                for (int64_t j = 0; j < v; ++j) {
                    const double p = std::exp(lv.at(i, j) - m) / z;
                    gl.at(i, j) = g * (p - (j == y ? 1.0 : 0.0));
                }
            }
            t.accumulate(logits, gl);
        };
    }
    return out;
}

NodeId Tape::bos_alignment_sq_mean(NodeId h, std::vector<bool> include) {
    const Tensor& hv = value(h);
    SINKLAB_CHECK(hv.ndim() == 2, "bos_alignment_sq_mean expects N×d hidden states");
    const int64_t n = hv.dim(0), d = hv.dim(1);
    SINKLAB_CHECK(static_cast<int64_t>(include.size()) == n, "include mask length mismatch");
    int64_t count = 0;
    for (int64_t i = 1; i < n; ++i)
        if (include[static_cast<size_t>(i)]) ++count;
    SINKLAB_CHECK(count > 0, "bos_alignment_sq_mean needs at least one counted token");

    auto row_cos = [&](const Tensor& m, int64_t i, double& nu2, double& nb2) {
        double dot = 0.0;
        nu2 = 0.0;
        nb2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            dot += m.at(i, j) * m.at(0, j);
            nu2 += m.at(i, j) * m.at(i, j);
            nb2 += m.at(0, j) * m.at(0, j);
        }
        if (nu2 == 0.0 || nb2 == 0.0) return 0.0;
        return dot / (std::sqrt(nu2) * std::sqrt(nb2));
    };

    double total = 0.0;
    for (int64_t i = 1; i < n; ++i) {
        if (!include[static_cast<size_t>(i)]) continue;
        double nu2, nb2;
        const double c = row_cos(hv, i, nu2, nb2);
        total += c * c;
    }
    const double mean = total / static_cast<double>(count);
    const bool ng = needs_grad(h);
    NodeId out = push(Tensor::scalar(mean), ng, nullptr);
    if (ng) {
        node(out).backprop = [h, include = std::move(include), count, out](Tape& t) {
            const Tensor& hv = t.value(h);
            const double g = t.grad(out)[0] / static_cast<double>(count);
            const int64_t n = hv.dim(0), d = hv.dim(1);
            Tensor gh({n, d});
            double nb2 = 0.0;
            for (int64_t j = 0; j < d; ++j) nb2 += hv.at(0, j) * hv.at(0, j);
            for (int64_t i = 1; i < n; ++i) {
                if (!include[static_cast<size_t>(i)]) continue;
                double dot = 0.0, nu2 = 0.0;
                for (int64_t j = 0; j < d; ++j) {
                    dot += hv.at(i, j) * hv.at(0, j);
                    nu2 += hv.at(i, j) * hv.at(i, j);
                }
                if (nu2 == 0.0 || nb2 == 0.0) continue;
                const double nu = std::sqrt(nu2), nb = std::sqrt(nb2);
                const double c = dot / (nu * nb);
                const double f = g * 2.0 * c;
                for (int64_t j = 0; j < d; ++j) {
                    gh.at(i, j) += f * (hv.at(0, j) / (nu * nb) - c * hv.at(i, j) / nu2);
                    gh.at(0, j) += f * (hv.at(i, j) / (nu * nb) - c * hv.at(0, j) / nb2);
                }
            }
            t.accumulate(h, gh);
        };
    }
    return out;
}

NodeId Tape::mean_scalars(const std::vector<NodeId>& xs) {
    SINKLAB_CHECK(!xs.empty(), "mean_scalars of nothing");
    double total = 0.0;
    bool ng = false;
    for (NodeId x : xs) {
        total += scalar_value(x);
        ng = ng || needs_grad(x);
    }
    const double mean = total / static_cast<double>(xs.size());
    NodeId out = push(Tensor::scalar(mean), ng, nullptr);
    if (ng) {
        std::vector<NodeId> v = xs;
        node(out).backprop = [v, out](Tape& t) {
            const double g = t.grad(out)[0] / static_cast<double>(v.size());
            for (NodeId x : v) t.accumulate(x, Tensor::scalar(g));
        };
    }
    return out;
}

NodeId Tape::rotate_row_to(NodeId h, int64_t i, int64_t j) {
    const Tensor& hv = value(h);
    SINKLAB_CHECK(hv.ndim() == 2, "rotate_row_to expects N×d hidden states");
    const int64_t n = hv.dim(0), d = hv.dim(1);
    SINKLAB_CHECK_INDEX(i >= 0 && i < n && j >= 0 && j < n, "rotate_row_to token out of range");
    if (i == j) return h;  // self-rotation is the identity
    double ni2 = 0.0, nj2 = 0.0;
    for (int64_t t = 0; t < d; ++t) {
        ni2 += hv.at(i, t) * hv.at(i, t);
        nj2 += hv.at(j, t) * hv.at(j, t);
    }
    SINKLAB_CHECK(nj2 > 0.0, "rotate_row_to target row has zero norm");
    const double factor = std::sqrt(ni2) / std::sqrt(nj2);
    Tensor y = hv;
    for (int64_t t = 0; t < d; ++t) y.at(i, t) = factor * hv.at(j, t);
    const bool ng = needs_grad(h);
    NodeId out = push(std::move(y), ng, nullptr);
    if (ng) {
        node(out).backprop = [h, i, j, out](Tape& t) {
            const Tensor& x = t.value(h);
            const Tensor& gy = t.grad(out);
            const int64_t n = x.dim(0), d = x.dim(1);
            Tensor gx({n, d});
            for (int64_t r = 0; r < n; ++r) {
                if (r == i) continue;
                for (int64_t c = 0; c < d; ++c) gx.at(r, c) = gy.at(r, c);
            }
            double ni2 = 0.0, nj2 = 0.0;
            for (int64_t c = 0; c < d; ++c) {
                ni2 += x.at(i, c) * x.at(i, c);
                nj2 += x.at(j, c) * x.at(j, c);
            }
            const double s = std::sqrt(ni2), nj = std::sqrt(nj2);
            double gdotu = 0.0;  // gyᵢ · unit(x_j)
            for (int64_t c = 0; c < d; ++c) gdotu += gy.at(i, c) * x.at(j, c) / nj;
            if (s > 0.0) {
                for (int64_t c = 0; c < d; ++c) gx.at(i, c) += gdotu * x.at(i, c) / s;
            }
            for (int64_t c = 0; c < d; ++c)
                gx.at(j, c) += (s / nj) * (gy.at(i, c) - gdotu * x.at(j, c) / nj);
            t.accumulate(h, gx);
        };
    }
    return out;
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<NodeId(Tape&, NodeId)>& f, const Tensor& point,
                  double step) {
    Tape tape;
    NodeId x = tape.leaf(point, true);
    NodeId loss = f(tape, x);
    tape.backward(loss);
    const Tensor analytic = tape.grad(x);

    auto eval = [&](const Tensor& p) {
        Tape t;
        NodeId x2 = t.leaf(p, false);
        return t.scalar_value(f(t, x2));
    };

    double max_err = 0.0;
    Tensor p = point;
    for (int64_t i = 0; i < p.numel(); ++i) {
        const double orig = p[i];
        p[i] = orig + step;
        const double up = eval(p);
        p[i] = orig - step;
        const double down = eval(p);
        p[i] = orig;
        const double cd = (up - down) / (2.0 * step);
        const double err = std::abs(analytic[i] - cd) / std::max(1.0, std::abs(cd));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace sinklab
