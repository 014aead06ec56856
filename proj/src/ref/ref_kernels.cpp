#include "sinklab/ref_kernels.hpp"

#include <cmath>

namespace sinklab::refk {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    SINKLAB_CHECK(b.dim(0) == k, "refk::matmul inner dimensions disagree");
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor causal_softmax(const Tensor& scores) {
    const int64_t n = scores.dim(0);
    SINKLAB_CHECK(scores.dim(1) == n, "refk::causal_softmax needs a square input");
    Tensor out({n, n});
    for (int64_t i = 0; i < n; ++i) {
        double m = -HUGE_VAL;
        for (int64_t j = 0; j <= i; ++j) m = std::max(m, scores.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j <= i; ++j) z += std::exp(scores.at(i, j) - m);
        for (int64_t j = 0; j <= i; ++j) out.at(i, j) = std::exp(scores.at(i, j) - m) / z;
    }
    return out;
}

Tensor rms_norm(const Tensor& h, const Tensor& gain, double eps) {
    const int64_t n = h.dim(0), d = h.dim(1);
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        double ms = 0.0;
        for (int64_t j = 0; j < d; ++j) ms += h.at(i, j) * h.at(i, j);
        const double r = std::sqrt(ms / static_cast<double>(d) + eps);
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = h.at(i, j) / r * gain[j];
    }
    return out;
}

Tensor layer_norm(const Tensor& h, const Tensor& gain, double eps) {
    const int64_t n = h.dim(0), d = h.dim(1);
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += h.at(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (h.at(i, j) - mean) * (h.at(i, j) - mean);
        var /= static_cast<double>(d);
        const double r = std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) out.at(i, j) = (h.at(i, j) - mean) / r * gain[j];
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] * (1.0 / (1.0 + std::exp(-x[i])));
    return out;
}

Tensor average_pool_rows(const Tensor& stream, int64_t factor) {
    const int64_t t = stream.dim(0), d = stream.dim(1);
    const int64_t out_t = (t + factor - 1) / factor;
    Tensor out({out_t, d});
    for (int64_t w = 0; w < out_t; ++w) {
        const int64_t lo = w * factor;
        const int64_t hi = std::min(lo + factor, t);
        for (int64_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (int64_t r = lo; r < hi; ++r) s += stream.at(r, j);
            out.at(w, j) = s / static_cast<double>(hi - lo);
        }
    }
    return out;
}

double cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets) {
    const int64_t t = logits.dim(0), v = logits.dim(1);
    double total = 0.0;
    int64_t counted = 0;
    for (int64_t i = 0; i < t; ++i) {
        const int64_t y = targets[static_cast<size_t>(i)];
        if (y < 0) continue;
        double m = -HUGE_VAL;
        for (int64_t j = 0; j < v; ++j) m = std::max(m, logits.at(i, j));
        double z = 0.0;
        for (int64_t j = 0; j < v; ++j) z += std::exp(logits.at(i, j) - m);
        total += -(logits.at(i, y) - m - std::log(z));
        ++counted;
    }
    return counted > 0 ? total / static_cast<double>(counted) : 0.0;
}

double cosine(const Tensor& u, const Tensor& v) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (int64_t i = 0; i < u.numel(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

namespace {
void rope_rotate_row(double* row, int64_t d_head, int64_t pos, double base) {
    const int64_t half = d_head / 2;
    for (int64_t t = 0; t < half; ++t) {
        const double theta = static_cast<double>(pos) *
                             std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(d_head));
        const double c = std::cos(theta), s = std::sin(theta);
        const double x1 = row[t], x2 = row[t + half];
        row[t] = x1 * c - x2 * s;
        row[t + half] = x1 * s + x2 * c;
    }
}
}  // namespace

Tensor mhsa(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
            const Tensor& wo, int64_t heads, double rope_base,
            std::vector<Tensor>* attn_maps) {
    const int64_t n = x.dim(0), d = x.dim(1);
    const int64_t d_head = d / heads;
    Tensor q = matmul(x, wq);
    Tensor k = matmul(x, wk);
    Tensor v = matmul(x, wv);
    Tensor merged({n, d});
    if (attn_maps) attn_maps->clear();
    for (int64_t h = 0; h < heads; ++h) {
        const int64_t off = h * d_head;
        Tensor qh({n, d_head}), kh({n, d_head}), vh({n, d_head});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d_head; ++j) {
                qh.at(i, j) = q.at(i, off + j);
                kh.at(i, j) = k.at(i, off + j);
                vh.at(i, j) = v.at(i, off + j);
            }
        for (int64_t i = 0; i < n; ++i) {
            rope_rotate_row(qh.data() + i * d_head, d_head, i, rope_base);
            rope_rotate_row(kh.data() + i * d_head, d_head, i, rope_base);
        }
        Tensor scores({n, n});
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t t = 0; t < d_head; ++t) acc += qh.at(i, t) * kh.at(j, t);
                scores.at(i, j) = acc * inv_sqrt;
            }
        Tensor a = causal_softmax(scores);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d_head; ++j) {
                double acc = 0.0;
                for (int64_t t = 0; t <= i; ++t) acc += a.at(i, t) * vh.at(t, j);
                merged.at(i, off + j) = acc;
            }
        if (attn_maps) attn_maps->push_back(a);
    }
    return matmul(merged, wo);
}

Tensor glu_mlp(const Tensor& h, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down) {
    Tensor gate = matmul(h, w_gate);
    Tensor up = matmul(h, w_up);
    Tensor act = silu(gate);
    Tensor prod({act.dim(0), act.dim(1)});
    for (int64_t i = 0; i < prod.numel(); ++i) prod[i] = up[i] * act[i];
    return matmul(prod, w_down);
}

}  // namespace sinklab::refk
