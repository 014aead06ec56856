#include "sinklab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace sinklab::kernels {

namespace {
// Parallelizing tiny matmuls costs more than it saves.
constexpr int64_t kParallelFlopCutoff = 64 * 64 * 64;

void check_2d(const Tensor& t, const char* name) {
    SINKLAB_CHECK(t.ndim() == 2, name << " must be 2-D, got " << t.ndim() << "-D");
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul lhs");
    check_2d(b, "matmul rhs");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    SINKLAB_CHECK(b.dim(0) == k, "matmul inner dimensions disagree: " << k << " vs " << b.dim(0));
    Tensor c({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > kParallelFlopCutoff)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t t = 0; t < k; ++t) {
            const double av = ap[i * k + t];
            const double* brow = bp + t * n;
            double* crow = cp + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt lhs");
    check_2d(b, "matmul_nt rhs");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    SINKLAB_CHECK(b.dim(1) == k, "matmul_nt inner dimensions disagree: " << k << " vs " << b.dim(1));
    Tensor c({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > kParallelFlopCutoff)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const double* arow = ap + i * k;
            const double* brow = bp + j * k;
            for (int64_t t = 0; t < k; ++t) acc += arow[t] * brow[t];
            cp[i * n + j] = acc;
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_tn lhs");
    check_2d(b, "matmul_tn rhs");
    const int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    SINKLAB_CHECK(b.dim(0) == k, "matmul_tn inner dimensions disagree: " << k << " vs " << b.dim(0));
    Tensor c({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* cp = c.data();
#pragma omp parallel for schedule(static) if (m * n * k > kParallelFlopCutoff)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t t = 0; t < k; ++t) {
            const double av = ap[t * m + i];
            const double* brow = bp + t * n;
            double* crow = cp + i * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

void matmul_acc(Tensor& out, const Tensor& a, const Tensor& b) {
    Tensor c = matmul(a, b);
    add_inplace(out, c);
}

void matmul_nt_acc(Tensor& out, const Tensor& a, const Tensor& b) {
    Tensor c = matmul_nt(a, b);
    add_inplace(out, c);
}

void matmul_tn_acc(Tensor& out, const Tensor& a, const Tensor& b) {
    Tensor c = matmul_tn(a, b);
    add_inplace(out, c);
}

Tensor causal_softmax(const Tensor& scores) {
    check_2d(scores, "causal_softmax input");
    const int64_t n = scores.dim(0);
    SINKLAB_CHECK(scores.dim(1) == n, "causal_softmax requires a square matrix, got "
                                          << n << "x" << scores.dim(1));
    Tensor out({n, n});
    const double* sp = scores.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n > 64)
    for (int64_t i = 0; i < n; ++i) {
        const double* srow = sp + i * n;
        double* orow = op + i * n;
        double row_max = srow[0];
        for (int64_t j = 1; j <= i; ++j) row_max = std::max(row_max, srow[j]);
        double denom = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
            orow[j] = std::exp(srow[j] - row_max);
            denom += orow[j];
        }
        for (int64_t j = 0; j <= i; ++j) orow[j] /= denom;
        // j > i stays exactly 0 from value initialization.
    }
    return out;
}

Tensor rms_norm(const Tensor& h, const Tensor& gain, double eps) {
    check_2d(h, "rms_norm input");
    const int64_t n = h.dim(0), d = h.dim(1);
    SINKLAB_CHECK(gain.numel() == d, "rms_norm gain length " << gain.numel() << " != width " << d);
    Tensor out({n, d});
    const double* hp = h.data();
    const double* gp = gain.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n * d > 4096)
    for (int64_t i = 0; i < n; ++i) {
        const double* row = hp + i * d;
        double ms = 0.0;
        for (int64_t j = 0; j < d; ++j) ms += row[j] * row[j];
        ms /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(ms + eps);
        double* orow = op + i * d;
        for (int64_t j = 0; j < d; ++j) orow[j] = row[j] * inv * gp[j];
    }
    return out;
}

Tensor layer_norm(const Tensor& h, const Tensor& gain, double eps) {
    check_2d(h, "layer_norm input");
    const int64_t n = h.dim(0), d = h.dim(1);
    SINKLAB_CHECK(gain.numel() == d, "layer_norm gain length " << gain.numel() << " != width " << d);
    Tensor out({n, d});
    const double* hp = h.data();
    const double* gp = gain.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n * d > 4096)
    for (int64_t i = 0; i < n; ++i) {
        const double* row = hp + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        double* orow = op + i * d;
        for (int64_t j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv * gp[j];
    }
    return out;
}

Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    const int64_t n = x.numel();
    const double* xp = x.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n > 8192)
    for (int64_t i = 0; i < n; ++i) {
        op[i] = xp[i] / (1.0 + std::exp(-xp[i]));
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    SINKLAB_CHECK(a.same_shape(b), "add shape mismatch");
    Tensor out(a.shape());
    const int64_t n = a.numel();
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    SINKLAB_CHECK(a.same_shape(b), "mul shape mismatch");
    Tensor out(a.shape());
    const int64_t n = a.numel();
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    const int64_t n = a.numel();
    const double* ap = a.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * s;
    return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
    SINKLAB_CHECK(a.same_shape(b), "add_inplace shape mismatch");
    const int64_t n = a.numel();
    double* ap = a.data();
    const double* bp = b.data();
#pragma omp parallel for schedule(static) if (n > 16384)
    for (int64_t i = 0; i < n; ++i) ap[i] += bp[i];
}

Tensor average_pool_rows(const Tensor& stream, int64_t factor) {
    check_2d(stream, "average_pool_rows input");
    SINKLAB_CHECK(factor >= 1, "pooling factor must be >= 1, got " << factor);
    const int64_t t = stream.dim(0), d = stream.dim(1);
    SINKLAB_CHECK(t >= 1, "cannot pool an empty stream");
    const int64_t out_t = (t + factor - 1) / factor;
    Tensor out({out_t, d});
    const double* sp = stream.data();
    double* op = out.data();
#pragma omp parallel for schedule(static) if (out_t * d > 8192)
    for (int64_t w = 0; w < out_t; ++w) {
        const int64_t lo = w * factor;
        const int64_t hi = std::min(lo + factor, t);
        const double inv = 1.0 / static_cast<double>(hi - lo);
        double* orow = op + w * d;
        for (int64_t r = lo; r < hi; ++r) {
            const double* srow = sp + r * d;
            for (int64_t j = 0; j < d; ++j) orow[j] += srow[j];
        }
        for (int64_t j = 0; j < d; ++j) orow[j] *= inv;
    }
    return out;
}

}  // namespace sinklab::kernels
