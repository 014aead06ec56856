#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "sinklab/kernels.hpp"
#include "sinklab/ref_kernels.hpp"
#include "sinklab/rng.hpp"
#include "sinklab/tape.hpp"

using namespace sinklab;

namespace {

// Reduces a 2-D node to a scalar as onesᵀ · (x ⊙ w) · ones with fixed random
// weights, so finite-difference checks see every entry.
NodeId weighted_sum(Tape& t, NodeId x, const Tensor& w) {
    NodeId mixed = t.mul(x, t.constant(w));
    const int64_t m = w.dim(0), n = w.dim(1);
    NodeId left = t.matmul(t.constant(Tensor::full({1, m}, 1.0)), mixed);
    return t.matmul(left, t.constant(Tensor::full({n, 1}, 1.0)));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("matmul: identity and selection cases") {
    Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor c = kernels::matmul(Tensor::identity(2), a);
    CHECK(max_abs_diff(c, a) == 0.0);

    Tensor r = kernels::matmul(Tensor::matrix({{1, 0}}), Tensor::matrix({{0}, {5}}));
    CHECK(r.numel() == 1);
    CHECK(r[0] == 0.0);
}

TEST_CASE("matmul: random against naive triple loop") {
    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor a = rng.gaussian_tensor({3, 4}, 1.0);
        Tensor b = rng.gaussian_tensor({4, 2}, 1.0);
        Tensor c = kernels::matmul(a, b);
        // independent triple loop
        Tensor want({3, 2});
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 2; ++j)
                for (int64_t k = 0; k < 4; ++k) want.at(i, j) += a.at(i, k) * b.at(k, j);
        CHECK(max_abs_diff(c, want) <= 1e-12);
        CHECK(max_abs_diff(c, refk::matmul(a, b)) <= 1e-12);
    }
}

TEST_CASE("matmul: shape mismatch rejected") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    CHECK_THROWS_AS((void)kernels::matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul_nt/tn agree with explicit transposes") {
    Rng rng(12);
    Tensor a = rng.gaussian_tensor({5, 3}, 1.0);
    Tensor b = rng.gaussian_tensor({4, 3}, 1.0);
    Tensor bt({3, 4});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 3; ++j) bt.at(j, i) = b.at(i, j);
    CHECK(max_abs_diff(kernels::matmul_nt(a, b), kernels::matmul(a, bt)) <= 1e-12);

    Tensor c = rng.gaussian_tensor({3, 5}, 1.0);
    Tensor ct({5, 3});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 5; ++j) ct.at(j, i) = c.at(i, j);
    Tensor d = rng.gaussian_tensor({3, 2}, 1.0);
    CHECK(max_abs_diff(kernels::matmul_tn(c, d), kernels::matmul(ct, d)) <= 1e-12);
}

TEST_CASE("causal_softmax: uniform logits give row-uniform causal rows") {
    Tensor y = kernels::causal_softmax(Tensor::zeros({3, 3}));
    Tensor want = Tensor::matrix({{1, 0, 0}, {0.5, 0.5, 0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
    CHECK(max_abs_diff(y, want) <= 1e-15);
}

TEST_CASE("causal_softmax: row-shift invariance and strict causality") {
    Rng rng(13);
    Tensor s = rng.gaussian_tensor({5, 5}, 2.0);
    Tensor y0 = kernels::causal_softmax(s);
    Tensor shifted = s;
    for (int64_t j = 0; j < 5; ++j) shifted.at(2, j) += 7.25;
    Tensor y1 = kernels::causal_softmax(shifted);
    CHECK(max_abs_diff(y0, y1) <= 1e-12);
    for (int64_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < 5; ++j) {
            if (j > i) CHECK(y0.at(i, j) == 0.0);
            row += y0.at(i, j);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("causal_softmax: random against masked exponentiate-normalize oracle") {
    Rng rng(14);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor s = rng.gaussian_tensor({5, 5}, 1.5);
        Tensor y = kernels::causal_softmax(s);
        Tensor want({5, 5});
        for (int64_t i = 0; i < 5; ++i) {
            double z = 0.0;
            for (int64_t j = 0; j <= i; ++j) z += std::exp(s.at(i, j));
            for (int64_t j = 0; j <= i; ++j) want.at(i, j) = std::exp(s.at(i, j)) / z;
        }
        CHECK(max_abs_diff(y, want) <= 1e-12);
        CHECK(max_abs_diff(y, refk::causal_softmax(s)) <= 1e-12);
    }
    CHECK_THROWS_AS((void)kernels::causal_softmax(Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("rms_norm: constant vector normalizes to unit RMS") {
    Tensor h = Tensor::matrix({{2, 2, 2, 2}});
    Tensor y = kernels::rms_norm(h, Tensor::full({4}, 1.0), 1e-6);
    for (int64_t j = 0; j < 4; ++j) CHECK(y[j] == doctest::Approx(1.0).epsilon(1e-6));

    Tensor z = kernels::rms_norm(Tensor::zeros({1, 4}), Tensor::full({4}, 1.0), 1e-6);
    for (int64_t j = 0; j < 4; ++j) CHECK(z[j] == 0.0);
}

TEST_CASE("rms_norm and layer_norm: random against scalar-loop oracle") {
    Rng rng(15);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor h = rng.gaussian_tensor({6, 8}, 1.3);
        Tensor g = rng.gaussian_tensor({8}, 1.0);
        Tensor y = kernels::rms_norm(h, g, 1e-6);
        for (int64_t i = 0; i < 6; ++i) {
            double ms = 0.0;
            for (int64_t j = 0; j < 8; ++j) ms += h.at(i, j) * h.at(i, j);
            const double r = std::sqrt(ms / 8.0 + 1e-6);
            for (int64_t j = 0; j < 8; ++j)
                CHECK(std::abs(y.at(i, j) - h.at(i, j) / r * g[j]) <= 1e-12);
        }
        CHECK(max_abs_diff(y, refk::rms_norm(h, g, 1e-6)) <= 1e-12);
        CHECK(max_abs_diff(kernels::layer_norm(h, g, 1e-6), refk::layer_norm(h, g, 1e-6)) <=
              1e-12);
    }
}

TEST_CASE("silu: fixed points and asymptotes") {
    Tensor x = Tensor::vector({0.0});
    CHECK(kernels::silu(Tensor({1, 1}, {0.0}))[0] == 0.0);
    CHECK(kernels::silu(Tensor({1, 1}, {1.0}))[0] ==
          doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(kernels::silu(Tensor({1, 1}, {40.0}))[0] == doctest::Approx(40.0).epsilon(1e-12));
    CHECK(std::abs(kernels::silu(Tensor({1, 1}, {-40.0}))[0]) <= 1e-12);
    Rng rng(16);
    Tensor r = rng.gaussian_tensor({4, 4}, 2.0);
    Tensor y = kernels::silu(r);
    for (int64_t i = 0; i < r.numel(); ++i)
        CHECK(std::abs(y[i] - r[i] / (1.0 + std::exp(-r[i]))) <= 1e-12);
}

TEST_CASE("cosine_sim: self, orthogonal, scale invariance, zero guard") {
    Tape t;
    NodeId u = t.leaf(Tensor::vector({1, 2, 3}));
    CHECK(t.scalar_value(t.cosine_sim(u, u)) == doctest::Approx(1.0).epsilon(1e-12));

    NodeId a = t.leaf(Tensor::vector({1, 0}));
    NodeId b = t.leaf(Tensor::vector({0, 5}));
    CHECK(t.scalar_value(t.cosine_sim(a, b)) == 0.0);

    Rng rng(17);
    Tensor uu = rng.gaussian_tensor({6}, 1.0);
    Tensor vv = rng.gaussian_tensor({6}, 1.0);
    Tape t2;
    const double base = t2.scalar_value(t2.cosine_sim(t2.leaf(uu), t2.leaf(vv)));
    const double scaled = t2.scalar_value(
        t2.cosine_sim(t2.leaf(kernels::scale(uu, 3.7)), t2.leaf(kernels::scale(vv, 0.2))));
    CHECK(base == doctest::Approx(scaled).epsilon(1e-12));
    CHECK(base >= -1.0 - 1e-12);
    CHECK(base <= 1.0 + 1e-12);

    // zero-norm operand: value 0 and zero gradient into both sides
    Tape t3;
    NodeId z = t3.leaf(Tensor::zeros({3}), true);
    NodeId w = t3.leaf(Tensor::vector({1, 2, 3}), true);
    NodeId c = t3.cosine_sim(z, w);
    CHECK(t3.scalar_value(c) == 0.0);
    t3.backward(c);
    CHECK(t3.grad(z).max_abs() == 0.0);
    CHECK(t3.grad(w).max_abs() == 0.0);
}

TEST_CASE("cross_entropy: uniform, confident, oracle, bad target") {
    Tape t;
    NodeId uniform = t.leaf(Tensor::zeros({1, 8}));
    CHECK(t.scalar_value(t.cross_entropy(uniform, {3})) ==
          doctest::Approx(std::log(8.0)).epsilon(1e-12));

    Tensor confident = Tensor::zeros({1, 4});
    confident.at(0, 2) = 50.0;
    Tape t2;
    CHECK(t2.scalar_value(t2.cross_entropy(t2.leaf(confident), {2})) <= 1e-10);

    Rng rng(18);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor logits = rng.gaussian_tensor({4, 10}, 2.0);
        std::vector<int64_t> targets;
        for (int i = 0; i < 4; ++i) targets.push_back(rng.uniform_int(10));
        Tape t3;
        const double got = t3.scalar_value(t3.cross_entropy(t3.leaf(logits), targets));
        // explicit softmax-then-log oracle
        double want = 0.0;
        for (int64_t i = 0; i < 4; ++i) {
            double z = 0.0;
            for (int64_t j = 0; j < 10; ++j) z += std::exp(logits.at(i, j));
            want += -std::log(std::exp(logits.at(i, targets[static_cast<size_t>(i)])) / z);
        }
        want /= 4.0;
        CHECK(std::abs(got - want) <= 1e-10);
        CHECK(std::abs(got - refk::cross_entropy(logits, targets)) <= 1e-12);
    }

    Tape t4;
    NodeId l = t4.leaf(Tensor::zeros({2, 5}));
    CHECK_THROWS_AS((void)t4.cross_entropy(l, {1, 7}), std::out_of_range);
}

TEST_CASE("backward: linear map, disconnected leaf, repeat rejected, non-scalar rejected") {
    Tape t;
    Tensor wv = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
    Tensor xv = Tensor::matrix({{0.5}, {-1.0}, {2.0}});
    NodeId w = t.leaf(wv, true);
    NodeId orphan = t.leaf(Tensor::full({3}, 2.0), true);
    NodeId prod = t.matmul(w, t.constant(xv));  // 2×1
    NodeId loss = t.matmul(t.constant(Tensor::full({1, 2}, 1.0)), prod);
    t.backward(loss);
    // d(sum(Wx))/dW = outer(ones, x)
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) CHECK(t.grad(w).at(i, j) == xv[j]);
    CHECK(t.grad(orphan).max_abs() == 0.0);
    CHECK_THROWS_AS(t.backward(loss), std::invalid_argument);

    Tape t2;
    NodeId big = t2.leaf(Tensor::zeros({2, 2}), true);
    NodeId sq = t2.mul(big, big);
    CHECK_THROWS_AS(t2.backward(sq), std::invalid_argument);
}

TEST_CASE("grad_check: quadratic is exact to second order") {
    Rng rng(19);
    Tensor x = rng.gaussian_tensor({1, 6}, 1.0);
    const double err = grad_check(
        [](Tape& t, NodeId p) { return t.scale(t.matmul_nt(p, p), 0.5); }, x, 1e-6);
    CHECK(err <= 1e-9);
}

TEST_CASE("grad_check: cosine against fixed direction") {
    Rng rng(20);
    Tensor x = rng.gaussian_tensor({5}, 1.0);
    Tensor bos = rng.gaussian_tensor({5}, 1.0);
    const double err = grad_check(
        [&](Tape& t, NodeId p) { return t.cosine_sim(p, t.constant(bos)); }, x, 1e-6);
    CHECK(err <= 1e-6);
}

TEST_CASE("finite differences: every differentiable op") {
    Rng rng(21);
    const double step = 1e-6, tol = 1e-5;

    SUBCASE("matmul lhs and rhs") {
        Tensor a = rng.gaussian_tensor({3, 4}, 1.0);
        Tensor b = rng.gaussian_tensor({4, 2}, 1.0);
        Tensor w = rng.gaussian_tensor({3, 2}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.matmul(p, t.constant(b)), w); },
                         a, step) <= tol);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.matmul(t.constant(a), p), w); },
                         b, step) <= tol);
    }
    SUBCASE("matmul_nt both sides") {
        Tensor a = rng.gaussian_tensor({3, 4}, 1.0);
        Tensor b = rng.gaussian_tensor({5, 4}, 1.0);
        Tensor w = rng.gaussian_tensor({3, 5}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.matmul_nt(p, t.constant(b)), w); },
                         a, step) <= tol);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.matmul_nt(t.constant(a), p), w); },
                         b, step) <= tol);
    }
    SUBCASE("add, mul, scale") {
        Tensor a = rng.gaussian_tensor({3, 3}, 1.0);
        Tensor b = rng.gaussian_tensor({3, 3}, 1.0);
        Tensor w = rng.gaussian_tensor({3, 3}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.add(p, t.constant(b)), w); },
                         a, step) <= tol);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.mul(p, t.constant(b)), w); },
                         a, step) <= tol);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.scale(p, -2.5), w); },
                         a, step) <= tol);
    }
    SUBCASE("silu") {
        Tensor a = rng.gaussian_tensor({4, 4}, 2.0);
        Tensor w = rng.gaussian_tensor({4, 4}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.silu(p), w); }, a,
                         step) <= tol);
    }
    SUBCASE("causal_softmax") {
        Tensor a = rng.gaussian_tensor({5, 5}, 1.0);
        Tensor w = rng.gaussian_tensor({5, 5}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.causal_softmax(p), w); },
                         a, step) <= tol);
    }
    SUBCASE("rms_norm input and gain") {
        Tensor h = rng.gaussian_tensor({4, 6}, 1.0);
        Tensor g = rng.gaussian_tensor({6}, 1.0);
        Tensor w = rng.gaussian_tensor({4, 6}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.rms_norm(p, t.constant(g)), w); },
                         h, step) <= tol);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.rms_norm(t.constant(h), p), w); },
                         g, step) <= tol);
    }
    SUBCASE("layer_norm input and gain") {
        Tensor h = rng.gaussian_tensor({4, 6}, 1.0);
        Tensor g = rng.gaussian_tensor({6}, 1.0);
        Tensor w = rng.gaussian_tensor({4, 6}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.layer_norm(p, t.constant(g)), w); },
                         h, step) <= tol);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.layer_norm(t.constant(h), p), w); },
                         g, step) <= tol);
    }
    SUBCASE("rope") {
        Tensor x = rng.gaussian_tensor({5, 8}, 1.0);
        Tensor w = rng.gaussian_tensor({5, 8}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.rope(p, 2, 10000.0), w); },
                         x, step) <= tol);
    }
    SUBCASE("slices, concats, gather") {
        Tensor x = rng.gaussian_tensor({5, 6}, 1.0);
        Tensor w1 = rng.gaussian_tensor({5, 3}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.col_slice(p, 2, 3), w1); },
                         x, step) <= tol);
        Tensor w2 = rng.gaussian_tensor({2, 6}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.row_slice(p, 1, 2), w2); },
                         x, step) <= tol);
        Tensor w3 = rng.gaussian_tensor({5, 12}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.col_concat({p, p}), w3); },
                         x, step) <= tol);
        Tensor w4 = rng.gaussian_tensor({10, 6}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.row_concat({p, p}), w4); },
                         x, step) <= tol);
        Tensor w5 = rng.gaussian_tensor({4, 6}, 1.0);
        CHECK(grad_check(
                  [&](Tape& t, NodeId p) { return weighted_sum(t, t.gather_rows(p, {0, 2, 2, 4}), w5); },
                  x, step) <= tol);
    }
    SUBCASE("cross_entropy") {
        Tensor logits = rng.gaussian_tensor({4, 7}, 1.5);
        CHECK(grad_check([&](Tape& t, NodeId p) { return t.cross_entropy(p, {1, -1, 6, 0}); },
                         logits, step) <= tol);
    }
    SUBCASE("bos_alignment_sq_mean") {
        Tensor h = rng.gaussian_tensor({5, 6}, 1.0);
        std::vector<bool> inc = {false, true, true, false, true};
        CHECK(grad_check([&](Tape& t, NodeId p) { return t.bos_alignment_sq_mean(p, inc); }, h,
                         step) <= tol);
    }
    SUBCASE("rotate_row_to") {
        Tensor h = rng.gaussian_tensor({5, 6}, 1.0);
        Tensor w = rng.gaussian_tensor({5, 6}, 1.0);
        CHECK(grad_check([&](Tape& t, NodeId p) { return weighted_sum(t, t.rotate_row_to(p, 3, 1), w); },
                         h, step) <= tol);
    }
    SUBCASE("mean_scalars and cosine chain") {
        Tensor h = rng.gaussian_tensor({2, 6}, 1.0);
        CHECK(grad_check(
                  [&](Tape& t, NodeId p) {
                      NodeId u = t.row_slice(p, 0, 1);
                      NodeId v = t.row_slice(p, 1, 1);
                      NodeId c = t.cosine_sim(u, v);
                      NodeId c2 = t.mul(c, c);
                      return t.mean_scalars({c, c2});
                  },
                  h, step) <= tol);
    }
}

TEST_CASE("tape determinism: identical seeds give bit-identical loss and grads") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tape t;
        NodeId a = t.leaf(rng.gaussian_tensor({6, 6}, 1.0), true);
        NodeId b = t.leaf(rng.gaussian_tensor({6, 6}, 1.0), true);
        NodeId y = t.causal_softmax(t.matmul(a, b));
        NodeId s = t.silu(t.matmul(y, b));
        NodeId loss = weighted_sum(t, s, Tensor::full({6, 6}, 0.3));
        t.backward(loss);
        std::vector<double> out;
        out.push_back(t.scalar_value(loss));
        for (double v : t.grad(a).storage()) out.push_back(v);
        for (double v : t.grad(b).storage()) out.push_back(v);
        return out;
    };
    const auto r1 = run(99), r2 = run(99);
    REQUIRE(r1.size() == r2.size());
    for (size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("forward ops agree with serial reference on random small inputs") {
    Rng rng(23);
    for (int rep = 0; rep < 25; ++rep) {
        const int64_t n = 2 + rng.uniform_int(7), d = 2 + rng.uniform_int(7);
        Tensor a = rng.gaussian_tensor({n, d}, 1.0);
        Tensor b = rng.gaussian_tensor({d, n}, 1.0);
        CHECK(max_abs_diff(kernels::matmul(a, b), refk::matmul(a, b)) <= 1e-12);
        Tensor g = rng.gaussian_tensor({d}, 1.0);
        CHECK(max_abs_diff(kernels::rms_norm(a, g, 1e-6), refk::rms_norm(a, g, 1e-6)) <= 1e-12);
        CHECK(max_abs_diff(kernels::silu(a), refk::silu(a)) <= 1e-12);
        Tensor sq = rng.gaussian_tensor({n, n}, 1.0);
        CHECK(max_abs_diff(kernels::causal_softmax(sq), refk::causal_softmax(sq)) <= 1e-12);
        const int64_t f = 1 + rng.uniform_int(4);
        CHECK(max_abs_diff(kernels::average_pool_rows(a, f), refk::average_pool_rows(a, f)) <=
              1e-12);
    }
}
