// Times the OpenMP kernels against the serial reference implementations and a
// full instrumented forward pass. Not a correctness test; the test suite pins
// kernel/reference agreement separately.

#include <chrono>
#include <cstdio>
#include <functional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "sinklab/kernels.hpp"
#include "sinklab/model.hpp"
#include "sinklab/ref_kernels.hpp"
#include "sinklab/rng.hpp"

using namespace sinklab;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp; both columns run serial code\n");
#endif
    Rng rng(7);

    for (int64_t n : {128, 256, 384}) {
        Tensor a = rng.gaussian_tensor({n, n}, 1.0);
        Tensor b = rng.gaussian_tensor({n, n}, 1.0);
        const double s = time_ms([&] { (void)refk::matmul(a, b); }, 3);
        const double p = time_ms([&] { (void)kernels::matmul(a, b); }, 3);
        char name[64];
        std::snprintf(name, sizeof(name), "matmul %lldx%lld", static_cast<long long>(n),
                      static_cast<long long>(n));
        report(name, s, p);
    }

    {
        Tensor scores = rng.gaussian_tensor({512, 512}, 1.0);
        const double s = time_ms([&] { (void)refk::causal_softmax(scores); }, 10);
        const double p = time_ms([&] { (void)kernels::causal_softmax(scores); }, 10);
        report("causal_softmax 512", s, p);
    }
    {
        Tensor h = rng.gaussian_tensor({512, 256}, 1.0);
        Tensor g = rng.gaussian_tensor({256}, 1.0);
        const double s = time_ms([&] { (void)refk::rms_norm(h, g, 1e-6); }, 20);
        const double p = time_ms([&] { (void)kernels::rms_norm(h, g, 1e-6); }, 20);
        report("rms_norm 512x256", s, p);
    }
    {
        Tensor x = rng.gaussian_tensor({256, 192}, 1.0);
        Tensor wq = rng.gaussian_tensor({192, 192}, 0.05);
        Tensor wk = rng.gaussian_tensor({192, 192}, 0.05);
        Tensor wv = rng.gaussian_tensor({192, 192}, 0.05);
        Tensor wo = rng.gaussian_tensor({192, 192}, 0.05);
        const double s =
            time_ms([&] { (void)refk::mhsa(x, wq, wk, wv, wo, 4, 10000.0, nullptr); }, 3);
        const double p = time_ms(
            [&] {
                Tape t;
                (void)mhsa_block(t, t.constant(x), t.constant(wq), t.constant(wk),
                                 t.constant(wv), t.constant(wo), 4, 10000.0, nullptr);
            },
            3);
        report("mhsa 256 tokens d=192", s, p);
    }
    return 0;
}
