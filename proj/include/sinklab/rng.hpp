#pragma once

#include <cstdint>

#include "sinklab/tensor.hpp"

namespace sinklab {

// splitmix64 step; also used to derive per-row seeds for sweep workers.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t index) {
    uint64_t s = base ^ (0xA24BAED4963EE407ULL * (index + 1));
    return splitmix64(s);
}

// xoshiro256** with hand-rolled gaussian sampling. std::normal_distribution is
// implementation-defined, so all randomness goes through this generator to keep
// (seed, config) -> outputs reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        has_spare_ = false;
        spare_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller with a cached spare.
    double gaussian();

    Tensor gaussian_tensor(std::vector<int64_t> shape, double stddev);

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
    bool has_spare_;
    double spare_;
};

}  // namespace sinklab
