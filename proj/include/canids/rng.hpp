#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace canids {

// Deterministic random source. std::mt19937 output is fully specified by the
// standard, but std::shuffle and the distribution classes are not, so the
// derivations here (uniform floats, bounded ints, Fisher-Yates) are done by
// hand to keep every seed reproducible across compilers.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

    uint32_t next_u32() { return gen_(); }

    // uniform in [0, 1), 24 bits of resolution
    float uniform() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    double uniform_double() {
        uint64_t hi = next_u32();
        uint64_t lo = next_u32();
        return static_cast<double>((hi << 21) ^ lo) * (1.0 / 9007199254740992.0);  // 2^53
    }

    // uniform integer in [0, n), rejection-sampled to avoid modulo bias
    uint64_t uniform_int(uint64_t n) {
        if (n <= 1) return 0;
        uint64_t limit = UINT64_C(0x100000000) - (UINT64_C(0x100000000) % n);
        uint64_t v;
        do {
            v = next_u32();
        } while (v >= limit);
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        shuffle(p);
        return p;
    }

private:
    std::mt19937 gen_;
};

}  // namespace canids
