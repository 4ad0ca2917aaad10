#pragma once

#include <cmath>
#include <cstdint>

namespace hm {

// Deterministic generator with hand-rolled distributions. std::*_distribution
// output is implementation-defined, which would break the bit-exact
// reproducibility contract across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {
        // warm up so nearby seeds decorrelate
        for (int i = 0; i < 4; ++i) next_u64();
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
        uint64_t span = uint64_t(hi_inclusive - lo) + 1;
        return lo + int64_t(next_u64() % span);
    }

    double normal() {
        // Box-Muller, one value per call (cache the pair)
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // normal resampled until |z| <= 2, as used for weight init
    double truncated_normal() {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z;
    }

    // stable derived stream, e.g. one per dataset pair
    static uint64_t derive(uint64_t seed, uint64_t index) {
        uint64_t z = seed ^ (0x9e3779b97f4a7c15ull + index * 0xbf58476d1ce4e5b9ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace hm
