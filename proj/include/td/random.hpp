#pragma once

#include <cmath>
#include <cstdint>

namespace td {

// SplitMix64 stream. Fully determined by the seed, so masks and datasets
// replay bit-identically across platforms.
class RandomSource {
public:
    explicit RandomSource(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Strictly inside (0,1): the +1 keeps 0 out of the range.
    double uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Independent derived stream for concurrent consumers.
    RandomSource split() { return RandomSource(next_u64()); }

private:
    std::uint64_t state_;
};

}  // namespace td
