#pragma once

// Counter-based random stream. Each draw is a pure function of
// (seed, counter), so sequences replay identically across runs and the
// stream can be split by offsetting the counter. The 64-bit mixer is the
// SplitMix64 finalizer.

#include <cmath>
#include <cstdint>
#include <numbers>

#include "snredit/grid.hpp"

namespace snredit {

namespace detail {
inline uint64_t splitmix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

class RngStream {
  public:
    explicit RngStream(uint64_t seed, uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    uint64_t next_u64() {
        const uint64_t v = detail::splitmix64(detail::splitmix64(seed_) ^
                                              detail::splitmix64(counter_));
        ++counter_;
        return v;
    }

    // Uniform on [0, 1) with 53 random bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes two uniforms per call.
    double next_normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    LatentTensor sample_gaussian(int channels, int height, int width) {
        LatentTensor out(channels, height, width);
        for (double& v : out.values) v = next_normal();
        return out;
    }

    // Child stream with an independent counter space.
    RngStream split(uint64_t key) const {
        return RngStream(detail::splitmix64(seed_ ^ detail::splitmix64(key)), 0);
    }

  private:
    uint64_t seed_;
    uint64_t counter_;
};

}  // namespace snredit
