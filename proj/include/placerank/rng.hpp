#pragma once

#include <cmath>
#include <cstdint>

namespace placerank {

/// Deterministic 64-bit generator (splitmix64). Chosen over the standard
/// library distributions because its output stream is fixed by the seed on
/// every platform, which keeps bootstrap resampling and synthetic data
/// byte-reproducible.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform draw in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Uses the modulo reduction; the bias is
    /// negligible for n far below 2^64 and the mapping is platform-stable.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

    /// Standard normal draw via Box-Muller. Consumes two uniforms so the
    /// stream position depends only on the call count.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

} // namespace placerank
