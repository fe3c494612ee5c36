#pragma once

#include <cstdint>
#include <random>

namespace retriage {

/// Seedable pseudo-random stream used everywhere randomness is required.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// C++ standard, and all derived draws (bounded integers, unit doubles)
/// are mapped here rather than through std::uniform_*_distribution, whose
/// output is implementation-defined. Fold assignments, synthetic images,
/// parameter initialization and sampling are therefore reproducible across
/// standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). Fixed-point multiply of the top 64 bits
    /// (Lemire's method without the rejection step; bias < 2^-64 * n).
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Uniform double in [0, 1) with 53 random mantissa bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Derive an independent child stream. splitmix64 finalizes the mix so
    /// nearby salts give unrelated seeds.
    Rng derive(std::uint64_t salt) const { return Rng(mix(seed_, salt)); }

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace retriage
