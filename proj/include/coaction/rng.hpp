#pragma once

#include <cstdint>
#include <limits>
#include <numbers>

namespace coaction {

/// Counter-based generator: output i is a SplitMix64 finalizer applied to key + i * gamma.
/// Streams derived with split() are independent of the parent's position.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(mix(mix(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL)))
    {
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept { return mix(key_ + (++counter_) * kGamma); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection, so every index is equally likely.
    std::uint64_t uniform_index(std::uint64_t n) noexcept
    {
        if (n <= 1) {
            return 0;
        }
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t v = 0;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    CounterRng split(std::uint64_t stream) const noexcept
    {
        CounterRng child(0);
        child.key_ = mix(key_ ^ mix(stream + 0x9E3779B97F4A7C15ULL));
        return child;
    }

    std::uint64_t counter() const noexcept { return counter_; }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace coaction
