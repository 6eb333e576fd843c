#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "parade/text.hpp"

namespace parade {

/// SplitMix64 (Steele, Lea, Flood 2014). Fully specified 64-bit generator so
/// a seed reproduces the same stream on every platform and standard library.
class SplitMix64 {
  public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : m_state(seed) {}

    constexpr std::uint64_t operator()() noexcept
    {
        std::uint64_t z = (m_state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t min() noexcept { return 0; }
    static constexpr std::uint64_t max() noexcept { return ~std::uint64_t{0}; }

    /// Unbiased integer in [0, bound) by rejection of the short final bucket.
    constexpr std::uint64_t below(std::uint64_t bound)
    {
        if (bound == 0) {
            throw std::invalid_argument("SplitMix64::below: bound must be positive");
        }
        std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            std::uint64_t r = (*this)();
            if (r >= threshold) {
                return r % bound;
            }
        }
    }

  private:
    std::uint64_t m_state;
};

/// Derives an independent seed for a named stage from the top-level seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage)
{
    SplitMix64 mix(seed ^ fnv1a64(stage));
    return mix();
}

/// Uniform sample of k distinct indices from [0, n), in draw order
/// (partial Fisher-Yates).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed)
{
    if (k > n) {
        throw std::invalid_argument("sample_indices: k exceeds population size");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        auto j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

} // namespace parade
