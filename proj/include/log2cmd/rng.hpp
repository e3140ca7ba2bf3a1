#pragma once

#include <cstdint>
#include <random>

namespace log2cmd {

// splitmix64 finalizer; decorrelates structured seed inputs
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ b); }

template <typename... Rest>
std::uint64_t mix64(std::uint64_t a, std::uint64_t b, Rest... rest) {
    return mix64(mix64(a, b), static_cast<std::uint64_t>(rest)...);
}

using Rng = std::mt19937_64;

// Derives an independent engine for a named stream of the experiment seed.
template <typename... Tags>
Rng make_rng(std::uint64_t seed, Tags... tags) {
    if constexpr (sizeof...(Tags) == 0) {
        return Rng(mix64(seed));
    } else {
        return Rng(mix64(seed, static_cast<std::uint64_t>(tags)...));
    }
}

}  // namespace log2cmd
