#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace beatflow {

using Rng = std::mt19937_64;

/// Derives an independent child seed from a root seed and a stable tag.
inline std::uint64_t split_seed(std::uint64_t root, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::uint64_t z = root ^ h;
    z += 0x9e3779b97f4a7c15ull;  // splitmix64 finalizer
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t split_seed(std::uint64_t root, std::uint64_t index) {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t root, std::string_view tag) { return Rng(split_seed(root, tag)); }

}  // namespace beatflow
