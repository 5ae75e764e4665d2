#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace tlf::rng {

using Engine = std::mt19937_64;

/// SplitMix64 mixing step. Used to derive independent streams from one seed
/// so that parallel consumers never share generator state.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derive a child seed from (seed, salt). Stable across runs and platforms.
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt + 0x632BE59BD9B4E019ull));
}

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return derive(derive(seed, a), b);
}

inline std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) {
    return derive(derive(seed, a, b), c);
}

/// Unbiased uniform draw from [0, n). Rejection sampling, so the mapping from
/// raw engine output to index is pinned (std::uniform_int_distribution is
/// implementation-defined and would not be reproducible across toolchains).
inline int uniform_index(Engine& eng, int n) {
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r = eng();
    while (r >= limit) r = eng();
    return static_cast<int>(r % un);
}

/// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<int> sample_without_replacement(Engine& eng, int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k && i < n; ++i) {
        const int j = i + uniform_index(eng, n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

/// In-place Fisher-Yates shuffle using uniform_index for pinned behavior.
template <typename T>
void shuffle(Engine& eng, std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = uniform_index(eng, i + 1);
        std::swap(v[i], v[j]);
    }
}

}  // namespace tlf::rng
