#pragma once

#include <cstdint>
#include <string_view>

namespace tlf {

/// FNV-1a 64-bit content hash; stable across runs and platforms.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace tlf
