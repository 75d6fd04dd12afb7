#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace polarlab {

/// 64-bit FNV-1a. Stable across platforms; not cryptographic.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// 16 lowercase hex digits.
std::string hex_digest(std::uint64_t h);

inline std::string digest_of(std::string_view bytes) { return hex_digest(fnv1a64(bytes)); }

}  // namespace polarlab
