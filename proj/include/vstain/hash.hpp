#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace vstain {

// 64-bit FNV-1a. Used for config and schedule identity, not for security.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string to_hex64(std::uint64_t value);

inline std::string hash_hex(std::string_view bytes) {
    return to_hex64(fnv1a64(bytes));
}

}  // namespace vstain
