#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace aeval {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// First 8 bytes of SHA-256(key || 0x00 || data), big-endian.
std::uint64_t keyed_hash64(std::string_view key, std::string_view data);

}  // namespace aeval
