#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace tcde {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// FNV-1a over the raw bytes of `data`. Used for deterministic mock output
// and for the hashing embedder; not a cryptographic hash.
constexpr std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = kFnvOffsetBasis;
  for (unsigned char c : data) {
    h ^= static_cast<std::uint64_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

// 16 lowercase hex digits, zero padded.
std::string to_hex16(std::uint64_t value);

inline std::string fnv1a64_hex(std::string_view data) {
  return to_hex16(fnv1a64(data));
}

// First 8 hex digits of fnv1a64. Compact fingerprint used when a prompt or
// script has to be identified without reproducing its content.
inline std::string fnv1a64_hex8(std::string_view data) {
  return to_hex16(fnv1a64(data)).substr(0, 8);
}

// SHA-256 as 64 lowercase hex digits. Used for cache keys and index
// fingerprints where accidental collisions must be negligible.
std::string sha256_hex(std::string_view data);

}  // namespace tcde
