#pragma once

#include <cstddef>
#include <cstdint>

namespace dys {

// Standard CRC-32 (IEEE 802.3 polynomial, reflected).
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// FNV-1a over raw bytes, for stream digests.
uint64_t fnv1a_bytes(const void* data, size_t len, uint64_t h = 1469598103934665603ull);

}  // namespace dys
