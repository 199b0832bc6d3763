#pragma once

#include <cstddef>
#include <cstdint>

namespace tf {

// CRC-32, polynomial 0xEDB88320 (reflected), init and final xor 0xFFFFFFFF.
uint32_t checksum32(const uint8_t* data, size_t n);

// Incremental form for multi-buffer records. Start from crc32_init(),
// update over each buffer, then crc32_final().
inline uint32_t crc32_init() { return 0xFFFFFFFFu; }
uint32_t crc32_update(uint32_t crc, const uint8_t* data, size_t n);
inline uint32_t crc32_final(uint32_t crc) { return crc ^ 0xFFFFFFFFu; }

}  // namespace tf
