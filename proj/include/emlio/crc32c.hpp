#pragma once

#include <cstddef>
#include <cstdint>

namespace emlio {

// CRC-32C (Castagnoli polynomial, reflected), the checksum used by the shard
// record framing and the transport frames. Uses the x86 CRC32 instruction
// when the CPU has it, falling back to the table implementation.
uint32_t crc32c(const void* data, size_t n);
uint32_t crc32c_extend(uint32_t crc, const void* data, size_t n);

// Table-driven path, kept callable so both implementations stay testable.
uint32_t crc32c_extend_table(uint32_t crc, const void* data, size_t n);

// Record framing stores CRCs masked so that a CRC computed over bytes that
// themselves contain a CRC does not collide with it: rotate right by 15 bits,
// then add a constant.
inline uint32_t crc32c_mask(uint32_t crc) {
    return ((crc >> 15) | (crc << 17)) + 0xa282ead8u;
}

inline uint32_t crc32c_unmask(uint32_t masked) {
    uint32_t rot = masked - 0xa282ead8u;
    return (rot >> 17) | (rot << 15);
}

}  // namespace emlio
