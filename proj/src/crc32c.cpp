#include "emlio/crc32c.hpp"

#include <array>

namespace emlio {
namespace {

constexpr uint32_t kPoly = 0x82f63b78u;  // reflected Castagnoli

struct Tables {
    uint32_t t[8][256];
    Tables() {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t crc = i;
            for (int k = 0; k < 8; ++k) {
                crc = (crc >> 1) ^ ((crc & 1) ? kPoly : 0);
            }
            t[0][i] = crc;
        }
        for (uint32_t i = 0; i < 256; ++i) {
            for (int j = 1; j < 8; ++j) {
                t[j][i] = (t[j - 1][i] >> 8) ^ t[0][t[j - 1][i] & 0xff];
            }
        }
    }
};

const Tables& tables() {
    static const Tables tbl;
    return tbl;
}

#if defined(__x86_64__)

__attribute__((target("sse4.2"))) uint32_t crc32c_extend_hw(uint32_t crc,
                                                            const void* data,
                                                            size_t n) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t c = ~crc;
    while (n >= 8) {
        uint64_t chunk;
        __builtin_memcpy(&chunk, p, 8);
        c = __builtin_ia32_crc32di(c, chunk);
        p += 8;
        n -= 8;
    }
    uint32_t c32 = static_cast<uint32_t>(c);
    while (n--) {
        c32 = __builtin_ia32_crc32qi(c32, *p++);
    }
    return ~c32;
}

bool cpu_has_crc32() {
    static const bool has = __builtin_cpu_supports("sse4.2");
    return has;
}

#endif

}  // namespace

uint32_t crc32c_extend_table(uint32_t crc, const void* data, size_t n) {
    const auto& t = tables().t;
    const uint8_t* p = static_cast<const uint8_t*>(data);
    crc = ~crc;
    while (n >= 8) {
        crc ^= static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
               static_cast<uint32_t>(p[2]) << 16 |
               static_cast<uint32_t>(p[3]) << 24;
        uint32_t hi = static_cast<uint32_t>(p[4]) |
                      static_cast<uint32_t>(p[5]) << 8 |
                      static_cast<uint32_t>(p[6]) << 16 |
                      static_cast<uint32_t>(p[7]) << 24;
        crc = t[7][crc & 0xff] ^ t[6][(crc >> 8) & 0xff] ^
              t[5][(crc >> 16) & 0xff] ^ t[4][crc >> 24] ^ t[3][hi & 0xff] ^
              t[2][(hi >> 8) & 0xff] ^ t[1][(hi >> 16) & 0xff] ^ t[0][hi >> 24];
        p += 8;
        n -= 8;
    }
    while (n--) {
        crc = (crc >> 8) ^ t[0][(crc ^ *p++) & 0xff];
    }
    return ~crc;
}

uint32_t crc32c_extend(uint32_t crc, const void* data, size_t n) {
#if defined(__x86_64__)
    if (cpu_has_crc32()) {
        return crc32c_extend_hw(crc, data, n);
    }
#endif
    return crc32c_extend_table(crc, data, n);
}

uint32_t crc32c(const void* data, size_t n) {
    return crc32c_extend(0, data, n);
}

}  // namespace emlio
