#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace emlio {

// All on-disk and on-wire integers are little-endian.

inline void put_u32le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 24));
}

inline void put_u64le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
}

inline void put_u16le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

inline uint16_t get_u16le(const uint8_t* p) {
    return static_cast<uint16_t>(p[0]) | static_cast<uint16_t>(p[1]) << 8;
}

inline uint32_t get_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

inline uint64_t get_u64le(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = v << 8 | p[i];
    }
    return v;
}

inline void store_u32le(uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v);
    p[1] = static_cast<uint8_t>(v >> 8);
    p[2] = static_cast<uint8_t>(v >> 16);
    p[3] = static_cast<uint8_t>(v >> 24);
}

inline void store_u64le(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        p[i] = static_cast<uint8_t>(v >> (8 * i));
    }
}

// Wall-clock nanoseconds since the Unix epoch. Used for event and energy
// timestamps so logs from different processes on one host line up.
inline uint64_t wall_now_ns() {
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count());
}

inline uint64_t steady_now_ns() {
    return static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now().time_since_epoch())
            .count());
}

// Sleep that lands tightly on its deadline: coarse kernel sleep for the bulk,
// then a short spin for the tail. Plain sleep_for routinely overshoots by a
// scheduler quantum under load, which would smear emulated compute time into
// the neighboring stage when logs are split into per-stage windows.
inline void precise_sleep_until(std::chrono::steady_clock::time_point deadline) {
    constexpr auto kSpinWindow = std::chrono::microseconds(400);
    auto coarse = deadline - kSpinWindow;
    if (coarse > std::chrono::steady_clock::now()) {
        std::this_thread::sleep_until(coarse);
    }
    while (std::chrono::steady_clock::now() < deadline) {
    }
}

inline void precise_sleep_for(std::chrono::nanoseconds d) {
    precise_sleep_until(std::chrono::steady_clock::now() + d);
}

// Splits "host:port" and validates the port range.
inline std::pair<std::string, uint16_t> parse_host_port(const std::string& s) {
    auto pos = s.rfind(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 == s.size()) {
        throw std::invalid_argument("expected host:port, got '" + s + "'");
    }
    unsigned long port = 0;
    try {
        port = std::stoul(s.substr(pos + 1));
    } catch (const std::exception&) {
        throw std::invalid_argument("bad port in '" + s + "'");
    }
    if (port > 65535) {
        throw std::invalid_argument("port out of range in '" + s + "'");
    }
    return {s.substr(0, pos), static_cast<uint16_t>(port)};
}

}  // namespace emlio
