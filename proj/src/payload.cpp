#include "emlio/payload.hpp"

#include <stdexcept>

#include "emlio/common.hpp"

namespace emlio {

std::vector<uint8_t> encode_batch(const std::vector<recordfmt::Sample>& records,
                                  uint32_t epoch, uint32_t shard_id,
                                  uint32_t batch_index) {
    if (records.empty()) {
        throw std::invalid_argument("encode_batch: empty record list");
    }
    size_t total = kBatchHeaderBytes;
    for (const recordfmt::Sample& r : records) {
        total += 8 + r.data.size();
    }
    std::vector<uint8_t> out;
    out.reserve(total);
    put_u32le(out, epoch);
    put_u32le(out, shard_id);
    put_u32le(out, batch_index);
    put_u32le(out, static_cast<uint32_t>(records.size()));
    for (const recordfmt::Sample& r : records) {
        put_u32le(out, r.label);
        put_u32le(out, static_cast<uint32_t>(r.data.size()));
        out.insert(out.end(), r.data.begin(), r.data.end());
    }
    return out;
}

DecodedPayload decode_batch(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < kBatchHeaderBytes) {
        throw std::runtime_error("decode_batch: truncated header");
    }
    const uint8_t* p = bytes.data();
    DecodedPayload out;
    out.header.epoch = get_u32le(p);
    out.header.shard_id = get_u32le(p + 4);
    out.header.batch_index = get_u32le(p + 8);
    uint32_t num_samples = get_u32le(p + 12);
    if (num_samples == 0) {
        throw std::runtime_error("decode_batch: zero samples");
    }
    size_t pos = kBatchHeaderBytes;
    out.records.reserve(num_samples);
    for (uint32_t i = 0; i < num_samples; ++i) {
        if (pos + 8 > bytes.size()) {
            throw std::runtime_error("decode_batch: truncated sample header");
        }
        recordfmt::Sample s;
        s.label = get_u32le(p + pos);
        uint32_t len = get_u32le(p + pos + 4);
        pos += 8;
        if (pos + len > bytes.size()) {
            throw std::runtime_error("decode_batch: truncated sample data");
        }
        s.data.assign(p + pos, p + pos + len);
        pos += len;
        out.records.push_back(std::move(s));
    }
    if (pos != bytes.size()) {
        throw std::runtime_error("decode_batch: trailing bytes after last sample");
    }
    return out;
}

}  // namespace emlio
