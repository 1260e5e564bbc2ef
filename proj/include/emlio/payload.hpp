#pragma once

#include <cstdint>
#include <vector>

#include "emlio/recordfmt.hpp"

namespace emlio {

// Batch payload layout, all LE:
//   epoch u32 | shard_id u32 | batch_index u32 | num_samples u32
//   then per sample: label u32 | data_len u32 | data
struct BatchHeader {
    uint32_t epoch = 0;
    uint32_t shard_id = 0;
    uint32_t batch_index = 0;
    bool operator==(const BatchHeader&) const = default;
};

inline constexpr size_t kBatchHeaderBytes = 16;

std::vector<uint8_t> encode_batch(const std::vector<recordfmt::Sample>& records,
                                  uint32_t epoch, uint32_t shard_id,
                                  uint32_t batch_index);

struct DecodedPayload {
    BatchHeader header;
    std::vector<recordfmt::Sample> records;
};

DecodedPayload decode_batch(const std::vector<uint8_t>& bytes);

}  // namespace emlio
