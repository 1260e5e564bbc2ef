#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace emlio::recordfmt {

// On-disk record framing, per record:
//   length   u64 LE
//   crc      u32 LE  masked CRC-32C of the 8 length bytes
//   payload  length bytes
//   crc      u32 LE  masked CRC-32C of the payload
inline constexpr uint64_t kRecordOverhead = 16;

struct Sample {
    std::vector<uint8_t> data;
    uint32_t label = 0;
    bool operator==(const Sample&) const = default;
};

struct RecordEntry {
    uint64_t offset = 0;  // byte offset of the record's length prefix
    uint64_t size = 0;    // payload bytes, excluding framing
    uint32_t label = 0;
    bool operator==(const RecordEntry&) const = default;
};

struct ShardIndex {
    uint32_t shard_id = 0;
    std::string shard_file;  // relative to the index file's directory
    std::vector<RecordEntry> entries;
    uint64_t total_samples() const { return entries.size(); }
    bool operator==(const ShardIndex&) const = default;
};

struct CorruptRecordError : std::runtime_error {
    CorruptRecordError(const std::string& what, uint64_t offset_arg)
        : std::runtime_error(what), offset(offset_arg) {}
    uint64_t offset;
};

// Maps the name of a sample file's parent directory to a class label.
using LabelRule = std::function<uint32_t(const std::string& parent_dir)>;

// Writes shard_<id>.tfrecord plus its companion mapping_shard_<id>.json
// under output_dir and returns the index.
ShardIndex write_shard(const std::vector<Sample>& samples, uint32_t shard_id,
                       const std::filesystem::path& output_dir);

ShardIndex read_index(const std::filesystem::path& index_path);
void write_index(const ShardIndex& index, const std::filesystem::path& dir);

// One sequential read covering a contiguous slice of index entries, then
// per-record CRC verification.
std::vector<Sample> read_range(const std::filesystem::path& shard_path,
                               std::span<const RecordEntry> entries);

// Packs every regular file under input_dir (lexicographic relative-path
// order) into shards of samples_per_shard records.
std::vector<ShardIndex> convert_dataset(const std::filesystem::path& input_dir,
                                        const std::filesystem::path& output_dir,
                                        uint64_t samples_per_shard,
                                        const LabelRule& labeling_rule);

// Labels parent directories by their sorted order of first appearance over a
// dataset tree; files in the input root get their own label.
LabelRule directory_label_rule(const std::filesystem::path& input_dir);

// Reads all mapping_shard_*.json under dir, ordered by shard_id.
std::vector<ShardIndex> load_dataset(const std::filesystem::path& dir);

// Global sample index (shard order, then entry order) -> label.
std::vector<uint32_t> build_label_map(const std::vector<ShardIndex>& indexes);

}  // namespace emlio::recordfmt
