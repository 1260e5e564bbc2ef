#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emlio/recordfmt.hpp"

namespace emlio::planner {

struct NodeSpec {
    std::string node_id;
    std::string ip;
    uint16_t port = 0;
    bool operator==(const NodeSpec&) const = default;
};

struct BatchRange {
    uint32_t shard_id = 0;
    uint32_t first_entry = 0;
    uint32_t count = 0;  // <= batch_size; a range never spans shards
    uint32_t epoch = 0;
    uint32_t batch_index = 0;  // sequence within (epoch, node)
    bool operator==(const BatchRange&) const = default;
};

struct Assignment {
    uint32_t epoch = 0;
    std::string node_id;
    uint32_t worker = 0;
    std::vector<BatchRange> ranges;
    bool operator==(const Assignment&) const = default;
};

struct EpochPlan {
    uint32_t epochs = 0;
    uint32_t batch_size = 0;
    uint32_t threads_per_node = 0;
    uint64_t seed = 0;
    std::vector<NodeSpec> nodes;
    // Ordered epoch-major, then node in `nodes` order, then worker ascending.
    // Every (epoch, node, worker) triple is present, possibly with no ranges.
    std::vector<Assignment> assignments;

    bool operator==(const EpochPlan&) const = default;
    const NodeSpec& node(const std::string& node_id) const;
    const Assignment& assignment(uint32_t epoch, const std::string& node_id,
                                 uint32_t worker) const;
    // Number of batches the given node receives in the given epoch.
    uint64_t batches_for(uint32_t epoch, const std::string& node_id) const;
};

// Deterministic epoch plan: per epoch the shard list is permuted with a
// Fisher-Yates shuffle over mt19937_64 seeded with (seed ^ epoch), shards are
// dealt round-robin to nodes in list order, each node's deal is split
// round-robin across its T workers, and each shard becomes
// ceil(entries / B) contiguous ranges. batch_index runs worker-major per
// (epoch, node).
EpochPlan plan(const std::vector<recordfmt::ShardIndex>& indexes,
               const std::vector<NodeSpec>& nodes, uint32_t batch_size,
               uint32_t epochs, uint32_t threads_per_node, uint64_t seed);

struct CoverageReport {
    struct Slot {
        uint32_t epoch;
        uint32_t shard_id;
        uint64_t entry;
        bool operator==(const Slot&) const = default;
    };
    std::vector<Slot> missing;
    std::vector<Slot> duplicated;
    bool empty() const { return missing.empty() && duplicated.empty(); }
};

// Checks per-epoch exactly-once coverage of every (shard, entry) slot.
CoverageReport plan_coverage(const EpochPlan& plan,
                             const std::vector<recordfmt::ShardIndex>& indexes);

std::string serialize_plan(const EpochPlan& plan);
EpochPlan deserialize_plan(const std::string& bytes);

EpochPlan load_plan(const std::string& path);
void save_plan(const EpochPlan& plan, const std::string& path);

}  // namespace emlio::planner
