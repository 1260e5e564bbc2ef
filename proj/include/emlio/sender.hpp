#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "emlio/events.hpp"
#include "emlio/planner.hpp"
#include "emlio/transport.hpp"

namespace emlio::sender {

struct SenderConfig {
    std::string node_id;
    std::filesystem::path data_dir;
    // 0 means take the plan's thread count; any other value must match it.
    uint32_t workers = 0;
    transport::ChannelConfig channel;
    events::EventLogger* events = nullptr;
    // When set, only these worker indexes run in this instance. Lets one
    // node's streams be split across differently-delayed sender instances.
    std::optional<std::vector<uint32_t>> worker_subset;
};

struct SendSummary {
    struct EpochCounts {
        uint32_t epoch = 0;
        uint64_t batches = 0;
        uint64_t bytes = 0;  // encoded payload bytes
        uint64_t ranges_read = 0;
    };
    std::vector<EpochCounts> epochs;
    double wall_time_s = 0;
    bool aborted = false;
    std::string error;
};

// Runs this node's share of the plan: T workers, each with its own push
// stream and a one-slot staging buffer so reading+encoding batch k+1 overlaps
// the (possibly blocking) push of batch k. Workers rendezvous at epoch
// boundaries and push EPOCH_END per epoch.
SendSummary run_sender(const planner::EpochPlan& plan, const SenderConfig& config);

}  // namespace emlio::sender
