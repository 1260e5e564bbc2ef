#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "emlio/events.hpp"
#include "emlio/recordfmt.hpp"
#include "emlio/transport.hpp"

namespace emlio::receiver {

struct ReceiverConfig {
    std::string listen_ip = "127.0.0.1";
    uint16_t listen_port = 0;  // 0 picks an ephemeral port
    uint32_t prefetch_depth = 2;
    uint32_t expected_senders = 1;  // EPOCH_END frames that finish an epoch
    uint32_t epochs = 1;
    double compute_ms = 0;  // simulated per-batch training step
    std::string node_id = "receiver";
    transport::ChannelConfig channel;
    events::EventLogger* events = nullptr;
    // Expected batch count per epoch for this node, from the plan. Empty
    // means unknown; warm-up then fills to Q or the first EPOCH_END.
    std::vector<uint64_t> expected_batches;
};

struct DecodedBatch {
    uint32_t epoch = 0;
    uint32_t shard_id = 0;
    uint32_t batch_index = 0;
    std::vector<recordfmt::Sample> samples;
    uint64_t recv_time_ns = 0;
    uint64_t payload_bytes = 0;
};

// Ingest plus the bounded decoded-batch queue. One ingest context reserves a
// queue slot BEFORE it takes a frame from the transport (so the transport
// credit is only emitted when a slot is free), decodes, and parks the batch
// until next() hands it out. Slots are released when the consumer takes a
// batch, keeping decoded-but-unconsumed batches of the consumption epoch
// bounded by Q. Batches of a not-yet-current epoch (possible when sender
// instances skew across an epoch boundary) sit in a holdback area and start
// counting against Q when their epoch begins.
class BatchProvider {
  public:
    explicit BatchProvider(const ReceiverConfig& config);
    ~BatchProvider();
    BatchProvider(const BatchProvider&) = delete;
    BatchProvider& operator=(const BatchProvider&) = delete;

    uint16_t port() const;

    // Marks the epoch the consumer is about to drain.
    void begin_epoch(uint32_t epoch);
    // Blocks until min(Q, expected batches) of this epoch are buffered, all
    // its EPOCH_ENDs arrived, or ingest ended.
    void wait_warmup(uint32_t epoch);
    // Next decoded batch of this epoch in arrival order; nullopt once the
    // epoch is complete or cannot complete (streams gone before EPOCH_END).
    std::optional<DecodedBatch> next(uint32_t epoch);
    bool epoch_complete(uint32_t epoch) const;

    size_t decoded_available() const;  // decoded, unconsumed, all epochs
    void stop();

  private:
    void ingest_main();

    ReceiverConfig config_;
    std::unique_ptr<transport::PullEndpoint> endpoint_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<uint32_t, std::deque<DecodedBatch>> ready_;
    // Decoded batches per epoch that are NOT yet counted in slots_in_use_.
    std::map<uint32_t, size_t> holdback_;
    std::map<uint32_t, uint32_t> epoch_ends_;
    uint32_t current_epoch_ = 0;
    size_t slots_in_use_ = 0;
    bool ingest_done_ = false;
    bool stopped_ = false;
    std::once_flag stop_once_;

    std::thread ingest_;
};

struct EpochSummary {
    uint32_t epoch = 0;
    uint64_t batches = 0;
    uint64_t bytes = 0;
    double wall_time_s = 0;
    bool complete = false;
    std::vector<std::pair<uint32_t, uint32_t>> consumed;  // (shard, batch_index)
};

struct RunSummary {
    std::vector<EpochSummary> epochs;
    bool all_complete() const;
};

// Binds on construction (port() is live before run) and drives the consume
// loop: warm-up, dequeue, on_batch callback, compute_ms sleep, batch_recv
// event, epoch bookkeeping.
class Receiver {
  public:
    explicit Receiver(const ReceiverConfig& config);
    uint16_t port() const { return provider_.port(); }
    RunSummary run(const std::function<void(const DecodedBatch&)>& on_batch);

  private:
    ReceiverConfig config_;
    BatchProvider provider_;
};

RunSummary run_receiver(const ReceiverConfig& config,
                        const std::function<void(const DecodedBatch&)>& on_batch);

}  // namespace emlio::receiver
