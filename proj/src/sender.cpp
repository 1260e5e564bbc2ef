#include "emlio/sender.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <map>
#include <mutex>
#include <thread>

#include "emlio/common.hpp"
#include "emlio/payload.hpp"
#include "emlio/queue.hpp"
#include "emlio/recordfmt.hpp"

namespace emlio::sender {

namespace {

// Rendezvous that can be torn down when a worker aborts; a plain barrier
// would deadlock the survivors.
class EpochBarrier {
  public:
    explicit EpochBarrier(uint32_t parties) : parties_(parties) {}

    bool arrive_and_wait() {
        std::unique_lock lk(mu_);
        if (aborted_) {
            return false;
        }
        if (++waiting_ == parties_) {
            waiting_ = 0;
            ++generation_;
            cv_.notify_all();
            return !aborted_;
        }
        uint64_t gen = generation_;
        cv_.wait(lk, [&] { return generation_ != gen || aborted_; });
        return !aborted_;
    }

    void abort() {
        std::lock_guard lk(mu_);
        aborted_ = true;
        cv_.notify_all();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_;
    uint32_t parties_;
    uint32_t waiting_ = 0;
    uint64_t generation_ = 0;
    bool aborted_ = false;
};

struct Staged {
    bool epoch_marker = false;
    uint32_t epoch = 0;
    uint32_t shard_id = 0;
    uint32_t batch_index = 0;
    std::vector<uint8_t> bytes;
};

struct Shared {
    std::mutex mu;
    std::vector<SendSummary::EpochCounts> epochs;
    std::atomic<bool> abort{false};
    std::string error;

    void fail(const std::string& why) {
        std::lock_guard lk(mu);
        if (!abort.exchange(true)) {
            error = why;
        }
    }
};

}  // namespace

SendSummary run_sender(const planner::EpochPlan& plan, const SenderConfig& config) {
    const planner::NodeSpec& self = plan.node(config.node_id);
    if (config.workers != 0 && config.workers != plan.threads_per_node) {
        throw std::invalid_argument(
            "run_sender: plan was built for " +
            std::to_string(plan.threads_per_node) + " workers, got " +
            std::to_string(config.workers));
    }
    std::vector<uint32_t> workers;
    if (config.worker_subset) {
        workers = *config.worker_subset;
        for (uint32_t w : workers) {
            if (w >= plan.threads_per_node) {
                throw std::invalid_argument("run_sender: worker index out of range");
            }
        }
    } else {
        for (uint32_t w = 0; w < plan.threads_per_node; ++w) {
            workers.push_back(w);
        }
    }
    if (workers.empty()) {
        throw std::invalid_argument("run_sender: empty worker set");
    }

    std::vector<recordfmt::ShardIndex> indexes = recordfmt::load_dataset(config.data_dir);
    std::map<uint32_t, const recordfmt::ShardIndex*> by_id;
    for (const recordfmt::ShardIndex& idx : indexes) {
        by_id[idx.shard_id] = &idx;
    }

    Shared shared;
    shared.epochs.resize(plan.epochs);
    for (uint32_t e = 0; e < plan.epochs; ++e) {
        shared.epochs[e].epoch = e;
    }
    EpochBarrier barrier(static_cast<uint32_t>(workers.size()));

    auto reader_stage = [&](uint32_t w, BoundedQueue<Staged>& staging) {
        try {
            for (uint32_t e = 0; e < plan.epochs; ++e) {
                const planner::Assignment& a = plan.assignment(e, config.node_id, w);
                for (const planner::BatchRange& r : a.ranges) {
                    if (shared.abort.load()) {
                        return;
                    }
                    auto it = by_id.find(r.shard_id);
                    if (it == by_id.end()) {
                        throw std::runtime_error("shard " + std::to_string(r.shard_id) +
                                                 " missing from data dir");
                    }
                    const recordfmt::ShardIndex& idx = *it->second;
                    if (r.first_entry + static_cast<uint64_t>(r.count) >
                        idx.entries.size()) {
                        throw std::runtime_error("range exceeds shard " +
                                                 std::to_string(r.shard_id));
                    }
                    std::vector<recordfmt::Sample> samples = recordfmt::read_range(
                        config.data_dir / idx.shard_file,
                        std::span(idx.entries).subspan(r.first_entry, r.count));
                    {
                        std::lock_guard lk(shared.mu);
                        ++shared.epochs[e].ranges_read;
                    }
                    Staged s;
                    s.epoch = e;
                    s.shard_id = r.shard_id;
                    s.batch_index = r.batch_index;
                    s.bytes = encode_batch(samples, e, r.shard_id, r.batch_index);
                    if (!staging.push(std::move(s))) {
                        return;
                    }
                }
                Staged marker;
                marker.epoch_marker = true;
                marker.epoch = e;
                if (!staging.push(std::move(marker))) {
                    return;
                }
            }
        } catch (const std::exception& e) {
            shared.fail(e.what());
            barrier.abort();
            staging.close();
        }
    };

    auto worker_main = [&](uint32_t w) {
        BoundedQueue<Staged> staging(1);
        std::thread reader;
        try {
            transport::PushStream stream(self, config.channel, config.node_id);
            reader = std::thread(reader_stage, w, std::ref(staging));
            for (uint32_t e = 0; e < plan.epochs; ++e) {
                for (;;) {
                    std::optional<Staged> s = staging.pop();
                    if (!s) {
                        throw std::runtime_error(shared.error.empty()
                                                     ? "staging closed"
                                                     : shared.error);
                    }
                    if (s->epoch_marker) {
                        break;
                    }
                    uint64_t payload_bytes = s->bytes.size();
                    uint32_t shard_id = s->shard_id;
                    uint32_t batch_index = s->batch_index;
                    stream.push({transport::FrameType::Batch, std::move(s->bytes)});
                    if (config.events != nullptr) {
                        config.events->log(events::Kind::BatchSend, e, config.node_id,
                                           shard_id, batch_index);
                    }
                    std::lock_guard lk(shared.mu);
                    ++shared.epochs[e].batches;
                    shared.epochs[e].bytes += payload_bytes;
                }
                std::vector<uint8_t> end_payload;
                put_u32le(end_payload, e);
                stream.push({transport::FrameType::EpochEnd, std::move(end_payload)});
                if (!barrier.arrive_and_wait()) {
                    throw std::runtime_error(shared.error.empty() ? "aborted"
                                                                  : shared.error);
                }
            }
            stream.close();
        } catch (const std::exception& e) {
            shared.fail(e.what());
            barrier.abort();
            staging.close();
        }
        if (reader.joinable()) {
            reader.join();
        }
    };

    uint64_t t0 = steady_now_ns();
    std::vector<std::thread> threads;
    threads.reserve(workers.size());
    for (uint32_t w : workers) {
        threads.emplace_back(worker_main, w);
    }
    for (std::thread& t : threads) {
        t.join();
    }

    SendSummary summary;
    summary.epochs = std::move(shared.epochs);
    summary.wall_time_s = static_cast<double>(steady_now_ns() - t0) / 1e9;
    summary.aborted = shared.abort.load();
    summary.error = shared.error;
    return summary;
}

}  // namespace emlio::sender
