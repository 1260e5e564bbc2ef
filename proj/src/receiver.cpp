#include "emlio/receiver.hpp"

#include <algorithm>

#include "emlio/common.hpp"
#include "emlio/payload.hpp"

namespace emlio::receiver {

BatchProvider::BatchProvider(const ReceiverConfig& config) : config_(config) {
    if (config_.prefetch_depth < 1 || config_.expected_senders < 1) {
        throw std::invalid_argument("prefetch depth and expected senders must be >= 1");
    }
    endpoint_ = std::make_unique<transport::PullEndpoint>(
        config_.listen_ip, config_.listen_port, config_.channel, config_.node_id);
    ingest_ = std::thread(&BatchProvider::ingest_main, this);
}

BatchProvider::~BatchProvider() {
    stop();
}

uint16_t BatchProvider::port() const {
    return endpoint_->port();
}

void BatchProvider::ingest_main() {
    for (;;) {
        {
            std::unique_lock lk(mu_);
            cv_.wait(lk, [&] {
                return slots_in_use_ < config_.prefetch_depth || stopped_;
            });
            if (stopped_) {
                break;
            }
            ++slots_in_use_;
        }
        std::optional<transport::PullEndpoint::Received> r = endpoint_->recv();
        if (!r) {
            std::lock_guard lk(mu_);
            --slots_in_use_;
            ingest_done_ = true;
            cv_.notify_all();
            break;
        }
        if (r->frame.type == transport::FrameType::Batch) {
            DecodedBatch b;
            try {
                DecodedPayload p = decode_batch(r->frame.payload);
                b.epoch = p.header.epoch;
                b.shard_id = p.header.shard_id;
                b.batch_index = p.header.batch_index;
                b.samples = std::move(p.records);
            } catch (const std::exception&) {
                // Undecodable payload: drop it, give the slot back. The CRC
                // layers make this unreachable short of a sender bug.
                std::lock_guard lk(mu_);
                --slots_in_use_;
                cv_.notify_all();
                continue;
            }
            b.payload_bytes = r->frame.payload.size();
            b.recv_time_ns = wall_now_ns();
            std::lock_guard lk(mu_);
            uint32_t epoch = b.epoch;
            ready_[epoch].push_back(std::move(b));
            if (epoch != current_epoch_) {
                // Holdback: future (or stale) epochs do not consume slots
                // until the consumer reaches them.
                --slots_in_use_;
                ++holdback_[epoch];
            }
            cv_.notify_all();
        } else if (r->frame.type == transport::FrameType::EpochEnd) {
            uint32_t epoch = r->frame.payload.size() >= 4
                                 ? get_u32le(r->frame.payload.data())
                                 : 0;
            std::lock_guard lk(mu_);
            --slots_in_use_;
            ++epoch_ends_[epoch];
            cv_.notify_all();
        } else {
            std::lock_guard lk(mu_);
            --slots_in_use_;
            cv_.notify_all();
        }
    }
}

void BatchProvider::begin_epoch(uint32_t epoch) {
    std::lock_guard lk(mu_);
    current_epoch_ = epoch;
    // Batches that arrived in holdback now count against the prefetch bound.
    // Batches that arrived while this epoch was already current were counted
    // at arrival and must not be counted twice.
    auto it = holdback_.find(epoch);
    if (it != holdback_.end()) {
        slots_in_use_ += it->second;
        holdback_.erase(it);
    }
    cv_.notify_all();
}

void BatchProvider::wait_warmup(uint32_t epoch) {
    uint64_t target = config_.prefetch_depth;
    if (epoch < config_.expected_batches.size()) {
        target = std::min<uint64_t>(target, config_.expected_batches[epoch]);
    }
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] {
        auto it = ready_.find(epoch);
        size_t have = it == ready_.end() ? 0 : it->second.size();
        return have >= target ||
               epoch_ends_[epoch] >= config_.expected_senders || ingest_done_ ||
               stopped_;
    });
}

std::optional<DecodedBatch> BatchProvider::next(uint32_t epoch) {
    std::unique_lock lk(mu_);
    for (;;) {
        auto it = ready_.find(epoch);
        if (it != ready_.end() && !it->second.empty()) {
            DecodedBatch b = std::move(it->second.front());
            it->second.pop_front();
            if (slots_in_use_ > 0) {
                --slots_in_use_;
            }
            cv_.notify_all();
            return b;
        }
        if (epoch_ends_[epoch] >= config_.expected_senders || ingest_done_ ||
            stopped_) {
            return std::nullopt;
        }
        cv_.wait(lk);
    }
}

bool BatchProvider::epoch_complete(uint32_t epoch) const {
    std::lock_guard lk(mu_);
    auto ends = epoch_ends_.find(epoch);
    auto it = ready_.find(epoch);
    bool drained = it == ready_.end() || it->second.empty();
    return ends != epoch_ends_.end() &&
           ends->second >= config_.expected_senders && drained;
}

size_t BatchProvider::decoded_available() const {
    std::lock_guard lk(mu_);
    size_t n = 0;
    for (const auto& kv : ready_) {
        n += kv.second.size();
    }
    return n;
}

void BatchProvider::stop() {
    std::call_once(stop_once_, [&] {
        {
            std::lock_guard lk(mu_);
            stopped_ = true;
            cv_.notify_all();
        }
        endpoint_->close();  // unblocks a recv in flight
        if (ingest_.joinable()) {
            ingest_.join();
        }
    });
}

bool RunSummary::all_complete() const {
    return std::all_of(epochs.begin(), epochs.end(),
                       [](const EpochSummary& e) { return e.complete; });
}

Receiver::Receiver(const ReceiverConfig& config)
    : config_(config), provider_(config) {}

RunSummary Receiver::run(const std::function<void(const DecodedBatch&)>& on_batch) {
    RunSummary summary;
    auto compute = std::chrono::duration<double, std::milli>(config_.compute_ms);
    for (uint32_t e = 0; e < config_.epochs; ++e) {
        provider_.begin_epoch(e);
        provider_.wait_warmup(e);
        EpochSummary es;
        es.epoch = e;
        uint64_t t_start = 0;
        bool first = true;
        while (std::optional<DecodedBatch> b = provider_.next(e)) {
            if (first) {
                first = false;
                t_start = steady_now_ns();
                if (config_.events != nullptr) {
                    config_.events->log(events::Kind::EpochStart, e, config_.node_id);
                }
            }
            if (on_batch) {
                on_batch(*b);
            }
            if (config_.compute_ms > 0) {
                precise_sleep_for(
                    std::chrono::duration_cast<std::chrono::nanoseconds>(compute));
            }
            if (config_.events != nullptr) {
                config_.events->log(events::Kind::BatchRecv, e, config_.node_id,
                                    b->shard_id, b->batch_index);
            }
            ++es.batches;
            es.bytes += b->payload_bytes;
            es.consumed.emplace_back(b->shard_id, b->batch_index);
        }
        if (first) {
            t_start = steady_now_ns();
            if (config_.events != nullptr) {
                config_.events->log(events::Kind::EpochStart, e, config_.node_id);
            }
        }
        es.wall_time_s = static_cast<double>(steady_now_ns() - t_start) / 1e9;
        if (config_.events != nullptr) {
            config_.events->log(events::Kind::EpochEnd, e, config_.node_id);
        }
        es.complete = provider_.epoch_complete(e);
        bool complete = es.complete;
        summary.epochs.push_back(std::move(es));
        if (!complete) {
            break;
        }
    }
    provider_.stop();
    return summary;
}

RunSummary run_receiver(const ReceiverConfig& config,
                        const std::function<void(const DecodedBatch&)>& on_batch) {
    Receiver r(config);
    return r.run(on_batch);
}

}  // namespace emlio::receiver
