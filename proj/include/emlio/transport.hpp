#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "emlio/planner.hpp"

namespace emlio::transport {

inline constexpr uint16_t kProtocolVersion = 1;
inline constexpr uint8_t kCreditToken = 0xC7;

// Wire frame, all integers LE:
//   magic "EML1" | frame_type u8 | payload_len u32 | payload | crc32c(payload) u32
enum class FrameType : uint8_t {
    Batch = 0,
    EpochEnd = 1,
    Hello = 2,
    Request = 3,
};

struct Frame {
    FrameType type = FrameType::Batch;
    std::vector<uint8_t> payload;
    bool operator==(const Frame&) const = default;
};

std::vector<uint8_t> frame_to_bytes(const Frame& frame);

struct ChannelConfig {
    // Max unconsumed BATCH payloads in flight per stream; control frames
    // (HELLO, EPOCH_END, REQUEST) bypass the window.
    uint32_t hwm = 16;
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds injected_one_way_delay{0};
};

ChannelConfig with_injected_delay(ChannelConfig config,
                                  std::chrono::milliseconds one_way);

struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Sending half of a channel. One owner context; push() blocks while the
// credit window is full. The injected one-way delay is realized here: outbound
// frames are held in a due-time queue before the socket write, and credit
// tokens take effect one delay after they arrive, so effective RTT is
// 2 x one_way_delay without any receiver-side support.
class PushStream {
  public:
    PushStream(const planner::NodeSpec& remote, const ChannelConfig& config,
               const std::string& local_node_id);
    ~PushStream();
    PushStream(const PushStream&) = delete;
    PushStream& operator=(const PushStream&) = delete;

    void push(Frame frame);
    // Returns false if the window stayed full for the whole timeout.
    bool try_push(Frame frame, std::chrono::milliseconds timeout);
    // Flushes queued frames (honoring their due times) and shuts down the
    // write side. Idempotent.
    void close();

    uint32_t stream_id() const { return stream_id_; }
    const std::string& peer_node_id() const { return peer_node_id_; }
    uint32_t in_flight() const;
    size_t buffered_bytes() const;

  private:
    bool push_impl(Frame frame, const std::chrono::milliseconds* timeout);
    void writer_main();
    void credit_main();
    void fail(const std::string& why);

    struct Outbound {
        std::chrono::steady_clock::time_point due;
        std::vector<uint8_t> bytes;
    };

    ChannelConfig config_;
    int fd_ = -1;
    uint32_t stream_id_ = 0;
    std::string peer_node_id_;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Outbound> outbound_;
    size_t outbound_bytes_ = 0;
    uint32_t in_flight_ = 0;
    std::deque<std::chrono::steady_clock::time_point> pending_credits_;
    bool closing_ = false;
    bool write_done_ = false;
    bool failed_ = false;
    std::string error_;
    std::chrono::steady_clock::time_point credit_deadline_{};

    std::thread writer_;
    std::thread credit_reader_;
};

std::unique_ptr<PushStream> open_push(const planner::NodeSpec& remote,
                                      const ChannelConfig& config,
                                      const std::string& local_node_id);

// Receiving half: accepts any number of push streams, interleaves their
// frames in arrival order, and emits one credit token per BATCH frame handed
// to the caller.
class PullEndpoint {
  public:
    PullEndpoint(const std::string& listen_ip, uint16_t port,
                 const ChannelConfig& config, const std::string& node_id);
    ~PullEndpoint();
    PullEndpoint(const PullEndpoint&) = delete;
    PullEndpoint& operator=(const PullEndpoint&) = delete;

    uint16_t port() const { return port_; }

    struct Received {
        uint64_t stream = 0;  // endpoint-local stream handle
        Frame frame;
    };

    // Blocks until a frame arrives. nullopt means every accepted stream has
    // closed and been drained (or the endpoint was closed).
    std::optional<Received> recv();
    // nullopt on timeout as well; check drained() to tell the cases apart.
    std::optional<Received> recv_for(std::chrono::milliseconds timeout);
    bool drained() const;

    struct StreamInfo {
        uint32_t wire_stream_id = 0;
        std::string peer_node_id;
        bool closed = false;
        bool errored = false;
        std::string error;
    };
    StreamInfo info(uint64_t stream) const;
    size_t streams_accepted() const;
    size_t buffered_bytes() const;

    void close();

  private:
    struct StreamState {
        int fd = -1;
        uint32_t wire_stream_id = 0;
        std::string peer_node_id;
        size_t queued = 0;  // frames in the arrival queue
        bool eof = false;
        bool errored = false;
        bool fd_open = false;
        std::string error;
        std::thread reader;
    };

    struct Arrival {
        uint64_t stream;
        Frame frame;
    };

    void accept_main();
    void reader_main(uint64_t handle);
    void finish_stream(std::unique_lock<std::mutex>& lk, uint64_t handle);
    std::optional<Received> recv_impl(const std::chrono::milliseconds* timeout);

    ChannelConfig config_;
    std::string node_id_;
    int listen_fd_ = -1;
    uint16_t port_ = 0;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<uint64_t, StreamState> streams_;
    std::deque<Arrival> arrivals_;
    size_t arrival_bytes_ = 0;
    uint64_t next_handle_ = 1;
    size_t accepted_ = 0;
    size_t open_streams_ = 0;
    bool closed_ = false;

    std::thread acceptor_;
};

std::unique_ptr<PullEndpoint> open_pull(const std::string& listen_ip,
                                        uint16_t port,
                                        const ChannelConfig& config,
                                        const std::string& node_id);

}  // namespace emlio::transport
