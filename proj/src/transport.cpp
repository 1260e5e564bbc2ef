#include "emlio/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>

#include "emlio/common.hpp"
#include "emlio/crc32c.hpp"

namespace emlio::transport {

namespace {

constexpr size_t kFrameHeaderBytes = 9;  // magic 4 + type 1 + payload_len 4
constexpr uint32_t kMaxPayload = 1u << 30;
constexpr char kMagic[4] = {'E', 'M', 'L', '1'};

using Clock = std::chrono::steady_clock;

std::atomic<uint32_t> g_next_stream_id{1};

int set_nodelay(int fd) {
    int one = 1;
    return setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in resolve(const std::string& host, uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) {
        return addr;
    }
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    int rc = getaddrinfo(host.c_str(), nullptr, &hints, &res);
    if (rc != 0 || res == nullptr) {
        throw TransportError("cannot resolve host '" + host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return addr;
}

// Retries refused connections until the timeout elapses so a sender may start
// slightly before its receiver.
int tcp_connect(const std::string& host, uint16_t port,
                std::chrono::milliseconds timeout) {
    sockaddr_in addr = resolve(host, port);
    Clock::time_point deadline = Clock::now() + timeout;
    for (;;) {
        int fd = socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) {
            throw TransportError(std::string("socket: ") + strerror(errno));
        }
        int flags = fcntl(fd, F_GETFL, 0);
        fcntl(fd, F_SETFL, flags | O_NONBLOCK);
        int rc = connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
        bool connected = rc == 0;
        if (!connected && errno == EINPROGRESS) {
            pollfd pfd{fd, POLLOUT, 0};
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - Clock::now());
            int pr = poll(&pfd, 1, std::max<long>(0, left.count()));
            if (pr > 0) {
                int err = 0;
                socklen_t len = sizeof(err);
                getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
                connected = err == 0;
                errno = err;
            }
        }
        if (connected) {
            fcntl(fd, F_SETFL, flags);
            set_nodelay(fd);
            return fd;
        }
        ::close(fd);
        if (Clock::now() + std::chrono::milliseconds(50) >= deadline) {
            throw TransportError("connect to " + host + ":" + std::to_string(port) +
                                 " timed out after " + std::to_string(timeout.count()) +
                                 " ms");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

int tcp_listen(const std::string& host, uint16_t port, uint16_t* bound_port) {
    sockaddr_in addr = resolve(host, port);
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) {
        throw TransportError(std::string("socket: ") + strerror(errno));
    }
    int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        int err = errno;
        ::close(fd);
        throw TransportError("bind " + host + ":" + std::to_string(port) + ": " +
                             strerror(err));
    }
    sockaddr_in actual{};
    socklen_t len = sizeof(actual);
    getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len);
    *bound_port = ntohs(actual.sin_port);
    if (listen(fd, 128) != 0) {
        int err = errno;
        ::close(fd);
        throw TransportError(std::string("listen: ") + strerror(err));
    }
    return fd;
}

// true on success, false on EOF/error.
bool write_full(int fd, const uint8_t* p, size_t n) {
    while (n > 0) {
        ssize_t w = send(fd, p, n, MSG_NOSIGNAL);
        if (w < 0) {
            if (errno == EINTR) {
                continue;
            }
            return false;
        }
        p += w;
        n -= static_cast<size_t>(w);
    }
    return true;
}

enum class ReadResult { Ok, Eof, Error };

// Eof is reported only for a close on a frame boundary; a close mid-buffer
// is an error (truncated frame).
ReadResult read_full(int fd, uint8_t* p, size_t n) {
    size_t want = n;
    while (n > 0) {
        ssize_t r = ::recv(fd, p, n, 0);
        if (r == 0) {
            return n == want ? ReadResult::Eof : ReadResult::Error;
        }
        if (r < 0) {
            if (errno == EINTR) {
                continue;
            }
            return ReadResult::Error;
        }
        p += r;
        n -= static_cast<size_t>(r);
    }
    return ReadResult::Ok;
}

ReadResult read_full_deadline(int fd, uint8_t* p, size_t n,
                              Clock::time_point deadline) {
    while (n > 0) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - Clock::now());
        if (left.count() <= 0) {
            return ReadResult::Error;
        }
        pollfd pfd{fd, POLLIN, 0};
        int pr = poll(&pfd, 1, static_cast<int>(left.count()));
        if (pr == 0) {
            continue;
        }
        if (pr < 0) {
            if (errno == EINTR) {
                continue;
            }
            return ReadResult::Error;
        }
        ssize_t r = ::recv(fd, p, n, 0);
        if (r == 0) {
            return ReadResult::Eof;
        }
        if (r < 0) {
            if (errno == EINTR) {
                continue;
            }
            return ReadResult::Error;
        }
        p += r;
        n -= static_cast<size_t>(r);
    }
    return ReadResult::Ok;
}

std::vector<uint8_t> build_hello(uint32_t stream_id, const std::string& node_id) {
    std::vector<uint8_t> payload;
    put_u16le(payload, kProtocolVersion);
    put_u32le(payload, stream_id);
    put_u16le(payload, static_cast<uint16_t>(node_id.size()));
    payload.insert(payload.end(), node_id.begin(), node_id.end());
    return payload;
}

struct Hello {
    uint16_t version = 0;
    uint32_t stream_id = 0;
    std::string node_id;
};

Hello parse_hello(const std::vector<uint8_t>& payload) {
    if (payload.size() < 8) {
        throw TransportError("malformed HELLO payload");
    }
    Hello h;
    h.version = get_u16le(payload.data());
    h.stream_id = get_u32le(payload.data() + 2);
    uint16_t len = get_u16le(payload.data() + 6);
    if (payload.size() != 8u + len) {
        throw TransportError("malformed HELLO payload length");
    }
    h.node_id.assign(payload.begin() + 8, payload.end());
    return h;
}

// Reads one frame; used for handshakes (reader threads have their own loop).
ReadResult read_frame_deadline(int fd, Frame* out, Clock::time_point deadline,
                               std::string* error) {
    uint8_t header[kFrameHeaderBytes];
    ReadResult r = read_full_deadline(fd, header, sizeof(header), deadline);
    if (r != ReadResult::Ok) {
        return r;
    }
    if (memcmp(header, kMagic, 4) != 0) {
        *error = "bad frame magic";
        return ReadResult::Error;
    }
    uint8_t type = header[4];
    uint32_t len = get_u32le(header + 5);
    if (type > static_cast<uint8_t>(FrameType::Request) || len > kMaxPayload) {
        *error = "bad frame header";
        return ReadResult::Error;
    }
    std::vector<uint8_t> payload(len);
    r = read_full_deadline(fd, payload.data(), len, deadline);
    if (r != ReadResult::Ok) {
        return r;
    }
    uint8_t crc_buf[4];
    r = read_full_deadline(fd, crc_buf, 4, deadline);
    if (r != ReadResult::Ok) {
        return r;
    }
    if (get_u32le(crc_buf) != crc32c(payload.data(), payload.size())) {
        *error = "frame CRC mismatch";
        return ReadResult::Error;
    }
    out->type = static_cast<FrameType>(type);
    out->payload = std::move(payload);
    return ReadResult::Ok;
}

}  // namespace

std::vector<uint8_t> frame_to_bytes(const Frame& frame) {
    std::vector<uint8_t> out;
    out.reserve(kFrameHeaderBytes + frame.payload.size() + 4);
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(static_cast<uint8_t>(frame.type));
    put_u32le(out, static_cast<uint32_t>(frame.payload.size()));
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    put_u32le(out, crc32c(frame.payload.data(), frame.payload.size()));
    return out;
}

ChannelConfig with_injected_delay(ChannelConfig config,
                                  std::chrono::milliseconds one_way) {
    if (one_way.count() < 0) {
        throw std::invalid_argument("injected delay must be >= 0");
    }
    config.injected_one_way_delay = one_way;
    return config;
}

PushStream::PushStream(const planner::NodeSpec& remote, const ChannelConfig& config,
                       const std::string& local_node_id)
    : config_(config) {
    if (config_.hwm < 1) {
        throw std::invalid_argument("hwm must be >= 1");
    }
    fd_ = tcp_connect(remote.ip, remote.port, config_.connect_timeout);
    stream_id_ = g_next_stream_id.fetch_add(1);

    {
        std::lock_guard lk(mu_);
        Frame hello{FrameType::Hello, build_hello(stream_id_, local_node_id)};
        std::vector<uint8_t> bytes = frame_to_bytes(hello);
        outbound_bytes_ += bytes.size();
        outbound_.push_back({Clock::now() + config_.injected_one_way_delay,
                             std::move(bytes)});
    }
    writer_ = std::thread(&PushStream::writer_main, this);

    try {
        Frame reply;
        std::string err;
        Clock::time_point deadline = Clock::now() + config_.connect_timeout +
                                     2 * config_.injected_one_way_delay;
        ReadResult r = read_frame_deadline(fd_, &reply, deadline, &err);
        if (r == ReadResult::Eof) {
            throw TransportError("connection closed during handshake");
        }
        if (r == ReadResult::Error) {
            throw TransportError(err.empty() ? "handshake read failed" : err);
        }
        if (reply.type != FrameType::Hello) {
            throw TransportError("expected HELLO reply");
        }
        Hello h = parse_hello(reply.payload);
        if (h.version != kProtocolVersion) {
            throw TransportError("protocol version mismatch: peer " +
                                 std::to_string(h.version) + ", ours " +
                                 std::to_string(kProtocolVersion));
        }
        if (h.stream_id != stream_id_) {
            throw TransportError("HELLO reply for wrong stream");
        }
        peer_node_id_ = h.node_id;
    } catch (...) {
        {
            std::lock_guard lk(mu_);
            failed_ = true;
            error_ = "handshake failed";
            cv_.notify_all();
        }
        writer_.join();
        ::close(fd_);
        fd_ = -1;
        throw;
    }

    credit_reader_ = std::thread(&PushStream::credit_main, this);
}

PushStream::~PushStream() {
    try {
        close();
    } catch (...) {
    }
}

void PushStream::fail(const std::string& why) {
    failed_ = true;
    if (error_.empty()) {
        error_ = why;
    }
    cv_.notify_all();
}

void PushStream::push(Frame frame) {
    push_impl(std::move(frame), nullptr);
}

bool PushStream::try_push(Frame frame, std::chrono::milliseconds timeout) {
    return push_impl(std::move(frame), &timeout);
}

bool PushStream::push_impl(Frame frame, const std::chrono::milliseconds* timeout) {
    std::vector<uint8_t> bytes = frame_to_bytes(frame);
    std::unique_lock lk(mu_);
    if (frame.type == FrameType::Batch) {
        auto ready = [&] {
            return in_flight_ < config_.hwm || failed_ || closing_;
        };
        if (timeout != nullptr) {
            if (!cv_.wait_for(lk, *timeout, ready)) {
                return false;
            }
        } else {
            cv_.wait(lk, ready);
        }
    }
    if (failed_) {
        throw TransportError(error_);
    }
    if (closing_) {
        throw TransportError("push on closed stream");
    }
    if (frame.type == FrameType::Batch) {
        ++in_flight_;
    }
    outbound_bytes_ += bytes.size();
    outbound_.push_back({Clock::now() + config_.injected_one_way_delay,
                         std::move(bytes)});
    cv_.notify_all();
    return true;
}

void PushStream::writer_main() {
    std::unique_lock lk(mu_);
    for (;;) {
        cv_.wait(lk, [&] { return !outbound_.empty() || closing_ || failed_; });
        if (failed_) {
            break;
        }
        if (outbound_.empty()) {
            break;  // closing with nothing left to flush
        }
        // Hold the frame back until its due time; failure interrupts the wait.
        Clock::time_point due = outbound_.front().due;
        if (cv_.wait_until(lk, due, [&] { return failed_; })) {
            break;
        }
        std::vector<uint8_t> bytes = std::move(outbound_.front().bytes);
        outbound_.pop_front();
        lk.unlock();
        bool ok = write_full(fd_, bytes.data(), bytes.size());
        lk.lock();
        outbound_bytes_ -= bytes.size();
        if (!ok) {
            fail("peer disconnected during write");
            break;
        }
        cv_.notify_all();
    }
    write_done_ = true;
    if (closing_ && !failed_) {
        shutdown(fd_, SHUT_WR);
    }
    cv_.notify_all();
}

void PushStream::credit_main() {
    for (;;) {
        int timeout_ms = 100;
        {
            std::unique_lock lk(mu_);
            if (failed_) {
                break;
            }
            Clock::time_point now = Clock::now();
            bool applied = false;
            while (!pending_credits_.empty() && pending_credits_.front() <= now) {
                pending_credits_.pop_front();
                if (in_flight_ > 0) {
                    --in_flight_;
                }
                applied = true;
            }
            if (applied) {
                cv_.notify_all();
            }
            if (credit_deadline_ != Clock::time_point{} && now >= credit_deadline_) {
                break;
            }
            if (!pending_credits_.empty()) {
                auto next = std::chrono::duration_cast<std::chrono::milliseconds>(
                    pending_credits_.front() - now);
                timeout_ms = static_cast<int>(std::min<long>(100, std::max<long>(1, next.count())));
            }
        }
        pollfd pfd{fd_, POLLIN, 0};
        int pr = poll(&pfd, 1, timeout_ms);
        if (pr < 0) {
            if (errno == EINTR) {
                continue;
            }
            std::lock_guard lk(mu_);
            fail("credit channel poll failed");
            break;
        }
        if (pr == 0) {
            continue;
        }
        uint8_t buf[256];
        ssize_t n = ::recv(fd_, buf, sizeof(buf), 0);
        std::unique_lock lk(mu_);
        if (n == 0) {
            // Graceful teardown if nothing is outstanding; a peer vanishing
            // with unconsumed payloads must unblock pushers with an error.
            if (in_flight_ > 0 && !closing_) {
                fail("peer closed with unconsumed payloads");
            }
            break;
        }
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            if (!closing_) {
                fail(std::string("credit channel read: ") + strerror(errno));
            }
            break;
        }
        Clock::time_point due = Clock::now() + config_.injected_one_way_delay;
        for (ssize_t i = 0; i < n; ++i) {
            if (buf[i] != kCreditToken) {
                fail("unexpected byte on credit channel");
                break;
            }
            pending_credits_.push_back(due);
        }
        if (failed_) {
            break;
        }
        if (config_.injected_one_way_delay.count() == 0) {
            while (!pending_credits_.empty()) {
                pending_credits_.pop_front();
                if (in_flight_ > 0) {
                    --in_flight_;
                }
            }
            cv_.notify_all();
        }
    }
    std::lock_guard lk(mu_);
    cv_.notify_all();
}

void PushStream::close() {
    {
        std::unique_lock lk(mu_);
        if (!closing_) {
            closing_ = true;
            cv_.notify_all();
        }
        cv_.wait(lk, [&] { return write_done_ || failed_; });
        if (credit_deadline_ == Clock::time_point{}) {
            credit_deadline_ = Clock::now() + 2 * config_.injected_one_way_delay +
                               std::chrono::seconds(5);
        }
    }
    if (writer_.joinable()) {
        writer_.join();
    }
    if (credit_reader_.joinable()) {
        credit_reader_.join();
    }
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

uint32_t PushStream::in_flight() const {
    std::lock_guard lk(mu_);
    return in_flight_;
}

size_t PushStream::buffered_bytes() const {
    std::lock_guard lk(mu_);
    return outbound_bytes_;
}

std::unique_ptr<PushStream> open_push(const planner::NodeSpec& remote,
                                      const ChannelConfig& config,
                                      const std::string& local_node_id) {
    return std::make_unique<PushStream>(remote, config, local_node_id);
}

PullEndpoint::PullEndpoint(const std::string& listen_ip, uint16_t port,
                           const ChannelConfig& config, const std::string& node_id)
    : config_(config), node_id_(node_id) {
    listen_fd_ = tcp_listen(listen_ip, port, &port_);
    acceptor_ = std::thread(&PullEndpoint::accept_main, this);
}

PullEndpoint::~PullEndpoint() {
    try {
        close();
    } catch (...) {
    }
}

void PullEndpoint::accept_main() {
    std::vector<std::thread> conn_threads;
    for (;;) {
        {
            std::lock_guard lk(mu_);
            if (closed_) {
                break;
            }
        }
        pollfd pfd{listen_fd_, POLLIN, 0};
        int pr = poll(&pfd, 1, 100);
        if (pr <= 0) {
            continue;
        }
        int fd = accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            continue;
        }
        set_nodelay(fd);

        // Handshake inline: read the client HELLO, reply with ours. The
        // frame may sit in the client's delay line, hence the deadline.
        Frame hello;
        std::string err;
        Clock::time_point deadline = Clock::now() + config_.connect_timeout;
        ReadResult r = read_frame_deadline(fd, &hello, deadline, &err);
        Hello h;
        bool ok = false;
        if (r == ReadResult::Ok && hello.type == FrameType::Hello) {
            try {
                h = parse_hello(hello.payload);
                ok = true;
            } catch (const TransportError&) {
            }
        }
        if (ok) {
            Frame reply{FrameType::Hello, build_hello(h.stream_id, node_id_)};
            std::vector<uint8_t> bytes = frame_to_bytes(reply);
            if (!write_full(fd, bytes.data(), bytes.size())) {
                ok = false;
            }
        }
        if (!ok || h.version != kProtocolVersion) {
            // Mismatched peers get our HELLO (already sent if parsable) and
            // then a close; they surface the version error on their side.
            ::close(fd);
            continue;
        }

        uint64_t handle = 0;
        {
            std::lock_guard lk(mu_);
            if (closed_) {
                ::close(fd);
                break;
            }
            handle = next_handle_++;
            StreamState& st = streams_[handle];
            st.fd = fd;
            st.fd_open = true;
            st.wire_stream_id = h.stream_id;
            st.peer_node_id = h.node_id;
            ++accepted_;
            ++open_streams_;
        }
        conn_threads.emplace_back(&PullEndpoint::reader_main, this, handle);
    }
    for (std::thread& t : conn_threads) {
        t.join();
    }
}

void PullEndpoint::reader_main(uint64_t handle) {
    int fd = -1;
    {
        std::lock_guard lk(mu_);
        fd = streams_.at(handle).fd;
    }
    for (;;) {
        uint8_t header[kFrameHeaderBytes];
        ReadResult r = read_full(fd, header, sizeof(header));
        std::string err;
        Frame frame;
        if (r == ReadResult::Ok) {
            if (memcmp(header, kMagic, 4) != 0) {
                r = ReadResult::Error;
                err = "bad frame magic";
            } else {
                uint8_t type = header[4];
                uint32_t len = get_u32le(header + 5);
                if (type > static_cast<uint8_t>(FrameType::Request) ||
                    len > kMaxPayload) {
                    r = ReadResult::Error;
                    err = "bad frame header";
                } else {
                    std::vector<uint8_t> payload(len);
                    r = read_full(fd, payload.data(), len);
                    uint8_t crc_buf[4];
                    if (r == ReadResult::Ok) {
                        r = read_full(fd, crc_buf, 4);
                    }
                    if (r == ReadResult::Ok) {
                        if (get_u32le(crc_buf) != crc32c(payload.data(), payload.size())) {
                            r = ReadResult::Error;
                            err = "frame CRC mismatch";
                        } else {
                            frame.type = static_cast<FrameType>(type);
                            frame.payload = std::move(payload);
                        }
                    } else if (r == ReadResult::Eof) {
                        r = ReadResult::Error;
                        err = "truncated frame";
                    }
                }
            }
        }

        std::unique_lock lk(mu_);
        StreamState& st = streams_.at(handle);
        if (r == ReadResult::Ok) {
            arrival_bytes_ += frame.payload.size();
            ++st.queued;
            arrivals_.push_back({handle, std::move(frame)});
            cv_.notify_all();
            continue;
        }
        if (r == ReadResult::Error) {
            st.errored = true;
            st.error = err.empty() ? "connection error" : err;
        }
        st.eof = true;
        --open_streams_;
        if (st.queued == 0 && st.fd_open) {
            ::close(st.fd);
            st.fd_open = false;
        }
        cv_.notify_all();
        break;
    }
}

std::optional<PullEndpoint::Received> PullEndpoint::recv() {
    return recv_impl(nullptr);
}

std::optional<PullEndpoint::Received> PullEndpoint::recv_for(
    std::chrono::milliseconds timeout) {
    return recv_impl(&timeout);
}

std::optional<PullEndpoint::Received> PullEndpoint::recv_impl(
    const std::chrono::milliseconds* timeout) {
    std::unique_lock lk(mu_);
    auto ready = [&] {
        return !arrivals_.empty() || closed_ ||
               (accepted_ > 0 && open_streams_ == 0);
    };
    if (timeout != nullptr) {
        if (!cv_.wait_for(lk, *timeout, ready)) {
            return std::nullopt;
        }
    } else {
        cv_.wait(lk, ready);
    }
    if (arrivals_.empty()) {
        return std::nullopt;
    }
    Received out;
    out.stream = arrivals_.front().stream;
    out.frame = std::move(arrivals_.front().frame);
    arrivals_.pop_front();
    arrival_bytes_ -= out.frame.payload.size();

    StreamState& st = streams_.at(out.stream);
    --st.queued;
    if (out.frame.type == FrameType::Batch && st.fd_open) {
        uint8_t token = kCreditToken;
        // 1-byte write on the reverse path; a dead peer's error is ignored,
        // its window no longer matters.
        (void)!write_full(st.fd, &token, 1);
    }
    if (st.eof && st.queued == 0 && st.fd_open) {
        ::close(st.fd);
        st.fd_open = false;
    }
    return out;
}

bool PullEndpoint::drained() const {
    std::lock_guard lk(mu_);
    return closed_ || (accepted_ > 0 && open_streams_ == 0 && arrivals_.empty());
}

PullEndpoint::StreamInfo PullEndpoint::info(uint64_t stream) const {
    std::lock_guard lk(mu_);
    auto it = streams_.find(stream);
    if (it == streams_.end()) {
        throw std::out_of_range("unknown stream handle");
    }
    StreamInfo out;
    out.wire_stream_id = it->second.wire_stream_id;
    out.peer_node_id = it->second.peer_node_id;
    out.closed = it->second.eof;
    out.errored = it->second.errored;
    out.error = it->second.error;
    return out;
}

size_t PullEndpoint::streams_accepted() const {
    std::lock_guard lk(mu_);
    return accepted_;
}

size_t PullEndpoint::buffered_bytes() const {
    std::lock_guard lk(mu_);
    return arrival_bytes_;
}

void PullEndpoint::close() {
    bool first = false;
    {
        std::lock_guard lk(mu_);
        if (!closed_) {
            closed_ = true;
            first = true;
            for (auto& [handle, st] : streams_) {
                if (st.fd_open) {
                    shutdown(st.fd, SHUT_RDWR);
                }
            }
        }
        cv_.notify_all();
    }
    if (first) {
        shutdown(listen_fd_, SHUT_RDWR);
    }
    if (acceptor_.joinable()) {
        acceptor_.join();
    }
    std::lock_guard lk(mu_);
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    for (auto& [handle, st] : streams_) {
        if (st.fd_open) {
            ::close(st.fd);
            st.fd_open = false;
        }
    }
}

std::unique_ptr<PullEndpoint> open_pull(const std::string& listen_ip, uint16_t port,
                                        const ChannelConfig& config,
                                        const std::string& node_id) {
    return std::make_unique<PullEndpoint>(listen_ip, port, config, node_id);
}

}  // namespace emlio::transport
