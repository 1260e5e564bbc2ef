#include "emlio/events.hpp"

#include <sstream>
#include <stdexcept>

#include "emlio/common.hpp"

namespace emlio::events {

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::BatchSend:
            return "batch_send";
        case Kind::BatchRecv:
            return "batch_recv";
        case Kind::EpochStart:
            return "epoch_start";
        case Kind::EpochEnd:
            return "epoch_end";
    }
    return "unknown";
}

Kind parse_kind(const std::string& name) {
    if (name == "batch_send") return Kind::BatchSend;
    if (name == "batch_recv") return Kind::BatchRecv;
    if (name == "epoch_start") return Kind::EpochStart;
    if (name == "epoch_end") return Kind::EpochEnd;
    throw std::runtime_error("unknown event kind '" + name + "'");
}

EventLogger::EventLogger(const std::string& path)
    : out_(path, std::ios::trunc), path_(path) {
    if (!out_) {
        throw std::runtime_error("EventLogger: cannot open " + path);
    }
}

EventLogger::~EventLogger() {
    std::lock_guard lk(mu_);
    out_.flush();
}

void EventLogger::log(Kind kind, uint32_t epoch, const std::string& node_id,
                      int64_t shard_id, int64_t batch_index) {
    log_at(wall_now_ns(), kind, epoch, node_id, shard_id, batch_index);
}

void EventLogger::log_at(uint64_t t_ns, Kind kind, uint32_t epoch,
                         const std::string& node_id, int64_t shard_id,
                         int64_t batch_index) {
    std::lock_guard lk(mu_);
    out_ << t_ns << ' ' << kind_name(kind) << ' ' << epoch << ' ' << node_id
         << ' ' << shard_id << ' ' << batch_index << '\n';
    if (!out_) {
        throw std::runtime_error("EventLogger: write failed for " + path_);
    }
}

void EventLogger::flush() {
    std::lock_guard lk(mu_);
    out_.flush();
    if (!out_) {
        throw std::runtime_error("EventLogger: flush failed for " + path_);
    }
}

std::vector<Event> read_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("read_events: cannot open " + path);
    }
    std::vector<Event> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        Event ev;
        std::string kind;
        if (!(ss >> ev.t_ns >> kind >> ev.epoch >> ev.node_id >> ev.shard_id >>
              ev.batch_index)) {
            throw std::runtime_error("read_events: bad line " +
                                     std::to_string(lineno) + " in " + path);
        }
        ev.kind = parse_kind(kind);
        out.push_back(std::move(ev));
    }
    return out;
}

}  // namespace emlio::events
