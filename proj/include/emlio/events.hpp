#pragma once

#include <cstdint>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

namespace emlio::events {

enum class Kind { BatchSend, BatchRecv, EpochStart, EpochEnd };

const char* kind_name(Kind k);
Kind parse_kind(const std::string& name);

// One line per event:
//   <t_wall_ns> <kind> <epoch> <node_id> <shard> <batch>
// shard and batch are -1 for epoch-level events.
struct Event {
    uint64_t t_ns = 0;
    Kind kind = Kind::BatchSend;
    uint32_t epoch = 0;
    std::string node_id;
    int64_t shard_id = -1;
    int64_t batch_index = -1;
};

// Thread-safe appender shared by sender and receiver in one process.
class EventLogger {
  public:
    explicit EventLogger(const std::string& path);
    ~EventLogger();

    void log(Kind kind, uint32_t epoch, const std::string& node_id,
             int64_t shard_id = -1, int64_t batch_index = -1);
    void log_at(uint64_t t_ns, Kind kind, uint32_t epoch,
                const std::string& node_id, int64_t shard_id = -1,
                int64_t batch_index = -1);
    void flush();

  private:
    std::mutex mu_;
    std::ofstream out_;
    std::string path_;
};

std::vector<Event> read_events(const std::string& path);

}  // namespace emlio::events
