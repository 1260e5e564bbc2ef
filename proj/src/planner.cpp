#include "emlio/planner.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace emlio::planner {

using nlohmann::json;

const NodeSpec& EpochPlan::node(const std::string& node_id) const {
    for (const NodeSpec& n : nodes) {
        if (n.node_id == node_id) {
            return n;
        }
    }
    throw std::runtime_error("plan has no node '" + node_id + "'");
}

const Assignment& EpochPlan::assignment(uint32_t epoch, const std::string& node_id,
                                        uint32_t worker) const {
    for (const Assignment& a : assignments) {
        if (a.epoch == epoch && a.worker == worker && a.node_id == node_id) {
            return a;
        }
    }
    throw std::runtime_error("plan has no assignment for epoch " +
                             std::to_string(epoch) + ", node '" + node_id +
                             "', worker " + std::to_string(worker));
}

uint64_t EpochPlan::batches_for(uint32_t epoch, const std::string& node_id) const {
    uint64_t n = 0;
    for (const Assignment& a : assignments) {
        if (a.epoch == epoch && a.node_id == node_id) {
            n += a.ranges.size();
        }
    }
    return n;
}

EpochPlan plan(const std::vector<recordfmt::ShardIndex>& indexes,
               const std::vector<NodeSpec>& nodes, uint32_t batch_size,
               uint32_t epochs, uint32_t threads_per_node, uint64_t seed) {
    if (indexes.empty()) {
        throw std::invalid_argument("plan: zero shards");
    }
    if (nodes.empty()) {
        throw std::invalid_argument("plan: zero nodes");
    }
    if (batch_size < 1 || epochs < 1 || threads_per_node < 1) {
        throw std::invalid_argument("plan: batch_size, epochs, threads must be >= 1");
    }
    std::set<std::pair<std::string, uint16_t>> seen_addr;
    std::set<std::string> seen_id;
    for (const NodeSpec& n : nodes) {
        if (!seen_addr.insert({n.ip, n.port}).second) {
            throw std::invalid_argument("plan: duplicate node address " + n.ip + ":" +
                                        std::to_string(n.port));
        }
        if (!seen_id.insert(n.node_id).second) {
            throw std::invalid_argument("plan: duplicate node_id " + n.node_id);
        }
    }

    EpochPlan out;
    out.epochs = epochs;
    out.batch_size = batch_size;
    out.threads_per_node = threads_per_node;
    out.seed = seed;
    out.nodes = nodes;

    for (uint32_t e = 0; e < epochs; ++e) {
        std::vector<uint32_t> order(indexes.size());
        for (uint32_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        std::mt19937_64 rng(seed ^ static_cast<uint64_t>(e));
        for (size_t i = order.size() - 1; i >= 1; --i) {
            size_t j = static_cast<size_t>(rng() % (i + 1));
            std::swap(order[i], order[j]);
        }

        // Deal shuffled shards round-robin across nodes, then round-robin
        // each node's deal across its workers.
        std::vector<std::vector<std::vector<uint32_t>>> worker_shards(
            nodes.size(), std::vector<std::vector<uint32_t>>(threads_per_node));
        for (size_t pos = 0; pos < order.size(); ++pos) {
            size_t node = pos % nodes.size();
            size_t local_pos = pos / nodes.size();
            worker_shards[node][local_pos % threads_per_node].push_back(order[pos]);
        }

        for (size_t node = 0; node < nodes.size(); ++node) {
            uint32_t batch_index = 0;
            for (uint32_t w = 0; w < threads_per_node; ++w) {
                Assignment a;
                a.epoch = e;
                a.node_id = nodes[node].node_id;
                a.worker = w;
                for (uint32_t shard_pos : worker_shards[node][w]) {
                    const recordfmt::ShardIndex& idx = indexes[shard_pos];
                    uint64_t n = idx.entries.size();
                    for (uint64_t first = 0; first < n; first += batch_size) {
                        BatchRange r;
                        r.shard_id = idx.shard_id;
                        r.first_entry = static_cast<uint32_t>(first);
                        r.count = static_cast<uint32_t>(
                            std::min<uint64_t>(batch_size, n - first));
                        r.epoch = e;
                        r.batch_index = batch_index++;
                        a.ranges.push_back(r);
                    }
                }
                out.assignments.push_back(std::move(a));
            }
        }
    }
    return out;
}

CoverageReport plan_coverage(const EpochPlan& plan,
                             const std::vector<recordfmt::ShardIndex>& indexes) {
    std::map<uint32_t, uint64_t> shard_sizes;
    for (const recordfmt::ShardIndex& idx : indexes) {
        shard_sizes[idx.shard_id] = idx.entries.size();
    }

    CoverageReport report;
    for (uint32_t e = 0; e < plan.epochs; ++e) {
        std::map<std::pair<uint32_t, uint64_t>, uint32_t> hits;
        for (const Assignment& a : plan.assignments) {
            if (a.epoch != e) {
                continue;
            }
            for (const BatchRange& r : a.ranges) {
                for (uint64_t k = 0; k < r.count; ++k) {
                    ++hits[{r.shard_id, r.first_entry + k}];
                }
            }
        }
        for (const auto& [shard_id, size] : shard_sizes) {
            for (uint64_t entry = 0; entry < size; ++entry) {
                auto it = hits.find({shard_id, entry});
                if (it == hits.end()) {
                    report.missing.push_back({e, shard_id, entry});
                } else if (it->second > 1) {
                    report.duplicated.push_back({e, shard_id, entry});
                }
            }
        }
        // Hits outside any known shard slot are extra coverage too.
        for (const auto& kv : hits) {
            auto it = shard_sizes.find(kv.first.first);
            if (it == shard_sizes.end() || kv.first.second >= it->second) {
                report.duplicated.push_back({e, kv.first.first, kv.first.second});
            }
        }
    }
    return report;
}

std::string serialize_plan(const EpochPlan& plan) {
    json nodes = json::array();
    for (const NodeSpec& n : plan.nodes) {
        nodes.push_back({{"node_id", n.node_id}, {"ip", n.ip}, {"port", n.port}});
    }
    json assignments = json::array();
    for (const Assignment& a : plan.assignments) {
        json ranges = json::array();
        for (const BatchRange& r : a.ranges) {
            ranges.push_back({{"shard", r.shard_id},
                              {"first", r.first_entry},
                              {"count", r.count},
                              {"batch_index", r.batch_index}});
        }
        assignments.push_back({{"epoch", a.epoch},
                               {"node_id", a.node_id},
                               {"worker", a.worker},
                               {"ranges", std::move(ranges)}});
    }
    json doc = {{"batch_size", plan.batch_size},
                {"epochs", plan.epochs},
                {"threads", plan.threads_per_node},
                {"seed", plan.seed},
                {"nodes", std::move(nodes)},
                {"assignments", std::move(assignments)}};
    return doc.dump(2) + "\n";
}

namespace {

void require_keys(const json& obj, std::initializer_list<const char*> keys,
                  const std::string& where) {
    if (!obj.is_object()) {
        throw std::runtime_error(where + ": expected a JSON object");
    }
    for (const char* k : keys) {
        if (!obj.contains(k)) {
            throw std::runtime_error(where + ": missing key '" + k + "'");
        }
    }
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* k : keys) {
            known = known || item.key() == k;
        }
        if (!known) {
            throw std::runtime_error(where + ": unexpected key '" + item.key() + "'");
        }
    }
}

uint64_t get_uint(const json& obj, const char* key, const std::string& where) {
    const json& v = obj.at(key);
    if (!v.is_number_unsigned()) {
        throw std::runtime_error(where + ": '" + key +
                                 "' must be a non-negative integer");
    }
    return v.get<uint64_t>();
}

std::string get_str(const json& obj, const char* key, const std::string& where) {
    const json& v = obj.at(key);
    if (!v.is_string()) {
        throw std::runtime_error(where + ": '" + key + "' must be a string");
    }
    return v.get<std::string>();
}

}  // namespace

EpochPlan deserialize_plan(const std::string& bytes) {
    json doc;
    try {
        doc = json::parse(bytes);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("deserialize_plan: ") + e.what());
    }
    const std::string where = "deserialize_plan";
    require_keys(doc, {"batch_size", "epochs", "threads", "seed", "nodes", "assignments"},
                 where);

    EpochPlan plan;
    plan.batch_size = static_cast<uint32_t>(get_uint(doc, "batch_size", where));
    plan.epochs = static_cast<uint32_t>(get_uint(doc, "epochs", where));
    plan.threads_per_node = static_cast<uint32_t>(get_uint(doc, "threads", where));
    plan.seed = get_uint(doc, "seed", where);
    if (!doc.at("nodes").is_array() || !doc.at("assignments").is_array()) {
        throw std::runtime_error(where + ": 'nodes' and 'assignments' must be arrays");
    }
    for (const json& n : doc.at("nodes")) {
        require_keys(n, {"node_id", "ip", "port"}, where + ".nodes");
        NodeSpec spec;
        spec.node_id = get_str(n, "node_id", where);
        spec.ip = get_str(n, "ip", where);
        uint64_t port = get_uint(n, "port", where);
        if (port > 65535) {
            throw std::runtime_error(where + ": port out of range");
        }
        spec.port = static_cast<uint16_t>(port);
        plan.nodes.push_back(std::move(spec));
    }
    for (const json& a : doc.at("assignments")) {
        require_keys(a, {"epoch", "node_id", "worker", "ranges"}, where + ".assignments");
        Assignment as;
        as.epoch = static_cast<uint32_t>(get_uint(a, "epoch", where));
        as.node_id = get_str(a, "node_id", where);
        as.worker = static_cast<uint32_t>(get_uint(a, "worker", where));
        if (!a.at("ranges").is_array()) {
            throw std::runtime_error(where + ": 'ranges' must be an array");
        }
        for (const json& r : a.at("ranges")) {
            require_keys(r, {"shard", "first", "count", "batch_index"}, where + ".ranges");
            BatchRange br;
            br.shard_id = static_cast<uint32_t>(get_uint(r, "shard", where));
            br.first_entry = static_cast<uint32_t>(get_uint(r, "first", where));
            br.count = static_cast<uint32_t>(get_uint(r, "count", where));
            br.epoch = as.epoch;
            br.batch_index = static_cast<uint32_t>(get_uint(r, "batch_index", where));
            as.ranges.push_back(br);
        }
        plan.assignments.push_back(std::move(as));
    }
    return plan;
}

EpochPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("load_plan: cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_plan(ss.str());
}

void save_plan(const EpochPlan& plan, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("save_plan: cannot open " + path);
    }
    out << serialize_plan(plan);
    if (!out) {
        throw std::runtime_error("save_plan: write failed for " + path);
    }
}

}  // namespace emlio::planner
