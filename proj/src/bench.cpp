#include "emlio/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "emlio/common.hpp"
#include "emlio/events.hpp"
#include "emlio/payload.hpp"
#include "emlio/planner.hpp"
#include "emlio/receiver.hpp"
#include "emlio/sender.hpp"
#include "emlio/transport.hpp"

namespace emlio::bench {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<recordfmt::ShardIndex> gen_synthetic(uint64_t num_samples,
                                                 uint64_t sample_bytes,
                                                 const std::string& out_dir,
                                                 uint64_t seed,
                                                 uint64_t samples_per_shard) {
    if (num_samples == 0) {
        throw std::invalid_argument("num_samples must be positive");
    }
    if (sample_bytes == 0) {
        throw std::invalid_argument("sample_bytes must be positive");
    }
    if (samples_per_shard == 0) {
        samples_per_shard = (num_samples + 7) / 8;
    }
    fs::create_directories(out_dir);
    std::mt19937_64 rng(seed);
    std::vector<recordfmt::ShardIndex> indexes;
    uint32_t shard_id = 0;
    uint64_t produced = 0;
    while (produced < num_samples) {
        uint64_t n = std::min(samples_per_shard, num_samples - produced);
        std::vector<recordfmt::Sample> samples(n);
        for (auto& s : samples) {
            s.label = static_cast<uint32_t>(produced % 1000);
            s.data.resize(sample_bytes);
            size_t i = 0;
            while (i + 8 <= sample_bytes) {
                uint64_t v = rng();
                std::memcpy(&s.data[i], &v, 8);
                i += 8;
            }
            if (i < sample_bytes) {
                uint64_t v = rng();
                std::memcpy(&s.data[i], &v, sample_bytes - i);
            }
            ++produced;
        }
        indexes.push_back(recordfmt::write_shard(samples, shard_id, out_dir));
        ++shard_id;
    }
    return indexes;
}

std::vector<EpochReport> make_report(const std::string& events_path,
                                     const std::string& energy_path,
                                     const std::string& node_id,
                                     double compute_ms) {
    if (compute_ms < 0) {
        throw std::invalid_argument("compute_ms must be >= 0");
    }
    auto evs = events::read_events(events_path);
    auto points = energymon::read_store(energy_path);
    const int64_t compute_ns = llround(compute_ms * 1e6);

    struct EpochEvents {
        std::optional<int64_t> start;
        std::optional<int64_t> end;
        std::vector<int64_t> recvs;
    };
    std::map<uint32_t, EpochEvents> per_epoch;
    for (const auto& ev : evs) {
        if (ev.node_id != node_id) {
            continue;
        }
        auto t = static_cast<int64_t>(ev.t_ns);
        switch (ev.kind) {
            case events::Kind::EpochStart: {
                auto& ee = per_epoch[ev.epoch];
                if (ee.start) {
                    throw ReportError("duplicate epoch_start for epoch " +
                                      std::to_string(ev.epoch));
                }
                ee.start = t;
                break;
            }
            case events::Kind::EpochEnd: {
                auto& ee = per_epoch[ev.epoch];
                if (ee.end) {
                    throw ReportError("duplicate epoch_end for epoch " +
                                      std::to_string(ev.epoch));
                }
                ee.end = t;
                break;
            }
            case events::Kind::BatchRecv:
                per_epoch[ev.epoch].recvs.push_back(t);
                break;
            case events::Kind::BatchSend:
                break;
        }
    }
    if (per_epoch.empty()) {
        throw ReportError("no consumer events for node '" + node_id + "' in " +
                          events_path);
    }

    std::vector<EpochReport> out;
    for (auto& [epoch, ee] : per_epoch) {
        const std::string tag = "epoch " + std::to_string(epoch);
        if (!ee.start) {
            throw ReportError(tag + " missing epoch_start");
        }
        if (!ee.end) {
            throw ReportError(tag + " missing epoch_end");
        }
        const int64_t start = *ee.start;
        const int64_t end = *ee.end;
        if (end < start) {
            throw ReportError(tag + " ends before it starts");
        }
        int64_t prev = start;
        for (int64_t r : ee.recvs) {
            if (r < prev) {
                throw ReportError(tag + " has a batch_recv outside its stage order");
            }
            prev = r;
        }
        if (!ee.recvs.empty() && ee.recvs.back() > end) {
            throw ReportError(tag + " has a batch_recv after epoch_end");
        }

        EpochReport rep;
        rep.epoch = epoch;
        rep.epoch_time_s = static_cast<double>(end - start) / 1e9;
        rep.batches = ee.recvs.size();

        auto add_window = [&](StageReport& sr, int64_t a, int64_t b) {
            sr.seconds += static_cast<double>(b - a) / 1e9;
            auto t = energymon::query_energy(points, node_id, a, b);
            sr.energy.cpu_nj += t.cpu_nj;
            sr.energy.mem_nj += t.mem_nj;
            sr.energy.gpu_nj += t.gpu_nj;
            sr.energy.field_mask |= t.field_mask;
        };

        prev = start;
        for (int64_t r : ee.recvs) {
            int64_t split = std::max(prev, r - compute_ns);
            add_window(rep.read_deliver, prev, split);
            add_window(rep.consume, split, r);
            prev = r;
        }
        add_window(rep.tail, prev, end);
        add_window(rep.total, start, end);

        rep.io_time_share =
            rep.total.seconds > 0 ? rep.read_deliver.seconds / rep.total.seconds : 0.0;
        rep.io_energy_share =
            rep.total.energy.total_nj() > 0
                ? static_cast<double>(rep.read_deliver.energy.total_nj()) /
                      static_cast<double>(rep.total.energy.total_nj())
                : 0.0;
        out.push_back(std::move(rep));
    }
    return out;
}

double RunOutcome::mean_epoch_time_s() const {
    if (epochs.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (const auto& e : epochs) {
        s += e.epoch_time_s;
    }
    return s / static_cast<double>(epochs.size());
}

uint64_t RunOutcome::batches_per_epoch() const {
    return epochs.empty() ? 0 : epochs.front().batches;
}

double RunOutcome::io_energy_share() const {
    int64_t io = 0;
    int64_t tot = 0;
    for (const auto& e : epochs) {
        io += e.read_deliver.energy.total_nj();
        tot += e.total.energy.total_nj();
    }
    return tot > 0 ? static_cast<double>(io) / static_cast<double>(tot) : 0.0;
}

namespace {

void validate_workload(const Workload& wl) {
    if (wl.num_samples == 0 || wl.sample_bytes == 0) {
        throw std::invalid_argument("workload sizes must be positive");
    }
    if (wl.batch_size == 0 || wl.epochs == 0 || wl.threads == 0) {
        throw std::invalid_argument("batch_size, epochs and threads must be >= 1");
    }
    if (wl.rtt_ms.empty()) {
        throw std::invalid_argument("rtt list must be non-empty");
    }
    for (double rtt : wl.rtt_ms) {
        if (!std::isfinite(rtt) || rtt < 0) {
            throw std::invalid_argument("rtt values must be finite and >= 0");
        }
    }
    if (wl.compute_ms < 0 || !std::isfinite(wl.compute_ms)) {
        throw std::invalid_argument("compute_ms must be finite and >= 0");
    }
    if (wl.hwm == 0 || wl.prefetch == 0) {
        throw std::invalid_argument("hwm and prefetch must be >= 1");
    }
}

std::chrono::milliseconds one_way(double rtt_ms) {
    return std::chrono::milliseconds(llround(rtt_ms / 2.0));
}

// Constant synthetic power during benchmark runs, so a stage's energy share
// tracks its time share and the I/O-share trend is attributable to timing.
// One source only: every sampler thread competes with the pipeline under
// test for the same cores, and one 50 W meter already determines the shares.
std::unique_ptr<energymon::Monitor> start_bench_monitor(const std::string& store_path,
                                                        const std::string& node_id) {
    energymon::MonitorConfig mc;
    mc.interval_s = 0.001;
    mc.node_id = node_id;
    mc.store_path = store_path;
    std::vector<std::unique_ptr<energymon::PowerSource>> sources;
    sources.push_back(
        std::make_unique<energymon::ConstantPowerSource>(energymon::Field::Cpu, 50.0));
    return std::make_unique<energymon::Monitor>(std::move(mc), std::move(sources));
}

std::string rtt_tag(double rtt) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", rtt);
    std::string s = buf;
    for (auto& c : s) {
        if (c == '.') {
            c = 'p';
        }
    }
    return s;
}

void fresh_logs(const std::string& events_path, const std::string& energy_path) {
    std::error_code ec;
    fs::remove(events_path, ec);
    fs::remove(energy_path, ec);
}

}  // namespace

RunOutcome run_pipelined(const Workload& wl, double rtt_ms, const std::string& data_dir,
                         const std::string& run_dir) {
    validate_workload(wl);
    fs::create_directories(run_dir);
    const std::string events_path = run_dir + "/events.log";
    const std::string energy_path = run_dir + "/energy.log";
    fresh_logs(events_path, energy_path);

    auto indexes = recordfmt::load_dataset(data_dir);
    if (indexes.empty()) {
        throw std::invalid_argument("no dataset under " + data_dir);
    }
    const std::string node = "compute0";
    auto plan = planner::plan(indexes, {{node, "127.0.0.1", 1}}, wl.batch_size,
                              wl.epochs, wl.threads, wl.seed);

    events::EventLogger logger(events_path);

    receiver::ReceiverConfig rc;
    rc.listen_ip = "127.0.0.1";
    rc.listen_port = 0;
    rc.prefetch_depth = wl.prefetch;
    rc.expected_senders = wl.threads;
    rc.epochs = wl.epochs;
    rc.compute_ms = wl.compute_ms;
    rc.node_id = node;
    rc.channel.hwm = wl.hwm;
    rc.events = &logger;
    for (uint32_t e = 0; e < wl.epochs; ++e) {
        rc.expected_batches.push_back(plan.batches_for(e, node));
    }
    auto recv = std::make_unique<receiver::Receiver>(rc);
    plan.nodes[0].port = recv->port();

    auto monitor = start_bench_monitor(energy_path, node);

    sender::SenderConfig sc;
    sc.node_id = node;
    sc.data_dir = data_dir;
    sc.workers = wl.threads;
    sc.channel.hwm = wl.hwm;
    sc.channel.injected_one_way_delay = one_way(rtt_ms);
    sc.events = &logger;

    sender::SendSummary ss;
    std::thread sender_thread([&] { ss = sender::run_sender(plan, sc); });

    receiver::RunSummary rs;
    try {
        rs = recv->run([](const receiver::DecodedBatch&) {});
    } catch (...) {
        recv.reset();  // closes the endpoint so the sender unblocks
        sender_thread.join();
        try {
            monitor->stop();
        } catch (...) {
        }
        throw;
    }
    sender_thread.join();
    monitor->stop();
    logger.flush();

    if (!ss.error.empty()) {
        throw std::runtime_error("sender failed: " + ss.error);
    }
    if (!rs.all_complete()) {
        throw std::runtime_error("streaming run finished with incomplete epochs");
    }

    RunOutcome out;
    out.mode = "pipelined";
    out.rtt_ms = rtt_ms;
    out.node_id = node;
    out.epochs = make_report(events_path, energy_path, node, wl.compute_ms);
    for (size_t i = 0; i < out.epochs.size() && i < rs.epochs.size(); ++i) {
        out.epochs[i].bytes = rs.epochs[i].bytes;
    }
    out.warnings = monitor->warnings();
    return out;
}

RunOutcome run_baseline(const Workload& wl, double rtt_ms, const std::string& data_dir,
                        const std::string& run_dir) {
    validate_workload(wl);
    fs::create_directories(run_dir);
    const std::string events_path = run_dir + "/events.log";
    const std::string energy_path = run_dir + "/energy.log";
    fresh_logs(events_path, energy_path);

    auto indexes = recordfmt::load_dataset(data_dir);
    if (indexes.empty()) {
        throw std::invalid_argument("no dataset under " + data_dir);
    }
    const std::string client_node = "compute0";
    const std::string server_node = "storage0";
    auto plan = planner::plan(indexes, {{client_node, "127.0.0.1", 1}}, wl.batch_size,
                              wl.epochs, wl.threads, wl.seed);

    std::map<uint32_t, const recordfmt::ShardIndex*> by_id;
    for (const auto& ix : indexes) {
        by_id[ix.shard_id] = &ix;
    }

    events::EventLogger logger(events_path);
    auto monitor = start_bench_monitor(energy_path, client_node);

    transport::ChannelConfig delayed;
    delayed.hwm = wl.hwm;
    delayed.injected_one_way_delay = one_way(rtt_ms);
    transport::ChannelConfig plain;

    transport::PullEndpoint req_pull("127.0.0.1", 0, plain, server_node);
    transport::PullEndpoint reply_pull("127.0.0.1", 0, plain, client_node);

    std::string server_error;
    std::thread server([&] {
        try {
            planner::NodeSpec client_spec{client_node, "127.0.0.1", reply_pull.port()};
            transport::PushStream reply_push(client_spec, delayed, server_node);
            for (uint32_t e = 0; e < wl.epochs; ++e) {
                for (uint32_t w = 0; w < wl.threads; ++w) {
                    const auto& a = plan.assignment(e, client_node, w);
                    for (const auto& range : a.ranges) {
                        auto got = req_pull.recv();
                        if (!got) {
                            throw std::runtime_error("request stream closed early");
                        }
                        if (got->frame.type != transport::FrameType::Request) {
                            throw std::runtime_error(
                                "unexpected frame type on the request channel");
                        }
                        const auto* ix = by_id.at(range.shard_id);
                        auto samples = recordfmt::read_range(
                            fs::path(data_dir) / ix->shard_file,
                            std::span<const recordfmt::RecordEntry>(ix->entries)
                                .subspan(range.first_entry, range.count));
                        auto payload =
                            encode_batch(samples, e, range.shard_id, range.batch_index);
                        reply_push.push({transport::FrameType::Batch, std::move(payload)});
                        logger.log(events::Kind::BatchSend, e, server_node,
                                   range.shard_id, range.batch_index);
                    }
                }
            }
            reply_push.close();
        } catch (const std::exception& ex) {
            server_error = ex.what();
            reply_pull.close();  // wakes a client blocked on recv
        }
    });

    std::vector<uint64_t> bytes_per_epoch(wl.epochs, 0);
    std::string client_error;
    try {
        planner::NodeSpec server_spec{server_node, "127.0.0.1", req_pull.port()};
        transport::PushStream req_push(server_spec, delayed, client_node);
        for (uint32_t e = 0; e < wl.epochs; ++e) {
            const uint64_t n = plan.batches_for(e, client_node);
            logger.log(events::Kind::EpochStart, e, client_node);
            for (uint64_t i = 0; i < n; ++i) {
                req_push.push({transport::FrameType::Request, {}});
                auto got = reply_pull.recv();
                if (!got) {
                    throw std::runtime_error(
                        "reply stream closed early" +
                        (server_error.empty() ? std::string()
                                              : ": " + server_error));
                }
                if (got->frame.type != transport::FrameType::Batch) {
                    throw std::runtime_error("unexpected frame type on the reply channel");
                }
                auto decoded = decode_batch(got->frame.payload);
                if (decoded.header.epoch != e) {
                    throw std::runtime_error("reply batch is for the wrong epoch");
                }
                bytes_per_epoch[e] += got->frame.payload.size();
                if (wl.compute_ms > 0) {
                    precise_sleep_for(std::chrono::nanoseconds(
                        llround(wl.compute_ms * 1e6)));
                }
                logger.log(events::Kind::BatchRecv, e, client_node,
                           decoded.header.shard_id, decoded.header.batch_index);
            }
            logger.log(events::Kind::EpochEnd, e, client_node);
        }
        req_push.close();
    } catch (const std::exception& ex) {
        client_error = ex.what();
        req_pull.close();  // wakes a server blocked on recv
    }
    server.join();
    monitor->stop();
    logger.flush();

    if (!client_error.empty()) {
        throw std::runtime_error("baseline client failed: " + client_error);
    }
    if (!server_error.empty()) {
        throw std::runtime_error("baseline server failed: " + server_error);
    }

    RunOutcome out;
    out.mode = "baseline";
    out.rtt_ms = rtt_ms;
    out.node_id = client_node;
    out.epochs = make_report(events_path, energy_path, client_node, wl.compute_ms);
    for (auto& ep : out.epochs) {
        if (ep.epoch < bytes_per_epoch.size()) {
            ep.bytes = bytes_per_epoch[ep.epoch];
        }
    }
    out.warnings = monitor->warnings();
    return out;
}

std::vector<RunOutcome> run_sharded(const Workload& wl, double rtt_ms, uint32_t num_nodes,
                                    const std::string& data_dir,
                                    const std::string& run_dir) {
    validate_workload(wl);
    if (num_nodes < 2) {
        throw std::invalid_argument("sharded mode needs at least 2 nodes");
    }
    if (wl.threads < 2 || wl.threads % 2 != 0) {
        throw std::invalid_argument("sharded mode needs an even worker count >= 2");
    }
    fs::create_directories(run_dir);
    auto indexes = recordfmt::load_dataset(data_dir);
    if (indexes.empty()) {
        throw std::invalid_argument("no dataset under " + data_dir);
    }

    std::vector<planner::NodeSpec> nodes;
    for (uint32_t i = 0; i < num_nodes; ++i) {
        nodes.push_back({"compute" + std::to_string(i), "127.0.0.1",
                         static_cast<uint16_t>(1 + i)});
    }
    auto plan = planner::plan(indexes, nodes, wl.batch_size, wl.epochs, wl.threads,
                              wl.seed);

    struct NodeRun {
        std::string node;
        std::string events_path;
        std::string energy_path;
        std::unique_ptr<events::EventLogger> logger;
        std::unique_ptr<receiver::Receiver> recv;
        std::unique_ptr<energymon::Monitor> monitor;
        receiver::RunSummary rs;
        sender::SendSummary local_ss;
        sender::SendSummary remote_ss;
        std::thread recv_thread;
        std::thread local_thread;
        std::thread remote_thread;
        std::string recv_error;
    };
    std::vector<std::unique_ptr<NodeRun>> runs;

    for (uint32_t i = 0; i < num_nodes; ++i) {
        auto nr = std::make_unique<NodeRun>();
        nr->node = nodes[i].node_id;
        nr->events_path = run_dir + "/events_" + nr->node + ".log";
        nr->energy_path = run_dir + "/energy_" + nr->node + ".log";
        fresh_logs(nr->events_path, nr->energy_path);
        nr->logger = std::make_unique<events::EventLogger>(nr->events_path);

        receiver::ReceiverConfig rc;
        rc.listen_ip = "127.0.0.1";
        rc.listen_port = 0;
        rc.prefetch_depth = wl.prefetch;
        rc.expected_senders = wl.threads;
        rc.epochs = wl.epochs;
        rc.compute_ms = wl.compute_ms;
        rc.node_id = nr->node;
        rc.channel.hwm = wl.hwm;
        rc.events = nr->logger.get();
        for (uint32_t e = 0; e < wl.epochs; ++e) {
            rc.expected_batches.push_back(plan.batches_for(e, nr->node));
        }
        nr->recv = std::make_unique<receiver::Receiver>(rc);
        plan.nodes[i].port = nr->recv->port();
        runs.push_back(std::move(nr));
    }
    for (auto& nr : runs) {
        nr->monitor = start_bench_monitor(nr->energy_path, nr->node);
    }

    std::vector<uint32_t> local_workers;
    std::vector<uint32_t> remote_workers;
    for (uint32_t w = 0; w < wl.threads; ++w) {
        (w < wl.threads / 2 ? local_workers : remote_workers).push_back(w);
    }

    for (auto& nr : runs) {
        nr->recv_thread = std::thread([nrp = nr.get()] {
            try {
                nrp->rs = nrp->recv->run([](const receiver::DecodedBatch&) {});
            } catch (const std::exception& ex) {
                nrp->recv_error = ex.what();
                nrp->recv.reset();  // closes the endpoint so senders unblock
            }
        });
    }
    for (auto& nr : runs) {
        sender::SenderConfig base;
        base.node_id = nr->node;
        base.data_dir = data_dir;
        base.workers = wl.threads;
        base.channel.hwm = wl.hwm;
        base.events = nr->logger.get();

        sender::SenderConfig local = base;
        local.worker_subset = local_workers;
        sender::SenderConfig remote = base;
        remote.worker_subset = remote_workers;
        remote.channel.injected_one_way_delay = one_way(rtt_ms);

        nr->local_thread = std::thread(
            [&plan, local, nrp = nr.get()] { nrp->local_ss = sender::run_sender(plan, local); });
        nr->remote_thread = std::thread(
            [&plan, remote, nrp = nr.get()] { nrp->remote_ss = sender::run_sender(plan, remote); });
    }

    for (auto& nr : runs) {
        nr->recv_thread.join();
    }
    for (auto& nr : runs) {
        nr->local_thread.join();
        nr->remote_thread.join();
    }
    for (auto& nr : runs) {
        nr->monitor->stop();
        nr->logger->flush();
    }

    std::string error;
    for (auto& nr : runs) {
        if (!nr->recv_error.empty()) {
            error = nr->node + " receiver: " + nr->recv_error;
        } else if (!nr->local_ss.error.empty()) {
            error = nr->node + " local sender: " + nr->local_ss.error;
        } else if (!nr->remote_ss.error.empty()) {
            error = nr->node + " remote sender: " + nr->remote_ss.error;
        } else if (!nr->rs.all_complete()) {
            error = nr->node + ": incomplete epochs";
        }
    }
    if (!error.empty()) {
        throw std::runtime_error("sharded run failed: " + error);
    }

    // Exactly-once across the fleet: everything the plan assigned for an epoch
    // was consumed by exactly one node.
    for (uint32_t e = 0; e < wl.epochs; ++e) {
        std::multiset<std::pair<uint32_t, uint32_t>> expected;
        for (const auto& a : plan.assignments) {
            if (a.epoch != e) {
                continue;
            }
            for (const auto& r : a.ranges) {
                expected.emplace(r.shard_id, r.batch_index);
            }
        }
        std::multiset<std::pair<uint32_t, uint32_t>> got;
        for (const auto& nr : runs) {
            for (const auto& es : nr->rs.epochs) {
                if (es.epoch == e) {
                    got.insert(es.consumed.begin(), es.consumed.end());
                }
            }
        }
        if (expected != got) {
            throw std::runtime_error("sharded run failed: epoch " + std::to_string(e) +
                                     " coverage mismatch (" + std::to_string(got.size()) +
                                     " consumed vs " + std::to_string(expected.size()) +
                                     " planned)");
        }
    }

    std::vector<RunOutcome> out;
    for (auto& nr : runs) {
        RunOutcome ro;
        ro.mode = "sharded";
        ro.rtt_ms = rtt_ms;
        ro.node_id = nr->node;
        ro.epochs = make_report(nr->events_path, nr->energy_path, nr->node, wl.compute_ms);
        for (size_t i = 0; i < ro.epochs.size() && i < nr->rs.epochs.size(); ++i) {
            ro.epochs[i].bytes = nr->rs.epochs[i].bytes;
        }
        ro.warnings = nr->monitor->warnings();
        out.push_back(std::move(ro));
    }
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace

CompareReport run_compare(const Workload& wl, const std::string& work_dir) {
    validate_workload(wl);
    fs::create_directories(work_dir);
    const std::string data_dir = work_dir + "/data";
    fs::remove_all(data_dir);
    gen_synthetic(wl.num_samples, wl.sample_bytes, data_dir, wl.seed,
                  wl.samples_per_shard);

    CompareReport rep;
    rep.workload = wl;
    for (double rtt : wl.rtt_ms) {
        rep.runs.push_back(
            run_pipelined(wl, rtt, data_dir, work_dir + "/pipelined_" + rtt_tag(rtt)));
        rep.runs.push_back(
            run_baseline(wl, rtt, data_dir, work_dir + "/baseline_" + rtt_tag(rtt)));
    }

    auto mode_runs = [&](const std::string& mode) {
        std::vector<const RunOutcome*> v;
        for (const auto& r : rep.runs) {
            if (r.mode == mode) {
                v.push_back(&r);
            }
        }
        std::sort(v.begin(), v.end(),
                  [](const RunOutcome* a, const RunOutcome* b) { return a->rtt_ms < b->rtt_ms; });
        return v;
    };
    auto pipelined = mode_runs("pipelined");
    auto baseline = mode_runs("baseline");

    {
        bool ok = true;
        std::string detail = "all stage sums exact";
        for (const auto& r : rep.runs) {
            for (const auto& ep : r.epochs) {
                bool exact =
                    ep.read_deliver.energy.cpu_nj + ep.consume.energy.cpu_nj +
                            ep.tail.energy.cpu_nj == ep.total.energy.cpu_nj &&
                    ep.read_deliver.energy.mem_nj + ep.consume.energy.mem_nj +
                            ep.tail.energy.mem_nj == ep.total.energy.mem_nj &&
                    ep.read_deliver.energy.gpu_nj + ep.consume.energy.gpu_nj +
                            ep.tail.energy.gpu_nj == ep.total.energy.gpu_nj;
                if (!exact) {
                    ok = false;
                    detail = r.mode + " rtt=" + fmt_double(r.rtt_ms) + " epoch " +
                             std::to_string(ep.epoch) + ": stage sums differ from total";
                }
            }
        }
        rep.checks.push_back({"stage-energy-conservation", ok, detail});
    }
    if (pipelined.size() >= 2) {
        double mx = 0.0;
        double mn = std::numeric_limits<double>::infinity();
        for (const auto* r : pipelined) {
            mx = std::max(mx, r->mean_epoch_time_s());
            mn = std::min(mn, r->mean_epoch_time_s());
        }
        bool ok = mn > 0 && mx / mn <= 1.10;
        rep.checks.push_back({"pipelined-rtt-invariance", ok,
                              "max/min epoch time ratio " + fmt_double(mn > 0 ? mx / mn : 0.0) +
                                  " (limit 1.10)"});
    }
    if (baseline.size() >= 2) {
        bool ok = true;
        for (size_t i = 1; i < baseline.size(); ++i) {
            if (baseline[i]->mean_epoch_time_s() < baseline[i - 1]->mean_epoch_time_s()) {
                ok = false;
            }
        }
        rep.checks.push_back({"baseline-monotonic-in-rtt", ok,
                              ok ? "epoch time non-decreasing in rtt"
                                 : "epoch time decreased as rtt grew"});
    }
    const RunOutcome* b0 = nullptr;
    const RunOutcome* bmax = nullptr;
    for (const auto* r : baseline) {
        if (r->rtt_ms == 0) {
            b0 = r;
        }
        if (r->rtt_ms > 0 && (bmax == nullptr || r->rtt_ms > bmax->rtt_ms)) {
            bmax = r;
        }
    }
    if (b0 != nullptr && bmax != nullptr) {
        double n = static_cast<double>(bmax->batches_per_epoch());
        double floor_s = 0.8 * n * bmax->rtt_ms / 1000.0;
        double delta = bmax->mean_epoch_time_s() - b0->mean_epoch_time_s();
        rep.checks.push_back({"baseline-rtt-penalty", delta >= floor_s,
                              "delta " + fmt_double(delta) + " s, floor " +
                                  fmt_double(floor_s) + " s"});
        const RunOutcome* pmax = nullptr;
        for (const auto* r : pipelined) {
            if (r->rtt_ms == bmax->rtt_ms) {
                pmax = r;
            }
        }
        if (pmax != nullptr && n >= 100 && pmax->mean_epoch_time_s() > 0) {
            double speedup = bmax->mean_epoch_time_s() / pmax->mean_epoch_time_s();
            rep.checks.push_back({"speedup-at-max-rtt", speedup >= 5.0,
                                  "speedup " + fmt_double(speedup) + "x (floor 5x)"});
        }
    }
    if (baseline.size() >= 2) {
        bool ok = true;
        for (size_t i = 1; i < baseline.size(); ++i) {
            if (baseline[i]->io_energy_share() <= baseline[i - 1]->io_energy_share()) {
                ok = false;
            }
        }
        rep.checks.push_back({"baseline-io-share-increasing", ok,
                              ok ? "I/O energy share strictly increasing in rtt"
                                 : "I/O energy share failed to increase with rtt"});
    }
    if (pipelined.size() >= 2) {
        double mx = 0.0;
        double mn = 1.0;
        for (const auto* r : pipelined) {
            mx = std::max(mx, r->io_energy_share());
            mn = std::min(mn, r->io_energy_share());
        }
        rep.checks.push_back({"pipelined-io-share-flat", mx - mn <= 0.10,
                              "share spread " + fmt_double(mx - mn) + " (limit 0.10)"});
    }

    rep.pass = true;
    for (const auto& c : rep.checks) {
        rep.pass = rep.pass && c.pass;
    }
    return rep;
}

namespace {

json stage_json(const StageReport& s) {
    return json{{"seconds", s.seconds},
                {"cpu_j", s.energy.cpu_j()},
                {"memory_j", s.energy.mem_j()},
                {"gpu_j", s.energy.gpu_j()},
                {"total_j", s.energy.total_j()}};
}

}  // namespace

std::string report_to_json(const CompareReport& report) {
    json j;
    j["workload"] = {{"num_samples", report.workload.num_samples},
                     {"sample_bytes", report.workload.sample_bytes},
                     {"batch_size", report.workload.batch_size},
                     {"epochs", report.workload.epochs},
                     {"rtt_ms", report.workload.rtt_ms},
                     {"compute_ms", report.workload.compute_ms},
                     {"threads", report.workload.threads},
                     {"hwm", report.workload.hwm},
                     {"prefetch", report.workload.prefetch},
                     {"seed", report.workload.seed}};
    j["runs"] = json::array();
    for (const auto& r : report.runs) {
        json run{{"mode", r.mode},
                 {"rtt_ms", r.rtt_ms},
                 {"node_id", r.node_id},
                 {"mean_epoch_time_s", r.mean_epoch_time_s()},
                 {"io_energy_share", r.io_energy_share()},
                 {"warnings", r.warnings}};
        run["epochs"] = json::array();
        for (const auto& ep : r.epochs) {
            run["epochs"].push_back({{"epoch", ep.epoch},
                                     {"epoch_time_s", ep.epoch_time_s},
                                     {"batches", ep.batches},
                                     {"bytes", ep.bytes},
                                     {"read_deliver", stage_json(ep.read_deliver)},
                                     {"consume", stage_json(ep.consume)},
                                     {"tail", stage_json(ep.tail)},
                                     {"total", stage_json(ep.total)},
                                     {"io_time_share", ep.io_time_share},
                                     {"io_energy_share", ep.io_energy_share}});
        }
        j["runs"].push_back(std::move(run));
    }
    j["checks"] = json::array();
    for (const auto& c : report.checks) {
        j["checks"].push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    }
    j["pass"] = report.pass;
    return j.dump(2) + "\n";
}

void write_report(const CompareReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open report file: " + path);
    }
    out << report_to_json(report);
    out.flush();
    if (!out) {
        throw std::runtime_error("failed writing report file: " + path);
    }
}

void write_plots(const CompareReport& report, const std::string& dir) {
    fs::create_directories(dir);

    std::vector<double> rtts;
    std::vector<std::string> modes;
    for (const auto& r : report.runs) {
        if (std::find(rtts.begin(), rtts.end(), r.rtt_ms) == rtts.end()) {
            rtts.push_back(r.rtt_ms);
        }
        if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) {
            modes.push_back(r.mode);
        }
    }
    std::sort(rtts.begin(), rtts.end());
    auto find_run = [&](const std::string& mode, double rtt) -> const RunOutcome* {
        for (const auto& r : report.runs) {
            if (r.mode == mode && r.rtt_ms == rtt) {
                return &r;
            }
        }
        return nullptr;
    };
    auto stage_j = [](const RunOutcome& r, StageReport EpochReport::*stage) {
        double s = 0.0;
        for (const auto& ep : r.epochs) {
            s += (ep.*stage).energy.total_j();
        }
        return s;
    };

    double max_energy = 1e-9;
    double max_time = 1e-9;
    for (const auto& r : report.runs) {
        double tot = stage_j(r, &EpochReport::total);
        max_energy = std::max(max_energy, tot);
        max_time = std::max(max_time, r.mean_epoch_time_s());
    }

    const double width = 960, height = 480;
    const double left = 70, right = 80, top = 48, bottom = 64;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    const double group_w = plot_w / static_cast<double>(rtts.size());
    const double bar_w = group_w / static_cast<double>(modes.size() + 1);

    const char* stage_colors[3] = {"#d95f02", "#1b9e77", "#7570b3"};
    const char* stage_names[3] = {"read+deliver", "consume", "tail"};
    StageReport EpochReport::*stage_ptrs[3] = {&EpochReport::read_deliver,
                                               &EpochReport::consume, &EpochReport::tail};
    const char* line_colors[] = {"#1f77b4", "#e41a1c", "#4daf4a", "#984ea3"};

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2
        << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">Per-epoch stage energy and "
           "runtime vs RTT</text>\n";
    // axes
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left + plot_w << "\" y1=\"" << top << "\" x2=\"" << left + plot_w
        << "\" y2=\"" << top + plot_h << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"16\" y=\"" << top + plot_h / 2
        << "\" transform=\"rotate(-90 16 " << top + plot_h / 2
        << ")\" text-anchor=\"middle\">energy (J)</text>\n";
    svg << "<text x=\"" << width - 16 << "\" y=\"" << top + plot_h / 2
        << "\" transform=\"rotate(90 " << width - 16 << " " << top + plot_h / 2
        << ")\" text-anchor=\"middle\">epoch time (s)</text>\n";

    for (size_t gi = 0; gi < rtts.size(); ++gi) {
        double gx = left + group_w * static_cast<double>(gi);
        svg << "<text x=\"" << gx + group_w / 2 << "\" y=\"" << top + plot_h + 20
            << "\" text-anchor=\"middle\">" << fmt_double(rtts[gi]) << " ms</text>\n";
        for (size_t mi = 0; mi < modes.size(); ++mi) {
            const RunOutcome* r = find_run(modes[mi], rtts[gi]);
            if (r == nullptr) {
                continue;
            }
            double x = gx + bar_w * (static_cast<double>(mi) + 0.5);
            double y = top + plot_h;
            for (int si = 0; si < 3; ++si) {
                double e = stage_j(*r, stage_ptrs[si]);
                double h = plot_h * e / max_energy;
                y -= h;
                svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w * 0.9
                    << "\" height=\"" << h << "\" fill=\"" << stage_colors[si] << "\"/>\n";
            }
            svg << "<text x=\"" << x + bar_w * 0.45 << "\" y=\"" << top + plot_h + 36
                << "\" text-anchor=\"middle\" font-size=\"10\">" << modes[mi] << "</text>\n";
        }
    }
    for (size_t mi = 0; mi < modes.size(); ++mi) {
        std::ostringstream pts;
        bool any = false;
        for (size_t gi = 0; gi < rtts.size(); ++gi) {
            const RunOutcome* r = find_run(modes[mi], rtts[gi]);
            if (r == nullptr) {
                continue;
            }
            double x = left + group_w * (static_cast<double>(gi) + 0.5);
            double y = top + plot_h - plot_h * r->mean_epoch_time_s() / max_time;
            pts << (any ? " " : "") << x << "," << y;
            any = true;
        }
        if (any) {
            svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
                << line_colors[mi % 4] << "\" stroke-width=\"2\"/>\n";
        }
    }
    double lx = left + 8;
    for (int si = 0; si < 3; ++si) {
        svg << "<rect x=\"" << lx << "\" y=\"" << top + 6 << "\" width=\"12\" height=\"12\" fill=\""
            << stage_colors[si] << "\"/>\n";
        svg << "<text x=\"" << lx + 16 << "\" y=\"" << top + 16 << "\">" << stage_names[si]
            << "</text>\n";
        lx += 110;
    }
    for (size_t mi = 0; mi < modes.size(); ++mi) {
        svg << "<line x1=\"" << lx << "\" y1=\"" << top + 12 << "\" x2=\"" << lx + 20
            << "\" y2=\"" << top + 12 << "\" stroke=\"" << line_colors[mi % 4]
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << lx + 24 << "\" y=\"" << top + 16 << "\">" << modes[mi]
            << " time</text>\n";
        lx += 130;
    }
    svg << "</svg>\n";

    const std::string path = dir + "/report.svg";
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open plot file: " + path);
    }
    out << svg.str();
    out.flush();
    if (!out) {
        throw std::runtime_error("failed writing plot file: " + path);
    }
}

}  // namespace emlio::bench
