#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "emlio/bench.hpp"
#include "emlio/common.hpp"
#include "emlio/energymon.hpp"
#include "emlio/events.hpp"
#include "emlio/planner.hpp"
#include "emlio/receiver.hpp"
#include "emlio/recordfmt.hpp"
#include "emlio/sender.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void handle_sigint(int) { g_interrupted.store(true); }

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        if (!cur.empty()) {
            out.push_back(cur);
        }
    }
    return out;
}

// "[id@]host:port" entries, comma-separated; ids default to node<i>.
std::vector<emlio::planner::NodeSpec> parse_nodes(const std::string& arg) {
    std::vector<emlio::planner::NodeSpec> nodes;
    auto tokens = split(arg, ',');
    for (size_t i = 0; i < tokens.size(); ++i) {
        std::string token = tokens[i];
        std::string id = "node" + std::to_string(i);
        auto at = token.find('@');
        if (at != std::string::npos) {
            id = token.substr(0, at);
            token = token.substr(at + 1);
        }
        auto [host, port] = emlio::parse_host_port(token);
        nodes.push_back({id, host, port});
    }
    if (nodes.empty()) {
        throw std::invalid_argument("node list is empty");
    }
    return nodes;
}

std::vector<double> parse_rtt_list(const std::string& arg) {
    std::vector<double> out;
    for (const auto& token : split(arg, ',')) {
        size_t used = 0;
        double v = std::stod(token, &used);
        if (used != token.size()) {
            throw std::invalid_argument("bad rtt value: " + token);
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw std::invalid_argument("rtt list is empty");
    }
    return out;
}

// "synthetic:<field>:<watts>" or "rapl", comma-separated.
std::vector<std::unique_ptr<emlio::energymon::PowerSource>> parse_sources(
    const std::string& arg) {
    namespace em = emlio::energymon;
    std::vector<std::unique_ptr<em::PowerSource>> sources;
    for (const auto& token : split(arg, ',')) {
        auto parts = split(token, ':');
        if (parts.size() == 1 && parts[0] == "rapl") {
            auto adapters = em::os_adapters();
            if (adapters.empty()) {
                throw std::invalid_argument(
                    "rapl requested but no supported power domains were found");
            }
            for (auto& a : adapters) {
                sources.push_back(std::move(a));
            }
            continue;
        }
        if (parts.size() != 3 || parts[0] != "synthetic") {
            throw std::invalid_argument("bad source spec: " + token);
        }
        auto field = em::parse_field(parts[1]);
        if (!field) {
            throw std::invalid_argument("unknown source field: " + parts[1]);
        }
        size_t used = 0;
        double watts = std::stod(parts[2], &used);
        if (used != parts[2].size() || watts < 0) {
            throw std::invalid_argument("bad source wattage: " + parts[2]);
        }
        if (*field == em::Field::Gpu) {
            sources.push_back(std::make_unique<em::SyntheticGpuSource>(
                std::vector<double>{watts * 1000.0}));
        } else {
            sources.push_back(std::make_unique<em::ConstantPowerSource>(*field, watts));
        }
    }
    if (sources.empty()) {
        throw std::invalid_argument("source list is empty");
    }
    return sources;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Record-shard streaming loader with a synchronized energy monitor"};
    app.require_subcommand(1);
    int rc = 0;

    // ---- convert ----
    auto* convert = app.add_subcommand(
        "convert", "Pack a directory tree of sample files into record shards");
    std::string cv_input, cv_output;
    uint64_t cv_per_shard = 0;
    convert->add_option("--input-dir", cv_input, "Directory tree of raw sample files")
        ->required();
    convert->add_option("--output-dir", cv_output, "Destination for shards and indexes")
        ->required();
    convert->add_option("--samples-per-shard", cv_per_shard, "Records per shard file")
        ->required();
    convert->callback([&] {
        auto rule = emlio::recordfmt::directory_label_rule(cv_input);
        auto indexes =
            emlio::recordfmt::convert_dataset(cv_input, cv_output, cv_per_shard, rule);
        uint64_t total = 0;
        for (const auto& ix : indexes) {
            total += ix.total_samples();
        }
        std::cout << "wrote " << indexes.size() << " shards (" << total << " samples) to "
                  << cv_output << "\n";
    });

    // ---- plan ----
    auto* plan_cmd =
        app.add_subcommand("plan", "Build a deterministic epoch plan for a dataset");
    std::string pl_data, pl_nodes, pl_out;
    uint32_t pl_batch = 32, pl_epochs = 1, pl_threads = 2;
    uint64_t pl_seed = 1;
    plan_cmd->add_option("--data-dir", pl_data, "Directory holding shard indexes")
        ->required();
    plan_cmd
        ->add_option("--nodes", pl_nodes,
                     "Comma-separated compute nodes, each [id@]host:port")
        ->required();
    plan_cmd->add_option("--batch-size", pl_batch, "Samples per batch");
    plan_cmd->add_option("--epochs", pl_epochs, "Epoch count");
    plan_cmd->add_option("--threads", pl_threads, "Sender workers per node");
    plan_cmd->add_option("--seed", pl_seed, "Shuffle seed");
    plan_cmd->add_option("--out", pl_out, "Plan JSON output path")->required();
    plan_cmd->callback([&] {
        auto indexes = emlio::recordfmt::load_dataset(pl_data);
        auto ep = emlio::planner::plan(indexes, parse_nodes(pl_nodes), pl_batch,
                                       pl_epochs, pl_threads, pl_seed);
        emlio::planner::save_plan(ep, pl_out);
        std::cout << "planned " << ep.epochs << " epochs over " << ep.nodes.size()
                  << " nodes, seed " << ep.seed << ", written to " << pl_out << "\n";
    });

    // ---- serve ----
    auto* serve = app.add_subcommand(
        "serve", "Stream one node's planned batches from local shards");
    std::string sv_plan, sv_node, sv_data, sv_events;
    uint32_t sv_threads = 0, sv_hwm = 16;
    int64_t sv_delay_ms = 0;
    serve->add_option("--plan", sv_plan, "Plan JSON path")->required();
    serve->add_option("--node-id", sv_node, "Target node id from the plan")->required();
    serve->add_option("--data-dir", sv_data, "Directory holding the shards")->required();
    serve->add_option("--threads", sv_threads, "Worker count (0 = the plan's value)");
    serve->add_option("--hwm", sv_hwm, "Per-stream in-flight batch window");
    serve->add_option("--one-way-delay-ms", sv_delay_ms, "Injected one-way link delay");
    serve->add_option("--events", sv_events, "Event log path");
    serve->callback([&] {
        auto ep = emlio::planner::load_plan(sv_plan);
        std::optional<emlio::events::EventLogger> logger;
        if (!sv_events.empty()) {
            logger.emplace(sv_events);
        }
        emlio::sender::SenderConfig sc;
        sc.node_id = sv_node;
        sc.data_dir = sv_data;
        sc.workers = sv_threads;
        sc.channel.hwm = sv_hwm;
        sc.channel.injected_one_way_delay = std::chrono::milliseconds(sv_delay_ms);
        sc.events = logger ? &*logger : nullptr;
        auto ss = emlio::sender::run_sender(ep, sc);
        for (const auto& e : ss.epochs) {
            std::cout << "epoch " << e.epoch << ": " << e.batches << " batches, "
                      << e.bytes << " bytes\n";
        }
        std::cout << "done in " << ss.wall_time_s << " s\n";
        if (!ss.error.empty()) {
            std::cerr << "error: " << ss.error << "\n";
            rc = 1;
        } else if (ss.aborted) {
            std::cerr << "error: send aborted\n";
            rc = 1;
        }
    });

    // ---- consume ----
    auto* consume = app.add_subcommand(
        "consume", "Receive, decode and consume one node's planned batches");
    std::string cn_listen = "127.0.0.1:0", cn_plan, cn_node, cn_events, cn_summary;
    uint32_t cn_prefetch = 2, cn_epochs = 0;
    double cn_compute = 0.0;
    consume->add_option("--listen", cn_listen, "ip:port to bind (port 0 = ephemeral)");
    consume->add_option("--plan", cn_plan, "Plan JSON path")->required();
    consume->add_option("--node-id", cn_node, "This node's id in the plan")->required();
    consume->add_option("--prefetch", cn_prefetch, "Decoded-batch queue depth");
    consume->add_option("--compute-ms", cn_compute, "Per-batch consume time");
    consume->add_option("--epochs", cn_epochs, "Epoch count (0 = the plan's value)");
    consume->add_option("--events", cn_events, "Event log path");
    consume->add_option("--summary", cn_summary, "Summary JSON output path");
    consume->callback([&] {
        auto ep = emlio::planner::load_plan(cn_plan);
        auto [ip, port] = emlio::parse_host_port(cn_listen);
        std::optional<emlio::events::EventLogger> logger;
        if (!cn_events.empty()) {
            logger.emplace(cn_events);
        }
        emlio::receiver::ReceiverConfig rcfg;
        rcfg.listen_ip = ip;
        rcfg.listen_port = port;
        rcfg.prefetch_depth = cn_prefetch;
        rcfg.expected_senders = ep.threads_per_node;
        rcfg.epochs = cn_epochs == 0 ? ep.epochs : cn_epochs;
        rcfg.compute_ms = cn_compute;
        rcfg.node_id = cn_node;
        rcfg.events = logger ? &*logger : nullptr;
        for (uint32_t e = 0; e < rcfg.epochs; ++e) {
            rcfg.expected_batches.push_back(ep.batches_for(e, cn_node));
        }
        emlio::receiver::Receiver recv(rcfg);
        std::cout << "listening on " << ip << ":" << recv.port() << std::endl;
        auto rs = recv.run([](const emlio::receiver::DecodedBatch&) {});
        nlohmann::json summary;
        summary["node_id"] = cn_node;
        summary["complete"] = rs.all_complete();
        summary["epochs"] = nlohmann::json::array();
        for (const auto& e : rs.epochs) {
            summary["epochs"].push_back({{"epoch", e.epoch},
                                         {"batches", e.batches},
                                         {"bytes", e.bytes},
                                         {"wall_time_s", e.wall_time_s},
                                         {"complete", e.complete}});
            std::cout << "epoch " << e.epoch << ": " << e.batches << " batches, "
                      << e.bytes << " bytes in " << e.wall_time_s << " s\n";
        }
        if (!cn_summary.empty()) {
            std::ofstream out(cn_summary);
            if (!out) {
                throw std::runtime_error("cannot open summary file: " + cn_summary);
            }
            out << summary.dump(2) << "\n";
        }
        if (!rs.all_complete()) {
            std::cerr << "error: run incomplete\n";
            rc = 1;
        }
    });

    // ---- monitor ----
    auto* monitor = app.add_subcommand(
        "monitor", "Sample power sources on a shared tick schedule into a line store");
    std::string mo_sources, mo_node = "node", mo_out;
    double mo_interval_ms = 100.0, mo_duration_s = 0.0;
    size_t mo_writer_batch = 64;
    monitor->add_option("--interval-ms", mo_interval_ms, "Tick interval");
    monitor
        ->add_option("--sources", mo_sources,
                     "Comma-separated synthetic:<field>:<watts> and/or rapl")
        ->required();
    monitor->add_option("--node-id", mo_node, "Node id stamped on every point");
    monitor->add_option("--out", mo_out, "Store file path")->required();
    monitor->add_option("--duration-s", mo_duration_s, "Stop after this long (0 = until Ctrl-C)");
    monitor->add_option("--writer-batch", mo_writer_batch, "Points per store write");
    monitor->callback([&] {
        if (mo_interval_ms <= 0) {
            throw std::invalid_argument("--interval-ms must be positive");
        }
        emlio::energymon::MonitorConfig mc;
        mc.interval_s = mo_interval_ms / 1000.0;
        mc.node_id = mo_node;
        mc.writer_batch = mo_writer_batch;
        mc.store_path = mo_out;
        auto mon = emlio::energymon::run_monitor(std::move(mc), parse_sources(mo_sources));
        std::signal(SIGINT, handle_sigint);
        auto t0 = std::chrono::steady_clock::now();
        while (!g_interrupted.load()) {
            if (mo_duration_s > 0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count() >= mo_duration_s) {
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        mon->stop();
        for (const auto& w : mon->warnings()) {
            std::cerr << "warning: " << w << "\n";
        }
        auto points = emlio::energymon::read_store(mo_out);
        std::cout << "wrote " << points.size() << " points to " << mo_out << "\n";
    });

    // ---- bench compare ----
    auto* bench_cmd = app.add_subcommand("bench", "Loading benchmarks");
    bench_cmd->require_subcommand(1);
    auto* compare = bench_cmd->add_subcommand(
        "compare", "Compare streamed loading against request-response across RTTs");
    emlio::bench::Workload wl;
    std::string bc_rtt = "0,10,30", bc_out, bc_plots, bc_work;
    compare->add_option("--samples", wl.num_samples, "Synthetic dataset size")->required();
    compare->add_option("--sample-bytes", wl.sample_bytes, "Bytes per sample")->required();
    compare->add_option("--batch-size", wl.batch_size, "Samples per batch");
    compare->add_option("--epochs", wl.epochs, "Epochs per run");
    compare->add_option("--rtt", bc_rtt, "Comma-separated round-trip times in ms");
    compare->add_option("--compute-ms", wl.compute_ms, "Per-batch consume time");
    compare->add_option("--threads", wl.threads, "Sender workers");
    compare->add_option("--hwm", wl.hwm, "Per-stream in-flight batch window");
    compare->add_option("--prefetch", wl.prefetch, "Decoded-batch queue depth");
    compare->add_option("--seed", wl.seed, "Dataset and shuffle seed");
    compare->add_option("--samples-per-shard", wl.samples_per_shard,
                        "Records per generated shard (0 = spread over 8 shards)");
    compare->add_option("--out", bc_out, "Report JSON output path")->required();
    compare->add_option("--plots", bc_plots, "Directory for an SVG summary plot");
    compare->add_option("--work-dir", bc_work,
                        "Scratch directory (default: <out>.work)");
    compare->callback([&] {
        wl.rtt_ms = parse_rtt_list(bc_rtt);
        std::string work = bc_work.empty() ? bc_out + ".work" : bc_work;
        auto rep = emlio::bench::run_compare(wl, work);
        emlio::bench::write_report(rep, bc_out);
        if (!bc_plots.empty()) {
            emlio::bench::write_plots(rep, bc_plots);
        }
        for (const auto& c : rep.checks) {
            std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail
                      << "\n";
        }
        std::cout << "report written to " << bc_out << "\n";
        if (!rep.pass) {
            rc = 1;
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return rc;
}
