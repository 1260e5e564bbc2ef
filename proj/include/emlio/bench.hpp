#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "emlio/energymon.hpp"
#include "emlio/recordfmt.hpp"

namespace emlio::bench {

struct Workload {
    uint64_t num_samples = 0;
    uint64_t sample_bytes = 0;
    uint32_t batch_size = 32;
    uint32_t epochs = 1;
    std::vector<double> rtt_ms{0.0};
    double compute_ms = 0.0;
    uint32_t threads = 2;
    uint32_t hwm = 16;
    uint32_t prefetch = 4;
    uint64_t seed = 1;
    uint64_t samples_per_shard = 0;  // 0 picks a shard count of 8
};

// Deterministic synthetic dataset: mt19937_64(seed) bytes, labels cycling
// 0..999, written as shards + indexes under out_dir.
std::vector<recordfmt::ShardIndex> gen_synthetic(uint64_t num_samples,
                                                 uint64_t sample_bytes,
                                                 const std::string& out_dir,
                                                 uint64_t seed,
                                                 uint64_t samples_per_shard = 0);

struct ReportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StageReport {
    double seconds = 0.0;
    energymon::EnergyTotals energy;
};

// Per-epoch join of the event log with the energy store. Each batch_recv
// stamp ends that batch's compute; the span back to the previous one splits
// at (recv - compute_ms) into waiting-for-data vs computing. The three
// stage windows partition [epoch_start, epoch_end) exactly, so their
// nanojoule totals sum to the whole-epoch total exactly.
struct EpochReport {
    uint32_t epoch = 0;
    double epoch_time_s = 0.0;
    uint64_t batches = 0;
    uint64_t bytes = 0;  // filled by the orchestrator
    StageReport read_deliver;  // waiting for batch delivery
    StageReport consume;       // the simulated training step
    StageReport tail;          // after the last batch, until epoch end
    StageReport total;
    double io_time_share = 0.0;
    double io_energy_share = 0.0;
};

std::vector<EpochReport> make_report(const std::string& events_path,
                                     const std::string& energy_path,
                                     const std::string& node_id,
                                     double compute_ms);

struct RunOutcome {
    std::string mode;
    double rtt_ms = 0.0;
    std::string node_id;
    std::vector<EpochReport> epochs;
    std::vector<std::string> warnings;

    double mean_epoch_time_s() const;
    uint64_t batches_per_epoch() const;
    // Energy-weighted across epochs.
    double io_energy_share() const;
};

// Full streaming path: plan -> sender workers with per-stream backpressure
// -> receiver, with rtt/2 injected on each direction. Loads the dataset in
// data_dir; logs and the energy store land in run_dir.
RunOutcome run_pipelined(const Workload& wl, double rtt_ms,
                         const std::string& data_dir, const std::string& run_dir);

// Synchronous request-response loader: one REQUEST per batch, the client
// waits for the BATCH reply before the next request, so every batch pays a
// full round trip.
RunOutcome run_baseline(const Workload& wl, double rtt_ms,
                        const std::string& data_dir, const std::string& run_dir);

// num_nodes receivers, each fed by two sender instances splitting the
// node's worker streams: half at zero delay (local share), half at rtt/2
// (remote share).
std::vector<RunOutcome> run_sharded(const Workload& wl, double rtt_ms,
                                    uint32_t num_nodes,
                                    const std::string& data_dir,
                                    const std::string& run_dir);

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct CompareReport {
    Workload workload;
    std::vector<RunOutcome> runs;
    std::vector<CheckResult> checks;
    bool pass = true;
};

// Runs pipelined and baseline over the RTT sweep (one repetition per
// point) and evaluates the trend checks.
CompareReport run_compare(const Workload& wl, const std::string& work_dir);

std::string report_to_json(const CompareReport& report);
void write_report(const CompareReport& report, const std::string& path);
// Self-contained SVG: stacked stage-energy bars per (mode, rtt) plus an
// epoch-runtime line.
void write_plots(const CompareReport& report, const std::string& dir);

}  // namespace emlio::bench
