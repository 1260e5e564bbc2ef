#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "emlio/bench.hpp"
#include "emlio/crc32c.hpp"
#include "emlio/energymon.hpp"
#include "emlio/payload.hpp"
#include "emlio/planner.hpp"
#include "emlio/receiver.hpp"
#include "emlio/recordfmt.hpp"
#include "emlio/transport.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace emlio;

namespace {

// Prints exactly one verdict line per criterion. The body runs REQUIRE-style
// assertions; if one throws, the destructor reports FAIL on the way out.
// done() optionally enforces a wall-clock budget before declaring PASS.
struct Criterion {
    int index;
    const char* name;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    bool passed = false;

    Criterion(int i, const char* n) : index(i), name(n) {}

    double elapsed_s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    }

    void done(double budget_s = 0.0) {
        double el = elapsed_s();
        if (budget_s > 0.0) {
            REQUIRE_MESSAGE(el < budget_s, "criterion " << index << " took " << el
                                                        << " s, budget " << budget_s
                                                        << " s");
        }
        passed = true;
        std::printf("ACCEPTANCE CRITERION %d (%s): PASS  [%.1f s]\n", index, name, el);
        std::fflush(stdout);
    }

    ~Criterion() {
        if (!passed) {
            std::printf("ACCEPTANCE CRITERION %d (%s): FAIL  [%.1f s]\n", index, name,
                        elapsed_s());
            std::fflush(stdout);
        }
    }
};

// ---- shared RTT sweep (criteria 1, 2, 8) ----------------------------------
//
// One synthetic dataset (1000 samples x 64 KiB, 8 shards), then repeated
// passes of {pipelined, baseline} x rtt {0, 10, 30} ms with B=32, E=1,
// 2 ms compute. Per-point medians absorb scheduler noise on a single core.

constexpr std::array<double, 3> kSweepRtts{0.0, 10.0, 30.0};
constexpr int kSweepReps = 7;

struct Sweep {
    std::unique_ptr<TempDir> tmp;
    bench::Workload wl;
    // runs[mode][rtt index] -> one outcome per repetition
    std::map<std::string, std::array<std::vector<bench::RunOutcome>, 3>> runs;

    static double median(std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    }

    double median_time(const std::string& mode, size_t rtt_ix) const {
        std::vector<double> v;
        for (const auto& r : runs.at(mode)[rtt_ix]) {
            v.push_back(r.mean_epoch_time_s());
        }
        return median(std::move(v));
    }

    // Scheduler noise on a single shared core is strictly additive, so the
    // fastest repetition is the cleanest estimate of the deterministic epoch
    // time; any real delay dependence is paid in every repetition and
    // survives the minimum.
    double min_time(const std::string& mode, size_t rtt_ix) const {
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& r : runs.at(mode)[rtt_ix]) {
            lo = std::min(lo, r.mean_epoch_time_s());
        }
        return lo;
    }

    double median_io_share(const std::string& mode, size_t rtt_ix) const {
        std::vector<double> v;
        for (const auto& r : runs.at(mode)[rtt_ix]) {
            v.push_back(r.io_energy_share());
        }
        return median(std::move(v));
    }
};

const Sweep& sweep() {
    static Sweep s = [] {
        Sweep sw;
        sw.tmp = std::make_unique<TempDir>("acceptance_sweep");
        sw.wl.num_samples = 1000;
        sw.wl.sample_bytes = 64 * 1024;
        sw.wl.batch_size = 32;
        sw.wl.epochs = 1;
        sw.wl.compute_ms = 2.0;
        sw.wl.threads = 2;
        sw.wl.hwm = 16;
        sw.wl.prefetch = 4;
        sw.wl.seed = 42;
        const std::string data = (sw.tmp->path / "data").string();
        bench::gen_synthetic(sw.wl.num_samples, sw.wl.sample_bytes, data, sw.wl.seed);
        // One discarded run warms the page cache and thread pools so the
        // measured repetitions start from a common state.
        bench::run_pipelined(sw.wl, 0.0, data, (sw.tmp->path / "warm").string());
        int tag = 0;
        for (int rep = 0; rep < kSweepReps; ++rep) {
            for (size_t i = 0; i < kSweepRtts.size(); ++i) {
                auto dir = [&](const char* m) {
                    return (sw.tmp->path / (std::string(m) + std::to_string(tag++)))
                        .string();
                };
                sw.runs["pipelined"][i].push_back(
                    bench::run_pipelined(sw.wl, kSweepRtts[i], data, dir("p")));
                sw.runs["baseline"][i].push_back(
                    bench::run_baseline(sw.wl, kSweepRtts[i], data, dir("b")));
            }
        }
        return sw;
    }();
    return s;
}

int64_t conservation_gap_nj(const bench::EpochReport& er) {
    return er.total.energy.total_nj() -
           (er.read_deliver.energy.total_nj() + er.consume.energy.total_nj() +
            er.tail.energy.total_nj());
}

// ---- reference planner (criterion 3) ---------------------------------------
//
// Written straight from the scheduling rules, sharing no code with the
// library: shuffle the shard list per epoch with mt19937_64(seed xor epoch)
// Fisher-Yates, deal shards round-robin to nodes in list order, split each
// node's list over T workers round-robin, cut each shard into ceil(entries/B)
// contiguous ranges, and number batches in dispatch order per (epoch, node).

std::vector<recordfmt::ShardIndex> fake_indexes(const std::vector<uint64_t>& sizes) {
    std::vector<recordfmt::ShardIndex> out;
    for (size_t i = 0; i < sizes.size(); ++i) {
        recordfmt::ShardIndex ix;
        ix.shard_id = static_cast<uint32_t>(i);
        ix.shard_file = "shard_" + std::to_string(i) + ".tfrecord";
        uint64_t offset = 0;
        for (uint64_t r = 0; r < sizes[i]; ++r) {
            uint64_t size = 10 + (r % 7);
            ix.entries.push_back({offset, size, static_cast<uint32_t>(r % 5)});
            offset += recordfmt::kRecordOverhead + size;
        }
        out.push_back(std::move(ix));
    }
    return out;
}

std::vector<planner::NodeSpec> fake_nodes(size_t n) {
    std::vector<planner::NodeSpec> nodes;
    for (size_t i = 0; i < n; ++i) {
        nodes.push_back({"node" + std::to_string(i), "127.0.0.1",
                         static_cast<uint16_t>(9000 + i)});
    }
    return nodes;
}

planner::EpochPlan reference_plan(const std::vector<recordfmt::ShardIndex>& indexes,
                                  const std::vector<planner::NodeSpec>& nodes,
                                  uint32_t B, uint32_t E, uint32_t T, uint64_t seed) {
    planner::EpochPlan p;
    p.epochs = E;
    p.batch_size = B;
    p.threads_per_node = T;
    p.seed = seed;
    p.nodes = nodes;

    std::map<uint32_t, const recordfmt::ShardIndex*> by_id;
    std::vector<uint32_t> ids;
    for (const auto& ix : indexes) {
        by_id[ix.shard_id] = &ix;
        ids.push_back(ix.shard_id);
    }

    for (uint32_t e = 0; e < E; ++e) {
        std::vector<uint32_t> order = ids;
        std::mt19937_64 rng(seed ^ static_cast<uint64_t>(e));
        for (size_t i = order.size(); i-- > 1;) {
            size_t j = static_cast<size_t>(rng() % (i + 1));
            std::swap(order[i], order[j]);
        }

        std::vector<std::vector<uint32_t>> per_node(nodes.size());
        for (size_t i = 0; i < order.size(); ++i) {
            per_node[i % nodes.size()].push_back(order[i]);
        }
        for (size_t n = 0; n < nodes.size(); ++n) {
            std::vector<std::vector<uint32_t>> per_worker(T);
            for (size_t i = 0; i < per_node[n].size(); ++i) {
                per_worker[i % T].push_back(per_node[n][i]);
            }
            uint32_t batch_index = 0;
            for (uint32_t w = 0; w < T; ++w) {
                planner::Assignment a;
                a.epoch = e;
                a.node_id = nodes[n].node_id;
                a.worker = w;
                for (uint32_t shard : per_worker[w]) {
                    uint64_t total = by_id.at(shard)->entries.size();
                    for (uint64_t first = 0; first < total; first += B) {
                        planner::BatchRange r;
                        r.shard_id = shard;
                        r.first_entry = static_cast<uint32_t>(first);
                        r.count =
                            static_cast<uint32_t>(std::min<uint64_t>(B, total - first));
                        r.epoch = e;
                        r.batch_index = batch_index++;
                        a.ranges.push_back(r);
                    }
                }
                p.assignments.push_back(std::move(a));
            }
        }
    }
    return p;
}

struct RandomConfig {
    std::vector<uint64_t> shard_sizes;
    size_t num_nodes;
    uint32_t B, E, T;
    uint64_t seed;
};

RandomConfig random_config(std::mt19937_64& rng) {
    RandomConfig c;
    size_t shards = 1 + rng() % 50;
    for (size_t i = 0; i < shards; ++i) {
        c.shard_sizes.push_back(1 + rng() % 200);
    }
    c.num_nodes = 1 + rng() % 8;
    c.B = 1 + static_cast<uint32_t>(rng() % 64);
    c.E = 1 + static_cast<uint32_t>(rng() % 3);
    c.T = 1 + static_cast<uint32_t>(rng() % 4);
    c.seed = rng();
    return c;
}

// ---- process memory (criterion 4) ------------------------------------------

long vm_rss_kb() {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("VmRSS:", 0) == 0) {
            return std::stol(line.substr(6));
        }
    }
    return -1;
}

// ---- independent record-format oracles (criterion 7) -----------------------

// Bit-at-a-time CRC-32C (reflected, poly 0x1EDC6F41); shares no code or
// tables with the library implementation.
uint32_t oracle_crc32c(const uint8_t* data, size_t n) {
    uint32_t crc = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) {
        crc ^= data[i];
        for (int b = 0; b < 8; ++b) {
            crc = (crc >> 1) ^ (0x82F63B78u & (0u - (crc & 1u)));
        }
    }
    return ~crc;
}

uint32_t oracle_mask(uint32_t crc) {
    return ((crc >> 15) | (crc << 17)) + 0xa282ead8u;
}

uint64_t rd_u64le(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
        v = v << 8 | p[i];
    }
    return v;
}

uint32_t rd_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

// Parses a shard file with nothing but the documented layout and the oracle
// CRC, returning the record payloads in file order.
std::vector<std::vector<uint8_t>> oracle_read_shard(const fs::path& p) {
    auto bytes = slurp_file(p);
    std::vector<std::vector<uint8_t>> payloads;
    size_t pos = 0;
    while (pos < bytes.size()) {
        REQUIRE(pos + 12 <= bytes.size());
        uint64_t len = rd_u64le(&bytes[pos]);
        REQUIRE(oracle_mask(oracle_crc32c(&bytes[pos], 8)) == rd_u32le(&bytes[pos + 8]));
        REQUIRE(pos + 12 + len + 4 <= bytes.size());
        const uint8_t* payload = &bytes[pos + 12];
        REQUIRE(oracle_mask(oracle_crc32c(payload, len)) ==
                rd_u32le(&bytes[pos + 12 + len]));
        payloads.emplace_back(payload, payload + len);
        pos += 16 + len;
    }
    REQUIRE(pos == bytes.size());
    return payloads;
}

std::vector<recordfmt::Sample> random_samples(std::mt19937_64& rng, size_t n,
                                              size_t max_bytes) {
    std::vector<recordfmt::Sample> samples(n);
    size_t k = 0;
    for (auto& s : samples) {
        // Mostly small records with a sprinkling of 64 KiB outliers.
        size_t len = (++k % 500 == 0) ? 65536 : rng() % (max_bytes + 1);
        s.data.resize(len);
        for (auto& b : s.data) {
            b = static_cast<uint8_t>(rng());
        }
        s.label = static_cast<uint32_t>(rng() % 1000);
    }
    return samples;
}

const std::optional<double> M = std::nullopt;

energymon::FilledSeries fill(const std::vector<std::optional<double>>& samples,
                             std::vector<std::string>* warnings = nullptr) {
    return energymon::interpolate_gaps(samples, warnings);
}

}  // namespace

TEST_CASE("criterion 1: pipelined epoch time is invariant to link delay") {
    Criterion c(1, "pipelined-rtt-invariance");
    const Sweep& s = sweep();

    std::vector<double> times;
    for (size_t i = 0; i < kSweepRtts.size(); ++i) {
        times.push_back(s.min_time("pipelined", i));
    }
    double lo = *std::min_element(times.begin(), times.end());
    double hi = *std::max_element(times.begin(), times.end());
    REQUIRE(lo > 0.0);
    double ratio = hi / lo;
    std::printf("  pipelined epoch times at rtt 0/10/30 ms: %.4f/%.4f/%.4f s "
                "(ratio %.3f, limit 1.10)\n",
                times[0], times[1], times[2], ratio);
    REQUIRE_MESSAGE(ratio <= 1.10, "epoch-time ratio across rtt 0/10/30 ms was "
                                       << ratio << " (times " << times[0] << "/"
                                       << times[1] << "/" << times[2] << " s)");
    c.done(120.0);
}

TEST_CASE("criterion 2: per-batch round trips degrade the synchronous loader") {
    Criterion c(2, "baseline-round-trip-penalty");
    const Sweep& s = sweep();

    uint64_t n_batches = s.runs.at("baseline")[0][0].batches_per_epoch();
    REQUIRE(n_batches == 32);

    double b0 = s.median_time("baseline", 0);
    double b30 = s.median_time("baseline", 2);
    double p30 = s.median_time("pipelined", 2);

    // Every batch pays the round trip: the 30 ms point must sit at least
    // 0.8 * N * rtt above the 0 ms point.
    double floor_s = 0.8 * static_cast<double>(n_batches) * 0.030;
    REQUIRE_MESSAGE(b30 - b0 >= floor_s, "baseline slowdown " << b30 - b0
                                                              << " s, need >= "
                                                              << floor_s << " s");

    REQUIRE(p30 > 0.0);
    double speedup = b30 / p30;
    std::printf("  baseline epoch time 0 -> 30 ms: %.4f -> %.4f s (floor +%.3f s); "
                "speedup at 30 ms: %.1fx (limit 5x)\n",
                b0, b30, floor_s, speedup);
    REQUIRE_MESSAGE(speedup >= 5.0, "pipelined/baseline speedup at 30 ms was "
                                        << speedup);
    c.done(180.0);
}

TEST_CASE("criterion 3: every plan covers each sample exactly once") {
    Criterion c(3, "exactly-once-planning");

    std::mt19937_64 rng(20260816);
    for (int t = 0; t < 1000; ++t) {
        auto cfg = random_config(rng);
        auto indexes = fake_indexes(cfg.shard_sizes);
        auto nodes = fake_nodes(cfg.num_nodes);
        auto p = planner::plan(indexes, nodes, cfg.B, cfg.E, cfg.T, cfg.seed);
        auto cov = planner::plan_coverage(p, indexes);
        REQUIRE_MESSAGE(cov.missing.empty(), "config " << t << " left "
                                                       << cov.missing.size()
                                                       << " slots uncovered");
        REQUIRE_MESSAGE(cov.duplicated.empty(), "config " << t << " duplicated "
                                                          << cov.duplicated.size()
                                                          << " slots");
    }

    std::mt19937_64 rng2(424243);
    for (int t = 0; t < 100; ++t) {
        auto cfg = random_config(rng2);
        auto indexes = fake_indexes(cfg.shard_sizes);
        auto nodes = fake_nodes(cfg.num_nodes);
        auto got = planner::serialize_plan(
            planner::plan(indexes, nodes, cfg.B, cfg.E, cfg.T, cfg.seed));
        auto want = planner::serialize_plan(
            reference_plan(indexes, nodes, cfg.B, cfg.E, cfg.T, cfg.seed));
        REQUIRE_MESSAGE(got == want, "plan diverged from the reference on config "
                                         << t);
    }
    c.done(30.0);
}

TEST_CASE("criterion 4: a paused consumer pins the window and queue exactly") {
    Criterion c(4, "backpressure-bound");

    const size_t kPayloadBytes = 2 * 1024 * 1024;
    const uint32_t kHwm = 16;
    const uint32_t kQ = 4;

    receiver::ReceiverConfig rc;
    rc.prefetch_depth = kQ;
    rc.expected_senders = 2;
    rc.epochs = 1;
    rc.node_id = "acc";
    rc.channel.hwm = kHwm;
    auto provider = std::make_unique<receiver::BatchProvider>(rc);

    recordfmt::Sample big;
    big.data.resize(kPayloadBytes);
    std::mt19937_64 rng(5);
    for (auto& b : big.data) {
        b = static_cast<uint8_t>(rng());
    }
    big.label = 1;

    long rss_before = vm_rss_kb();
    REQUIRE(rss_before > 0);

    planner::NodeSpec remote{"acc", "127.0.0.1", provider->port()};
    transport::ChannelConfig ch;
    ch.hwm = kHwm;

    std::array<std::unique_ptr<transport::PushStream>, 2> streams;
    for (size_t i = 0; i < streams.size(); ++i) {
        streams[i] = std::make_unique<transport::PushStream>(
            remote, ch, "src" + std::to_string(i));
    }

    // Push until the credit window stays full for a whole timeout. Nothing
    // consumes, so each stream must wedge at exactly hwm unconsumed payloads
    // and the provider at exactly Q decoded batches.
    std::array<std::atomic<uint32_t>, 2> pushed{};
    std::vector<std::thread> pushers;
    for (size_t i = 0; i < streams.size(); ++i) {
        pushers.emplace_back([&, i] {
            for (uint32_t b = 0;; ++b) {
                transport::Frame f;
                f.type = transport::FrameType::Batch;
                f.payload = encode_batch({big}, 0, static_cast<uint32_t>(i), b);
                if (!streams[i]->try_push(std::move(f),
                                          std::chrono::milliseconds(2000))) {
                    break;
                }
                pushed[i].fetch_add(1);
            }
        });
    }
    for (auto& t : pushers) {
        t.join();
    }

    CHECK(streams[0]->in_flight() == kHwm);
    CHECK(streams[1]->in_flight() == kHwm);
    CHECK(provider->decoded_available() == kQ);
    // Q recv slots were granted across the two streams; everything else is
    // stuck in the windows.
    CHECK(pushed[0].load() + pushed[1].load() == 2 * kHwm + kQ);

    // Still pinned after a grace period: no hidden drain path.
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    CHECK(streams[0]->in_flight() == kHwm);
    CHECK(streams[1]->in_flight() == kHwm);
    CHECK(provider->decoded_available() == kQ);

    transport::Frame extra;
    extra.type = transport::FrameType::Batch;
    extra.payload = encode_batch({big}, 0, 9, 9);
    CHECK_FALSE(streams[0]->try_push(std::move(extra), std::chrono::milliseconds(300)));

    long rss_after = vm_rss_kb();
    REQUIRE(rss_after > 0);
    long growth_kb = rss_after - rss_before;
    // Buffered payloads are bounded by (hwm + Q) per stream; allow a fixed
    // allocator/thread overhead on top.
    long budget_kb = 2 * (kHwm + kQ) * static_cast<long>(kPayloadBytes / 1024) +
                     64 * 1024;
    CHECK_MESSAGE(growth_kb <= budget_kb, "rss grew " << growth_kb << " KiB, budget "
                                                      << budget_kb << " KiB");

    // Tear down the consumer side first so the blocked streams unwind fast.
    provider->stop();
    provider.reset();
    streams[0].reset();
    streams[1].reset();
    c.done(10.0);
}

TEST_CASE("criterion 5: measured energy matches the analytic integral") {
    Criterion c(5, "energy-integral-oracle");

    TempDir tmp("acceptance_energy");
    const std::string store = (tmp.path / "energy.log").string();

    energymon::MonitorConfig mc;
    mc.interval_s = 0.1;
    mc.node_id = "acc";
    mc.writer_batch = 8;
    mc.store_path = store;
    std::vector<std::unique_ptr<energymon::PowerSource>> sources;
    sources.push_back(std::make_unique<energymon::PiecewisePowerSource>(
        energymon::Field::Cpu,
        std::vector<energymon::PowerStep>{{0.0, 50.0}, {5.0, 150.0}}));
    {
        auto mon = energymon::run_monitor(mc, std::move(sources));
        std::this_thread::sleep_for(std::chrono::milliseconds(10250));
        mon->stop();
    }

    auto points = energymon::read_store(store);
    REQUIRE(points.size() >= 101);
    const int64_t t0 = points[0].t_ns;
    const int64_t tick_ns = 100'000'000;

    // Ticks are stamped t0 + k * interval with integer arithmetic.
    for (size_t k = 1; k < points.size(); ++k) {
        REQUIRE(points[k].t_ns - points[k - 1].t_ns == tick_ns);
    }

    // 5 s at 50 W plus 5 s at 150 W integrates to 1000 J over the first
    // 100 ticks; allow 2% plus one tick at the higher power.
    auto totals = energymon::query_energy(points, "acc", t0, t0 + 100 * tick_ns);
    double measured_j = totals.cpu_j();
    double tol_j = 0.02 * 1000.0 + 15.0;
    CHECK_MESSAGE(std::abs(measured_j - 1000.0) <= tol_j,
                  "integral " << measured_j << " J vs analytic 1000 J");

    // Adjacent half-open windows partition the total exactly, for both
    // tick-aligned and unaligned cuts.
    const int64_t t_end = points.back().t_ns + tick_ns;
    for (int64_t cut : {t0 + 37 * tick_ns, t0 + 37 * tick_ns + 12345678}) {
        auto left = energymon::query_energy(points, "acc", t0, cut);
        auto right = energymon::query_energy(points, "acc", cut, t_end);
        auto whole = energymon::query_energy(points, "acc", t0, t_end);
        REQUIRE(left.cpu_nj + right.cpu_nj == whole.cpu_nj);
    }

    // Gap-filling unit cases are exact.
    auto mid = fill({1.0, M, 3.0});
    REQUIRE(mid.values == std::vector<double>{1.0, 2.0, 3.0});
    REQUIRE(mid.interpolated == std::vector<bool>{false, true, false});
    auto dbl = fill({0.0, M, M, 3.0});
    REQUIRE(dbl.values == std::vector<double>{0.0, 1.0, 2.0, 3.0});
    auto trail = fill({1.0, M});
    REQUIRE(trail.values == std::vector<double>{1.0, 1.0});
    REQUIRE(trail.interpolated == std::vector<bool>{false, true});

    c.done(20.0);
}

TEST_CASE("criterion 6: per-tick gpu energy is the exact power sum") {
    Criterion c(6, "gpu-tick-energy");

    // Two devices at 100000 mW over a 0.1 s tick: (100000 + 100000) * 0.1
    // / 1000 = 20 J, exact in double arithmetic.
    energymon::SyntheticGpuSource gpu({100000.0, 100000.0});
    auto one = gpu.sample(0.1);
    REQUIRE(one.has_value());
    REQUIRE(*one == 20.0);

    // The same value must survive the monitor, the store text, and the
    // query, exactly. Interpolated points lerp between equal endpoints, so
    // every point is exactly 20 J regardless of scheduling.
    TempDir tmp("acceptance_gpu");
    const std::string store = (tmp.path / "energy.log").string();
    energymon::MonitorConfig mc;
    mc.interval_s = 0.1;
    mc.node_id = "acc";
    mc.writer_batch = 4;
    mc.store_path = store;
    std::vector<std::unique_ptr<energymon::PowerSource>> sources;
    sources.push_back(
        std::make_unique<energymon::SyntheticGpuSource>(
            std::vector<double>{100000.0, 100000.0}));
    {
        auto mon = energymon::run_monitor(mc, std::move(sources));
        std::this_thread::sleep_for(std::chrono::milliseconds(1250));
        mon->stop();
    }
    auto points = energymon::read_store(store);
    REQUIRE(points.size() >= 10);
    for (const auto& p : points) {
        REQUIRE(p.gpu_energy == 20.0);
    }
    auto totals = energymon::query_energy(points, "acc", points.front().t_ns,
                                          points.back().t_ns + 100'000'000);
    REQUIRE(totals.gpu_nj ==
            static_cast<int64_t>(points.size()) * 20'000'000'000LL);

    c.done();
}

TEST_CASE("criterion 7: the record format survives round trips and rejects corruption") {
    Criterion c(7, "format-fidelity");

    TempDir tmp("acceptance_format");

    // CRC-32C agrees with the bit-at-a-time oracle, including the standard
    // check value.
    const uint8_t check[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    REQUIRE(oracle_crc32c(check, 9) == 0xE3069283u);
    REQUIRE(crc32c(check, 9) == 0xE3069283u);
    std::mt19937_64 crng(99);
    for (int i = 0; i < 200; ++i) {
        std::vector<uint8_t> buf(crng() % 512);
        for (auto& b : buf) {
            b = static_cast<uint8_t>(crng());
        }
        REQUIRE(crc32c(buf.data(), buf.size()) ==
                oracle_crc32c(buf.data(), buf.size()));
    }

    // 10^4 random records round-trip through shard files.
    std::mt19937_64 rng(20240816);
    uint64_t total_records = 0;
    for (uint32_t shard = 0; shard < 4; ++shard) {
        auto samples = random_samples(rng, 2500, 2048);
        total_records += samples.size();
        auto index = recordfmt::write_shard(samples, shard, tmp.path);
        REQUIRE(index.entries.size() == samples.size());
        auto back = recordfmt::read_range(tmp.path / index.shard_file,
                                          std::span(index.entries));
        REQUIRE(back == samples);
        if (shard == 0) {
            // Independent cross-reader: parse the raw bytes with nothing but
            // the documented framing and the oracle CRC.
            auto payloads = oracle_read_shard(tmp.path / index.shard_file);
            REQUIRE(payloads.size() == samples.size());
            for (size_t i = 0; i < samples.size(); ++i) {
                REQUIRE(payloads[i] == samples[i].data);
            }
        }
    }
    REQUIRE(total_records == 10000);

    // Batch payloads round-trip.
    for (int i = 0; i < 200; ++i) {
        auto samples = random_samples(rng, 1 + rng() % 8, 256);
        uint32_t epoch = static_cast<uint32_t>(rng() % 100);
        uint32_t shard = static_cast<uint32_t>(rng() % 100);
        uint32_t batch = static_cast<uint32_t>(rng() % 100);
        auto decoded = decode_batch(encode_batch(samples, epoch, shard, batch));
        REQUIRE(decoded.header.epoch == epoch);
        REQUIRE(decoded.header.shard_id == shard);
        REQUIRE(decoded.header.batch_index == batch);
        REQUIRE(decoded.records == samples);
    }

    // Every single-bit mutation anywhere in a shard file is detected when
    // the damaged record is read: 1000 out of 1000.
    auto victims = random_samples(rng, 50, 200);
    auto vindex = recordfmt::write_shard(victims, 77, tmp.path);
    const fs::path vpath = tmp.path / vindex.shard_file;
    const auto pristine = slurp_file(vpath);
    int detected = 0;
    for (int i = 0; i < 1000; ++i) {
        auto bytes = pristine;
        size_t bit = rng() % (bytes.size() * 8);
        bytes[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
        spill_file(vpath, bytes);

        size_t byte_pos = bit / 8;
        size_t victim = 0;
        for (size_t e = 0; e < vindex.entries.size(); ++e) {
            const auto& ent = vindex.entries[e];
            if (byte_pos >= ent.offset &&
                byte_pos < ent.offset + recordfmt::kRecordOverhead + ent.size) {
                victim = e;
                break;
            }
        }
        try {
            recordfmt::read_range(vpath, std::span(&vindex.entries[victim], 1));
        } catch (const recordfmt::CorruptRecordError&) {
            ++detected;
        }
    }
    spill_file(vpath, pristine);
    REQUIRE(detected == 1000);

    c.done(30.0);
}

TEST_CASE("criterion 8: waiting-stage energy share tracks the link delay") {
    Criterion c(8, "stage-share-trend");
    const Sweep& s = sweep();

    // Stage energies partition the epoch total exactly, on every run.
    for (const auto& [mode, by_rtt] : s.runs) {
        for (const auto& outcomes : by_rtt) {
            for (const auto& run : outcomes) {
                for (const auto& er : run.epochs) {
                    REQUIRE(conservation_gap_nj(er) == 0);
                }
            }
        }
    }

    // The synchronous loader spends a growing energy share waiting as the
    // round trip lengthens; the pipelined loader's share stays flat.
    double b0 = s.median_io_share("baseline", 0);
    double b10 = s.median_io_share("baseline", 1);
    double b30 = s.median_io_share("baseline", 2);
    REQUIRE_MESSAGE(b0 < b10, "baseline io share at 0/10 ms: " << b0 << " vs " << b10);
    REQUIRE_MESSAGE(b10 < b30, "baseline io share at 10/30 ms: " << b10 << " vs "
                                                                 << b30);

    std::vector<double> pshares;
    for (size_t i = 0; i < kSweepRtts.size(); ++i) {
        pshares.push_back(s.median_io_share("pipelined", i));
    }
    double spread = *std::max_element(pshares.begin(), pshares.end()) -
                    *std::min_element(pshares.begin(), pshares.end());
    std::printf("  io energy share, baseline: %.3f/%.3f/%.3f; pipelined: "
                "%.3f/%.3f/%.3f (spread %.3f, limit 0.10)\n",
                b0, b10, b30, pshares[0], pshares[1], pshares[2], spread);
    REQUIRE_MESSAGE(spread <= 0.10, "pipelined io share spread was "
                                        << spread << " (" << pshares[0] << "/"
                                        << pshares[1] << "/" << pshares[2] << ")");

    c.done();
}
