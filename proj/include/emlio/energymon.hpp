#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace emlio::energymon {

// The three tracked energy components. Each maps to one store field and one
// bit in the field/interp masks.
enum class Field : uint8_t { Cpu = 0, Mem = 1, Gpu = 2 };

inline constexpr uint8_t field_bit(Field f) {
    return static_cast<uint8_t>(1u << static_cast<unsigned>(f));
}
inline constexpr uint8_t kAllFields =
    field_bit(Field::Cpu) | field_bit(Field::Mem) | field_bit(Field::Gpu);

// Store/report field name, e.g. "cpu_energy".
const char* field_name(Field f);
// Accepts "cpu", "cpu_pkg", "mem", "memory", "dram", "gpu".
std::optional<Field> parse_field(const std::string& name);

// A pluggable power meter. sample(interval_s) returns the joules consumed
// over one interval, or nullopt when the reading failed. Throwing marks the
// source permanently failed. sample_tick additionally passes the tick index
// so deterministic synthetic profiles can bind to the monitor's schedule;
// real meters ignore it.
class PowerSource {
  public:
    virtual ~PowerSource() = default;
    virtual Field kind() const = 0;
    virtual std::optional<double> sample(double interval_s) = 0;
    virtual std::optional<double> sample_tick(int64_t tick, double interval_s) {
        (void)tick;
        return sample(interval_s);
    }
};

// Constant electrical power in watts.
class ConstantPowerSource : public PowerSource {
  public:
    ConstantPowerSource(Field kind, double watts);
    Field kind() const override { return kind_; }
    std::optional<double> sample(double interval_s) override {
        return watts_ * interval_s;
    }

  private:
    Field kind_;
    double watts_;
};

// Piecewise-constant power profile over monitor-relative time. Each step
// holds from its start time until the next step (the last one forever).
// Sampling integrates the profile over exactly [tick*d, (tick+1)*d).
struct PowerStep {
    double t_start_s = 0.0;
    double watts = 0.0;
};

class PiecewisePowerSource : public PowerSource {
  public:
    // steps must be non-empty, sorted by t_start_s, and start at 0.
    PiecewisePowerSource(Field kind, std::vector<PowerStep> steps);
    Field kind() const override { return kind_; }
    std::optional<double> sample(double interval_s) override;
    std::optional<double> sample_tick(int64_t tick, double interval_s) override;

  private:
    double integrate(double a, double b) const;

    Field kind_;
    std::vector<PowerStep> steps_;
    int64_t calls_ = 0;
};

// Emulated GPU meter: a fixed set of devices each reporting constant power
// in milliwatts. Per tick it reports sum_i(P_i) * interval / 1000 joules.
class SyntheticGpuSource : public PowerSource {
  public:
    explicit SyntheticGpuSource(std::vector<double> device_milliwatts);
    Field kind() const override { return Field::Gpu; }
    std::optional<double> sample(double interval_s) override;

  private:
    std::vector<double> device_mw_;
};

// One aligned tuple per tick. Fields not covered by a configured source are
// absent (bit clear in field_mask, value 0). interp_mask flags present
// fields whose value was filled rather than measured.
struct EnergyPoint {
    int64_t t_ns = 0;
    std::string node_id;
    double cpu_energy = 0.0;
    double memory_energy = 0.0;
    double gpu_energy = 0.0;
    uint8_t field_mask = 0;
    uint8_t interp_mask = 0;
};

double field_value(const EnergyPoint& p, Field f);
void set_field_value(EnergyPoint& p, Field f, double v);

struct MonitorConfig {
    double interval_s = 0.1;
    std::string node_id = "node";
    size_t writer_batch = 64;
    std::string store_path;
};

struct StoreError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Streaming per-field gap filler. push() takes strictly increasing tick
// indexes; resolved (tick, value, interpolated) triples come back through
// the emit callback in tick order. Interior gaps are linear between the
// surrounding real samples, leading/trailing gaps copy the nearest real
// one, and a field with no real samples at all resolves to zeros.
class GapFiller {
  public:
    using Emit = std::function<void(int64_t tick, double value, bool interpolated)>;
    explicit GapFiller(Emit emit) : emit_(std::move(emit)) {}

    void push(int64_t tick, std::optional<double> v);
    void finish();
    bool ever_real() const { return any_real_; }

  private:
    Emit emit_;
    bool any_real_ = false;
    int64_t last_tick_ = 0;
    double last_val_ = 0.0;
    std::vector<int64_t> gap_;
};

struct FilledSeries {
    std::vector<double> values;
    std::vector<bool> interpolated;
};

// Pure form of the accumulator's gap handling, one field at a time.
FilledSeries interpolate_gaps(const std::vector<std::optional<double>>& samples,
                              std::vector<std::string>* warnings = nullptr);

// Interval sampler over a shared tick schedule. One sampling thread per
// source plus an accumulator and a batch writer; ticks are stamped
// t_k = wall0 + k*interval from a monotonic schedule, a sample finishing
// more than interval/2 past its slot is recorded as missing, and missing
// values are filled by the accumulator before points reach the store.
class Monitor {
  public:
    Monitor(MonitorConfig cfg, std::vector<std::unique_ptr<PowerSource>> sources);
    ~Monitor();

    // Idempotent; flushes and joins everything. Throws StoreError if any
    // store write failed.
    void stop();

    uint8_t field_mask() const { return field_mask_; }
    std::vector<std::string> warnings() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    uint8_t field_mask_ = 0;
};

std::unique_ptr<Monitor> run_monitor(MonitorConfig cfg,
                                     std::vector<std::unique_ptr<PowerSource>> sources);

// Store access. Lines look like
//   energy,node_id=<id> cpu_energy=<f>,...,interp_mask=<u8> <t_ns>
// with only the configured fields present.
std::string format_point(const EnergyPoint& p);
std::vector<EnergyPoint> read_store(const std::string& path);

// Per-field totals in integer nanojoules so window sums are exactly
// additive; joule views are derived.
struct EnergyTotals {
    int64_t cpu_nj = 0;
    int64_t mem_nj = 0;
    int64_t gpu_nj = 0;
    uint8_t field_mask = 0;

    int64_t total_nj() const { return cpu_nj + mem_nj + gpu_nj; }
    double cpu_j() const { return static_cast<double>(cpu_nj) * 1e-9; }
    double mem_j() const { return static_cast<double>(mem_nj) * 1e-9; }
    double gpu_j() const { return static_cast<double>(gpu_nj) * 1e-9; }
    double total_j() const { return static_cast<double>(total_nj()) * 1e-9; }
};

// Sums fields over ticks with t_start <= t_k < t_end for one node; the
// half-open window makes adjacent windows partition exactly.
EnergyTotals query_energy(const std::vector<EnergyPoint>& points,
                          const std::string& node_id, int64_t t_start_ns,
                          int64_t t_end_ns);
EnergyTotals query_energy(const std::string& store_path, const std::string& node_id,
                          int64_t t_start_ns, int64_t t_end_ns);

// Real meters behind the same contract: Linux powercap RAPL zones
// (package-* summed as cpu, dram as mem). Empty when unsupported.
std::vector<std::unique_ptr<PowerSource>> os_adapters();

}  // namespace emlio::energymon
