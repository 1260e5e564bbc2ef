#include "emlio/energymon.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include "emlio/common.hpp"
#include "emlio/queue.hpp"

namespace emlio::energymon {

const char* field_name(Field f) {
    switch (f) {
        case Field::Cpu:
            return "cpu_energy";
        case Field::Mem:
            return "memory_energy";
        case Field::Gpu:
            return "gpu_energy";
    }
    return "unknown";
}

std::optional<Field> parse_field(const std::string& name) {
    std::string s;
    s.reserve(name.size());
    for (char c : name) {
        s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (s == "cpu" || s == "cpu_pkg" || s == "package") {
        return Field::Cpu;
    }
    if (s == "mem" || s == "memory" || s == "dram" || s == "ram") {
        return Field::Mem;
    }
    if (s == "gpu") {
        return Field::Gpu;
    }
    return std::nullopt;
}

double field_value(const EnergyPoint& p, Field f) {
    switch (f) {
        case Field::Cpu:
            return p.cpu_energy;
        case Field::Mem:
            return p.memory_energy;
        case Field::Gpu:
            return p.gpu_energy;
    }
    return 0.0;
}

void set_field_value(EnergyPoint& p, Field f, double v) {
    switch (f) {
        case Field::Cpu:
            p.cpu_energy = v;
            break;
        case Field::Mem:
            p.memory_energy = v;
            break;
        case Field::Gpu:
            p.gpu_energy = v;
            break;
    }
}

ConstantPowerSource::ConstantPowerSource(Field kind, double watts)
    : kind_(kind), watts_(watts) {
    if (!std::isfinite(watts) || watts < 0) {
        throw std::invalid_argument("power must be finite and >= 0");
    }
}

PiecewisePowerSource::PiecewisePowerSource(Field kind, std::vector<PowerStep> steps)
    : kind_(kind), steps_(std::move(steps)) {
    if (steps_.empty()) {
        throw std::invalid_argument("power profile needs at least one step");
    }
    if (steps_.front().t_start_s != 0.0) {
        throw std::invalid_argument("power profile must start at t=0");
    }
    for (size_t i = 0; i < steps_.size(); ++i) {
        if (!std::isfinite(steps_[i].watts) || steps_[i].watts < 0) {
            throw std::invalid_argument("power must be finite and >= 0");
        }
        if (i > 0 && steps_[i].t_start_s <= steps_[i - 1].t_start_s) {
            throw std::invalid_argument("power profile steps must be increasing");
        }
    }
}

double PiecewisePowerSource::integrate(double a, double b) const {
    double e = 0.0;
    for (size_t i = 0; i < steps_.size(); ++i) {
        double seg_start = steps_[i].t_start_s;
        double seg_end = i + 1 < steps_.size() ? steps_[i + 1].t_start_s
                                               : std::numeric_limits<double>::infinity();
        double lo = std::max(a, seg_start);
        double hi = std::min(b, seg_end);
        if (hi > lo) {
            e += steps_[i].watts * (hi - lo);
        }
    }
    return e;
}

std::optional<double> PiecewisePowerSource::sample(double interval_s) {
    double a = static_cast<double>(calls_) * interval_s;
    ++calls_;
    return integrate(a, a + interval_s);
}

std::optional<double> PiecewisePowerSource::sample_tick(int64_t tick, double interval_s) {
    double a = static_cast<double>(tick) * interval_s;
    return integrate(a, a + interval_s);
}

SyntheticGpuSource::SyntheticGpuSource(std::vector<double> device_milliwatts)
    : device_mw_(std::move(device_milliwatts)) {
    for (double mw : device_mw_) {
        if (!std::isfinite(mw) || mw < 0) {
            throw std::invalid_argument("device power must be finite and >= 0");
        }
    }
}

std::optional<double> SyntheticGpuSource::sample(double interval_s) {
    double sum_mw = 0.0;
    for (double mw : device_mw_) {
        sum_mw += mw;
    }
    return sum_mw * interval_s / 1000.0;
}

void GapFiller::push(int64_t tick, std::optional<double> v) {
    if (!v) {
        gap_.push_back(tick);
        return;
    }
    if (!any_real_) {
        // Leading gap: copy the first real sample backwards.
        for (int64_t g : gap_) {
            emit_(g, *v, true);
        }
    } else {
        for (int64_t g : gap_) {
            double frac = static_cast<double>(g - last_tick_) /
                          static_cast<double>(tick - last_tick_);
            emit_(g, last_val_ + (*v - last_val_) * frac, true);
        }
    }
    gap_.clear();
    emit_(tick, *v, false);
    any_real_ = true;
    last_tick_ = tick;
    last_val_ = *v;
}

void GapFiller::finish() {
    for (int64_t g : gap_) {
        emit_(g, any_real_ ? last_val_ : 0.0, true);
    }
    gap_.clear();
}

FilledSeries interpolate_gaps(const std::vector<std::optional<double>>& samples,
                              std::vector<std::string>* warnings) {
    FilledSeries out;
    out.values.assign(samples.size(), 0.0);
    out.interpolated.assign(samples.size(), false);
    GapFiller filler([&](int64_t tick, double v, bool interp) {
        out.values[static_cast<size_t>(tick)] = v;
        out.interpolated[static_cast<size_t>(tick)] = interp;
    });
    for (size_t k = 0; k < samples.size(); ++k) {
        filler.push(static_cast<int64_t>(k), samples[k]);
    }
    filler.finish();
    if (!samples.empty() && !filler.ever_real() && warnings) {
        warnings->push_back("series has no real samples; filled with zeros");
    }
    return out;
}

namespace {

struct SampleMsg {
    Field field = Field::Cpu;
    int64_t tick = 0;
    std::optional<double> value;
};

struct Partial {
    std::array<std::optional<double>, 3> v;
    uint8_t reported = 0;
};

}  // namespace

struct Monitor::Impl {
    MonitorConfig cfg;
    std::vector<std::unique_ptr<PowerSource>> sources;
    uint8_t mask = 0;
    int64_t interval_ns = 0;
    int64_t wall0 = 0;
    uint64_t steady0 = 0;

    std::ofstream out;

    BoundedQueue<SampleMsg> sample_q{1024};
    BoundedQueue<EnergyPoint> point_q{1024};

    std::mutex stop_mu;
    std::condition_variable stop_cv;
    bool stopping = false;

    mutable std::mutex warn_mu;
    std::vector<std::string> warnings;
    std::string io_error;

    std::vector<std::thread> samplers;
    std::thread accumulator;
    std::thread writer;
    std::once_flag stop_once;

    void add_warning(std::string w) {
        std::lock_guard lk(warn_mu);
        warnings.push_back(std::move(w));
    }

    void record_io_error(const std::string& msg) {
        std::lock_guard lk(warn_mu);
        if (io_error.empty()) {
            io_error = msg;
        }
    }

    // True when the deadline was reached; false when stop() interrupted.
    bool wait_until_steady(uint64_t target_ns) {
        std::chrono::steady_clock::time_point tp(
            std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                std::chrono::nanoseconds(target_ns)));
        std::unique_lock lk(stop_mu);
        return !stop_cv.wait_until(lk, tp, [&] { return stopping; });
    }

    bool stop_requested() {
        std::lock_guard lk(stop_mu);
        return stopping;
    }

    void sampler_main(size_t idx) {
        PowerSource& src = *sources[idx];
        const Field f = src.kind();
        bool dead = false;
        int64_t k = 0;
        while (!stop_requested()) {
            std::optional<double> v;
            if (!dead) {
                try {
                    v = src.sample_tick(k, cfg.interval_s);
                    if (v && (!std::isfinite(*v) || *v < 0)) {
                        v.reset();
                    }
                } catch (const std::exception& e) {
                    dead = true;
                    add_warning(std::string(field_name(f)) +
                                " source failed permanently: " + e.what());
                } catch (...) {
                    dead = true;
                    add_warning(std::string(field_name(f)) +
                                " source failed permanently");
                }
            }
            uint64_t finish = steady_now_ns();
            uint64_t target_end =
                steady0 + (static_cast<uint64_t>(k) + 1) * static_cast<uint64_t>(interval_ns);
            // A reading that lands more than half an interval past its slot
            // no longer belongs to this tick.
            bool late = finish > target_end + static_cast<uint64_t>(interval_ns) / 2;
            sample_q.push({f, k, late ? std::nullopt : v});
            int64_t next = k + 1;
            // Backfill ticks whose start window already closed while we ran
            // long, so the accumulator sees every tick index exactly once.
            while (steady0 + static_cast<uint64_t>(next) * static_cast<uint64_t>(interval_ns) +
                       static_cast<uint64_t>(interval_ns) / 2 <
                   finish) {
                sample_q.push({f, next, std::nullopt});
                ++next;
            }
            if (!wait_until_steady(steady0 + static_cast<uint64_t>(next) *
                                                 static_cast<uint64_t>(interval_ns))) {
                break;
            }
            k = next;
        }
    }

    void accumulator_main() {
        std::map<int64_t, Partial> pending;
        int64_t next_tick = 0;

        // Points finalized but still waiting on gap resolution, flushed to
        // the writer strictly in tick order.
        std::map<int64_t, EnergyPoint> points;
        std::map<int64_t, uint8_t> unresolved;
        std::deque<int64_t> order;

        auto flush_resolved = [&] {
            while (!order.empty() && unresolved[order.front()] == 0) {
                int64_t t = order.front();
                order.pop_front();
                point_q.push(std::move(points[t]));
                points.erase(t);
                unresolved.erase(t);
            }
        };

        std::array<std::unique_ptr<GapFiller>, 3> fillers;
        for (unsigned fi = 0; fi < 3; ++fi) {
            Field f = static_cast<Field>(fi);
            if (!(mask & field_bit(f))) {
                continue;
            }
            fillers[fi] = std::make_unique<GapFiller>(
                [&points, &unresolved, f](int64_t tick, double v, bool interp) {
                    EnergyPoint& pt = points[tick];
                    set_field_value(pt, f, v);
                    if (interp) {
                        pt.interp_mask |= field_bit(f);
                    }
                    unresolved[tick] &= static_cast<uint8_t>(~field_bit(f));
                });
        }

        auto finalize = [&](int64_t k, const Partial& part) {
            EnergyPoint pt;
            pt.t_ns = wall0 + k * interval_ns;
            pt.node_id = cfg.node_id;
            pt.field_mask = mask;
            points.emplace(k, std::move(pt));
            unresolved[k] = mask;
            order.push_back(k);
            for (unsigned fi = 0; fi < 3; ++fi) {
                if (fillers[fi]) {
                    fillers[fi]->push(k, part.v[fi]);
                }
            }
            flush_resolved();
        };

        while (auto m = sample_q.pop()) {
            Partial& part = pending[m->tick];
            part.v[static_cast<unsigned>(m->field)] = m->value;
            part.reported |= field_bit(m->field);
            for (;;) {
                auto it = pending.find(next_tick);
                if (it == pending.end() || it->second.reported != mask) {
                    break;
                }
                Partial done = it->second;
                pending.erase(it);
                finalize(next_tick, done);
                ++next_tick;
            }
        }

        // Whatever is left never got reports from every source: the trailing
        // partial interval(s) cut off by stop(). Drop them.
        pending.clear();
        for (auto& filler : fillers) {
            if (filler) {
                filler->finish();
            }
        }
        flush_resolved();
        for (unsigned fi = 0; fi < 3; ++fi) {
            if (fillers[fi] && next_tick > 0 && !fillers[fi]->ever_real()) {
                add_warning(std::string(field_name(static_cast<Field>(fi))) +
                            " produced no successful samples; stored zeros");
            }
        }
        point_q.close();
    }

    void writer_main() {
        std::string block;
        size_t buffered = 0;
        auto flush_block = [&] {
            if (block.empty()) {
                return;
            }
            out << block;
            block.clear();
            buffered = 0;
            if (!out) {
                record_io_error("energy store write failed: " + cfg.store_path);
            }
        };
        while (auto p = point_q.pop()) {
            block += format_point(*p);
            block += '\n';
            if (++buffered >= cfg.writer_batch) {
                flush_block();
            }
        }
        flush_block();
        out.flush();
        if (!out) {
            record_io_error("energy store flush failed: " + cfg.store_path);
        }
    }

    void shutdown() {
        {
            std::lock_guard lk(stop_mu);
            stopping = true;
        }
        stop_cv.notify_all();
        for (auto& t : samplers) {
            if (t.joinable()) {
                t.join();
            }
        }
        sample_q.close();
        if (accumulator.joinable()) {
            accumulator.join();
        }
        if (writer.joinable()) {
            writer.join();
        }
        if (out.is_open()) {
            out.close();
            if (out.fail()) {
                record_io_error("energy store close failed: " + cfg.store_path);
            }
        }
    }
};

Monitor::Monitor(MonitorConfig cfg, std::vector<std::unique_ptr<PowerSource>> sources) {
    if (!std::isfinite(cfg.interval_s) || cfg.interval_s <= 0) {
        throw std::invalid_argument("sampling interval must be positive");
    }
    if (cfg.writer_batch < 1) {
        throw std::invalid_argument("writer batch must be >= 1");
    }
    if (sources.empty()) {
        throw std::invalid_argument("need at least one power source");
    }
    if (cfg.store_path.empty()) {
        throw std::invalid_argument("store path required");
    }
    uint8_t mask = 0;
    for (const auto& s : sources) {
        if (!s) {
            throw std::invalid_argument("null power source");
        }
        uint8_t b = field_bit(s->kind());
        if (mask & b) {
            throw std::invalid_argument(std::string("duplicate source for ") +
                                        field_name(s->kind()));
        }
        mask |= b;
    }

    impl_ = std::make_unique<Impl>();
    impl_->cfg = std::move(cfg);
    impl_->sources = std::move(sources);
    impl_->mask = mask;
    field_mask_ = mask;
    impl_->interval_ns = llround(impl_->cfg.interval_s * 1e9);
    if (impl_->interval_ns <= 0) {
        throw std::invalid_argument("sampling interval too small");
    }
    impl_->out.open(impl_->cfg.store_path, std::ios::app);
    if (!impl_->out) {
        throw StoreError("cannot open energy store: " + impl_->cfg.store_path);
    }

    try {
        impl_->accumulator = std::thread(&Impl::accumulator_main, impl_.get());
        impl_->writer = std::thread(&Impl::writer_main, impl_.get());
        impl_->wall0 = static_cast<int64_t>(wall_now_ns());
        impl_->steady0 = steady_now_ns();
        impl_->samplers.reserve(impl_->sources.size());
        for (size_t i = 0; i < impl_->sources.size(); ++i) {
            impl_->samplers.emplace_back(&Impl::sampler_main, impl_.get(), i);
        }
    } catch (...) {
        impl_->shutdown();
        throw;
    }
}

Monitor::~Monitor() {
    if (impl_) {
        try {
            stop();
        } catch (...) {
        }
    }
}

void Monitor::stop() {
    std::call_once(impl_->stop_once, [&] { impl_->shutdown(); });
    std::lock_guard lk(impl_->warn_mu);
    if (!impl_->io_error.empty()) {
        throw StoreError(impl_->io_error);
    }
}

std::vector<std::string> Monitor::warnings() const {
    std::lock_guard lk(impl_->warn_mu);
    return impl_->warnings;
}

std::unique_ptr<Monitor> run_monitor(MonitorConfig cfg,
                                     std::vector<std::unique_ptr<PowerSource>> sources) {
    return std::make_unique<Monitor>(std::move(cfg), std::move(sources));
}

std::string format_point(const EnergyPoint& p) {
    char num[64];
    std::string s = "energy,node_id=" + p.node_id + " ";
    for (Field f : {Field::Cpu, Field::Mem, Field::Gpu}) {
        if (!(p.field_mask & field_bit(f))) {
            continue;
        }
        s += field_name(f);
        s += '=';
        std::snprintf(num, sizeof num, "%.17g", field_value(p, f));
        s += num;
        s += ',';
    }
    s += "interp_mask=";
    s += std::to_string(static_cast<unsigned>(p.interp_mask));
    s += ' ';
    s += std::to_string(p.t_ns);
    return s;
}

namespace {

double parse_double(const std::string& s, size_t lineno) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || s.empty()) {
        throw std::runtime_error("energy store line " + std::to_string(lineno) +
                                 ": bad number '" + s + "'");
    }
    return v;
}

EnergyPoint parse_point(const std::string& line, size_t lineno) {
    auto fail = [&](const std::string& why) -> std::runtime_error {
        return std::runtime_error("energy store line " + std::to_string(lineno) + ": " + why);
    };
    const std::string prefix = "energy,node_id=";
    if (line.rfind(prefix, 0) != 0) {
        throw fail("missing energy,node_id= prefix");
    }
    size_t sp1 = line.find(' ', prefix.size());
    size_t sp2 = line.rfind(' ');
    if (sp1 == std::string::npos || sp2 == sp1) {
        throw fail("expected '<tags> <fields> <timestamp>'");
    }
    EnergyPoint p;
    p.node_id = line.substr(prefix.size(), sp1 - prefix.size());
    if (p.node_id.empty()) {
        throw fail("empty node id");
    }
    try {
        p.t_ns = std::stoll(line.substr(sp2 + 1));
    } catch (const std::exception&) {
        throw fail("bad timestamp");
    }

    std::string fields = line.substr(sp1 + 1, sp2 - sp1 - 1);
    bool saw_mask = false;
    size_t pos = 0;
    while (pos <= fields.size()) {
        size_t comma = fields.find(',', pos);
        std::string token =
            fields.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        pos = comma == std::string::npos ? fields.size() + 1 : comma + 1;
        if (token.empty()) {
            throw fail("empty field");
        }
        size_t eq = token.find('=');
        if (eq == std::string::npos) {
            throw fail("field without '=': " + token);
        }
        std::string key = token.substr(0, eq);
        std::string val = token.substr(eq + 1);
        if (key == "interp_mask") {
            unsigned long m = std::stoul(val);
            if (m > 255) {
                throw fail("interp_mask out of range");
            }
            p.interp_mask = static_cast<uint8_t>(m);
            saw_mask = true;
        } else if (key == "cpu_energy") {
            p.cpu_energy = parse_double(val, lineno);
            p.field_mask |= field_bit(Field::Cpu);
        } else if (key == "memory_energy") {
            p.memory_energy = parse_double(val, lineno);
            p.field_mask |= field_bit(Field::Mem);
        } else if (key == "gpu_energy") {
            p.gpu_energy = parse_double(val, lineno);
            p.field_mask |= field_bit(Field::Gpu);
        } else {
            throw fail("unknown field '" + key + "'");
        }
    }
    if (!saw_mask) {
        throw fail("missing interp_mask");
    }
    return p;
}

}  // namespace

std::vector<EnergyPoint> read_store(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open energy store: " + path);
    }
    std::vector<EnergyPoint> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        out.push_back(parse_point(line, lineno));
    }
    return out;
}

EnergyTotals query_energy(const std::vector<EnergyPoint>& points, const std::string& node_id,
                          int64_t t_start_ns, int64_t t_end_ns) {
    if (t_start_ns > t_end_ns) {
        throw std::invalid_argument("query window start after end");
    }
    EnergyTotals tot;
    for (const auto& p : points) {
        if (p.node_id != node_id || p.t_ns < t_start_ns || p.t_ns >= t_end_ns) {
            continue;
        }
        tot.field_mask |= p.field_mask;
        if (p.field_mask & field_bit(Field::Cpu)) {
            tot.cpu_nj += llround(p.cpu_energy * 1e9);
        }
        if (p.field_mask & field_bit(Field::Mem)) {
            tot.mem_nj += llround(p.memory_energy * 1e9);
        }
        if (p.field_mask & field_bit(Field::Gpu)) {
            tot.gpu_nj += llround(p.gpu_energy * 1e9);
        }
    }
    return tot;
}

EnergyTotals query_energy(const std::string& store_path, const std::string& node_id,
                          int64_t t_start_ns, int64_t t_end_ns) {
    return query_energy(read_store(store_path), node_id, t_start_ns, t_end_ns);
}

namespace {

struct RaplZone {
    std::string energy_path;
    uint64_t max_range = 0;
    uint64_t prev = 0;
};

std::optional<uint64_t> read_u64_file(const std::string& path) {
    std::ifstream in(path);
    uint64_t v = 0;
    if (!(in >> v)) {
        return std::nullopt;
    }
    return v;
}

class RaplSource : public PowerSource {
  public:
    RaplSource(Field kind, std::vector<RaplZone> zones)
        : kind_(kind), zones_(std::move(zones)) {}

    Field kind() const override { return kind_; }

    std::optional<double> sample(double) override {
        uint64_t total_uj = 0;
        for (auto& z : zones_) {
            auto cur = read_u64_file(z.energy_path);
            if (!cur) {
                return std::nullopt;
            }
            uint64_t delta = *cur >= z.prev ? *cur - z.prev
                                            : *cur + (z.max_range - z.prev);
            z.prev = *cur;
            total_uj += delta;
        }
        return static_cast<double>(total_uj) * 1e-6;
    }

  private:
    Field kind_;
    std::vector<RaplZone> zones_;
};

}  // namespace

std::vector<std::unique_ptr<PowerSource>> os_adapters() {
    namespace fs = std::filesystem;
    std::vector<RaplZone> cpu_zones;
    std::vector<RaplZone> mem_zones;
    std::error_code ec;
    fs::directory_iterator it("/sys/class/powercap", ec);
    if (ec) {
        return {};
    }
    for (const auto& ent : it) {
        std::string base = ent.path().filename().string();
        if (base.rfind("intel-rapl", 0) != 0) {
            continue;
        }
        std::ifstream name_in(ent.path() / "name");
        std::string name;
        if (!(name_in >> name)) {
            continue;
        }
        std::vector<RaplZone>* bucket = nullptr;
        if (name.rfind("package", 0) == 0) {
            bucket = &cpu_zones;
        } else if (name == "dram") {
            bucket = &mem_zones;
        } else {
            continue;
        }
        RaplZone z;
        z.energy_path = (ent.path() / "energy_uj").string();
        auto max_range = read_u64_file((ent.path() / "max_energy_range_uj").string());
        auto cur = read_u64_file(z.energy_path);
        if (!max_range || !cur || *max_range == 0) {
            continue;
        }
        z.max_range = *max_range;
        z.prev = *cur;
        bucket->push_back(std::move(z));
    }
    std::vector<std::unique_ptr<PowerSource>> out;
    if (!cpu_zones.empty()) {
        out.push_back(std::make_unique<RaplSource>(Field::Cpu, std::move(cpu_zones)));
    }
    if (!mem_zones.empty()) {
        out.push_back(std::make_unique<RaplSource>(Field::Mem, std::move(mem_zones)));
    }
    return out;
}

}  // namespace emlio::energymon
