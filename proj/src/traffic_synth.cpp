#include "canids/traffic_synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "canids/rng.hpp"

namespace canids {
namespace {

void validate_profile(const TrafficProfile& profile) {
    if (profile.ids.empty()) throw std::invalid_argument("traffic profile has no ids");
    for (const IdProfile& p : profile.ids) {
        if (p.can_id > kMaxCanId) throw std::invalid_argument("profile id exceeds 29 bits");
        if (!(p.period > 0.0)) throw std::invalid_argument("profile period must be positive");
        if (!(p.jitter >= 0.0 && p.jitter < 0.5))
            throw std::invalid_argument("profile jitter must lie in [0, 0.5)");
    }
}

void fill_random_payload(Rng& rng, CanRecord& rec) {
    for (auto& b : rec.payload) b = static_cast<uint8_t>(rng.next_u32() & 0xff);
}

void merge_injected(std::vector<CanRecord>& out, std::vector<CanRecord>&& injected) {
    out.insert(out.end(), injected.begin(), injected.end());
    std::stable_sort(out.begin(), out.end(),
                     [](const CanRecord& a, const CanRecord& b) { return a.timestamp < b.timestamp; });
}

// Injection timestamps are uniform over the base capture span. Returns the
// deterministic injection count for the requested rate.
std::vector<double> injection_times(const std::vector<CanRecord>& base, double rate, Rng& rng) {
    if (base.empty()) throw std::invalid_argument("cannot inject into an empty capture");
    if (!(rate > 0.0)) throw std::invalid_argument("injection rate must be positive");
    double t0 = base.front().timestamp;
    double t1 = base.back().timestamp;
    int64_t count = std::llround(rate * (t1 - t0));
    std::vector<double> times(static_cast<size_t>(count));
    for (double& t : times) t = t0 + rng.uniform_double() * (t1 - t0);
    std::sort(times.begin(), times.end());
    return times;
}

}  // namespace

double TrafficProfile::total_rate() const {
    double r = 0.0;
    for (const IdProfile& p : ids) r += 1.0 / p.period;
    return r;
}

std::vector<CanRecord> generate_normal_traffic(const TrafficProfile& profile, double duration,
                                               uint64_t seed) {
    validate_profile(profile);
    if (!(duration > 0.0)) throw std::invalid_argument("duration must be positive");

    Rng rng(seed);
    std::vector<CanRecord> out;
    out.reserve(static_cast<size_t>(profile.total_rate() * duration * 1.05) + 16);

    for (const IdProfile& p : profile.ids) {
        // offset by the jitter amplitude so slot zero cannot land below t=0
        double phase = p.period * (p.jitter + rng.uniform_double());
        for (int64_t k = 0;; ++k) {
            double u = 2.0 * rng.uniform_double() - 1.0;
            double t = phase + static_cast<double>(k) * p.period + p.period * p.jitter * u;
            if (t >= duration) break;
            CanRecord rec;
            rec.timestamp = t;
            rec.can_id = p.can_id;
            rec.dlc = 8;
            fill_random_payload(rng, rec);
            rec.flag = MsgFlag::Normal;
            out.push_back(rec);
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const CanRecord& a, const CanRecord& b) { return a.timestamp < b.timestamp; });
    return out;
}

std::vector<CanRecord> inject_dos(const std::vector<CanRecord>& base, double rate, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> times = injection_times(base, rate, rng);
    std::vector<CanRecord> injected;
    injected.reserve(times.size());
    for (double t : times) {
        CanRecord rec;
        rec.timestamp = t;
        rec.can_id = 0;
        rec.dlc = 8;
        rec.payload.fill(0);
        rec.flag = MsgFlag::Injected;
        injected.push_back(rec);
    }
    std::vector<CanRecord> out = base;
    merge_injected(out, std::move(injected));
    return out;
}

std::vector<CanRecord> inject_fuzzy(const std::vector<CanRecord>& base, double rate,
                                    FuzzyIdMode mode, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> times = injection_times(base, rate, rng);

    std::vector<uint32_t> observed;
    if (mode == FuzzyIdMode::Observed) {
        for (const CanRecord& r : base)
            if (std::find(observed.begin(), observed.end(), r.can_id) == observed.end())
                observed.push_back(r.can_id);
        if (observed.empty()) throw std::invalid_argument("no observed ids to draw from");
    }

    std::vector<CanRecord> injected;
    injected.reserve(times.size());
    for (double t : times) {
        CanRecord rec;
        rec.timestamp = t;
        rec.can_id = mode == FuzzyIdMode::Random29
                         ? static_cast<uint32_t>(rng.uniform_int(uint64_t{1} << 29))
                         : observed[static_cast<size_t>(rng.uniform_int(observed.size()))];
        rec.dlc = 8;
        fill_random_payload(rng, rec);
        rec.flag = MsgFlag::Injected;
        injected.push_back(rec);
    }
    std::vector<CanRecord> out = base;
    merge_injected(out, std::move(injected));
    return out;
}

std::vector<CanRecord> inject_targeted(const std::vector<CanRecord>& base, double rate,
                                       uint32_t target_id, const std::array<uint8_t, 8>& payload,
                                       uint64_t seed) {
    if (target_id > kMaxCanId) throw std::invalid_argument("target id exceeds 29 bits");
    Rng rng(seed);
    std::vector<double> times = injection_times(base, rate, rng);
    std::vector<CanRecord> injected;
    injected.reserve(times.size());
    for (double t : times) {
        CanRecord rec;
        rec.timestamp = t;
        rec.can_id = target_id;
        rec.dlc = 8;
        rec.payload = payload;
        rec.flag = MsgFlag::Injected;
        injected.push_back(rec);
    }
    std::vector<CanRecord> out = base;
    merge_injected(out, std::move(injected));
    return out;
}

TrafficProfile source_vehicle_profile() {
    // ~20 ids, ~2,040 msg/s in total
    return TrafficProfile{{
        {0x0018, 0.005, 0.08}, {0x0034, 0.005, 0.08}, {0x0043, 0.005, 0.08},
        {0x0130, 0.005, 0.08}, {0x0131, 0.005, 0.08}, {0x0120, 0.010, 0.08},
        {0x0140, 0.010, 0.08}, {0x0164, 0.010, 0.08}, {0x02a0, 0.010, 0.08},
        {0x02b0, 0.010, 0.08}, {0x0316, 0.010, 0.08}, {0x043f, 0.010, 0.08},
        {0x0440, 0.020, 0.08}, {0x04b1, 0.020, 0.08}, {0x04f0, 0.020, 0.08},
        {0x0545, 0.020, 0.08}, {0x05a0, 0.020, 0.08}, {0x05a2, 0.020, 0.08},
        {0x0690, 0.050, 0.08}, {0x06a1, 0.050, 0.08},
    }};
}

TrafficProfile target_vehicle_profile() {
    // different vehicle: 18 ids, ~1,810 msg/s, noisier clocks
    return TrafficProfile{{
        {0x0002, 0.005, 0.12}, {0x0037, 0.005, 0.12}, {0x0050, 0.005, 0.12},
        {0x0080, 0.005, 0.12}, {0x0081, 0.005, 0.12}, {0x0165, 0.010, 0.12},
        {0x018f, 0.010, 0.12}, {0x0260, 0.010, 0.12}, {0x02c0, 0.010, 0.12},
        {0x0329, 0.010, 0.12}, {0x0350, 0.020, 0.12}, {0x0370, 0.020, 0.12},
        {0x0430, 0.020, 0.12}, {0x04a0, 0.020, 0.12}, {0x0520, 0.020, 0.12},
        {0x059b, 0.050, 0.12}, {0x05f0, 0.050, 0.12}, {0x0610, 0.050, 0.12},
    }};
}

LabelSpace source_label_space() { return {{"normal", "dos", "fuzzy", "gear", "rpm"}}; }
LabelSpace target_label_space() { return {{"normal", "dos", "fuzzy", "malfunction"}}; }

std::vector<ScenarioCapture> synth_scenario(const std::string& scenario, uint64_t seed,
                                            double duration) {
    // Injection rates mirror the injected-to-normal ratios seen in real
    // captures: floods near 1:5.2, fuzzing near 1:6.7, spoofing near 1:7.4.
    if (scenario == "source") {
        TrafficProfile prof = source_vehicle_profile();
        double d = duration > 0.0 ? duration : kSourceScenarioDuration;
        double rate = prof.total_rate();
        std::array<uint8_t, 8> gear_payload = {0x00, 0x00, 0x00, 0xff, 0x00, 0xff, 0x00, 0x00};
        std::array<uint8_t, 8> rpm_payload = {0x05, 0x21, 0x68, 0x09, 0x21, 0x21, 0x00, 0xff};
        auto normal = [&](uint64_t s) { return generate_normal_traffic(prof, d, s); };
        return {
            {"normal.csv", "normal", normal(seed + 1)},
            {"dos.csv", "dos", inject_dos(normal(seed + 2), rate / 5.24, seed + 102)},
            {"fuzzy.csv", "fuzzy",
             inject_fuzzy(normal(seed + 3), rate / 6.7, FuzzyIdMode::Random29, seed + 103)},
            {"gear.csv", "gear",
             inject_targeted(normal(seed + 4), rate / 7.4, 0x043f, gear_payload, seed + 104)},
            {"rpm.csv", "rpm",
             inject_targeted(normal(seed + 5), rate / 7.4, 0x0316, rpm_payload, seed + 105)},
        };
    }
    if (scenario == "target") {
        TrafficProfile prof = target_vehicle_profile();
        double d = duration > 0.0 ? duration : kTargetScenarioDuration;
        double rate = prof.total_rate();
        std::array<uint8_t, 8> malf_payload = {0x45, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00};
        auto normal = [&](uint64_t s) { return generate_normal_traffic(prof, d, s); };
        return {
            {"normal.csv", "normal", normal(seed + 11)},
            {"dos.csv", "dos", inject_dos(normal(seed + 12), rate / 5.24, seed + 112)},
            {"fuzzy.csv", "fuzzy",
             inject_fuzzy(normal(seed + 13), rate / 6.7, FuzzyIdMode::Random29, seed + 113)},
            {"malfunction.csv", "malfunction",
             inject_targeted(normal(seed + 14), rate / 7.4, 0x0329, malf_payload, seed + 114)},
        };
    }
    throw std::invalid_argument("unknown scenario: " + scenario + " (expected source or target)");
}

}  // namespace canids
