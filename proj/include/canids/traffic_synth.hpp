#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "canids/can_log.hpp"
#include "canids/framing.hpp"

namespace canids {

// Synthetic bus traffic. Each identifier fires on its own nominal grid
//   t_k = phase + k*period + period*jitter*u_k,   u_k ~ U(-1, 1)
// with phase ~ period * (jitter + U[0, 1)), which keeps every timestamp
// non-negative. Jitter below 0.5 keeps every per-id sequence strictly
// increasing, so the merged capture is a valid log. Attack injectors overlay
// extra records flagged Injected without touching the originals.

struct IdProfile {
    uint32_t can_id = 0;
    double period = 0.01;  // seconds
    double jitter = 0.0;   // fraction of period, in [0, 0.5)
};

struct TrafficProfile {
    std::vector<IdProfile> ids;
    double total_rate() const;  // messages per second
};

std::vector<CanRecord> generate_normal_traffic(const TrafficProfile& profile, double duration,
                                               uint64_t seed);

// Flood of id 0x000 zero-payload records, llround(rate * capture span) of
// them, uniform over the capture span.
std::vector<CanRecord> inject_dos(const std::vector<CanRecord>& base, double rate, uint64_t seed);

enum class FuzzyIdMode {
    Random29,  // ids uniform over the full 29-bit space
    Observed,  // ids drawn from those present in the base capture
};

std::vector<CanRecord> inject_fuzzy(const std::vector<CanRecord>& base, double rate,
                                    FuzzyIdMode mode, uint64_t seed);

// Spoofing: a fixed id carrying a fixed payload.
std::vector<CanRecord> inject_targeted(const std::vector<CanRecord>& base, double rate,
                                       uint32_t target_id, const std::array<uint8_t, 8>& payload,
                                       uint64_t seed);

// Two preset vehicles. The source bus runs ~20 ids at roughly 2,000 msg/s;
// the target bus is a different vehicle: different id table, rates and
// jitter, so models carried across see a genuine domain shift.
TrafficProfile source_vehicle_profile();
TrafficProfile target_vehicle_profile();

LabelSpace source_label_space();  // normal, dos, fuzzy, gear, rpm
LabelSpace target_label_space();  // normal, dos, fuzzy, malfunction

struct ScenarioCapture {
    std::string file_name;   // e.g. "dos.csv"
    std::string class_name;  // label for injected windows
    std::vector<CanRecord> records;
};

// "source": five captures (normal + four attacks) on the source vehicle.
// "target": four captures on the target vehicle. duration 0 uses the preset
// length (24 s source, 2.8 s target).
std::vector<ScenarioCapture> synth_scenario(const std::string& scenario, uint64_t seed,
                                            double duration = 0.0);

constexpr double kSourceScenarioDuration = 24.0;
constexpr double kTargetScenarioDuration = 2.8;

}  // namespace canids
