#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace canids {

// CAN capture handling for the HCRL car-hacking CSV exports.
//
// Line layout:   timestamp,can_id_hex,dlc,data...[,flag]
// where data is either exactly dlc byte columns (short layout) or always 8
// columns with the tail padded (padded layout), and flag is R (normal) or
// T (injected). Attack-free captures may omit the flag column entirely.

enum class MsgFlag : uint8_t { Normal = 0, Injected = 1 };

constexpr uint32_t kMaxCanId = (1u << 29) - 1;

struct CanRecord {
    double timestamp = 0.0;            // seconds, nondecreasing within a capture
    uint32_t can_id = 0;               // 29-bit identifier space
    uint8_t dlc = 0;                   // 0..8
    std::array<uint8_t, 8> payload{};  // first dlc bytes are meaningful, rest zero
    MsgFlag flag = MsgFlag::Normal;

    bool operator==(const CanRecord&) const = default;
};

struct ParseStats {
    uint64_t total = 0;  // data lines seen (normal + injected + skipped)
    uint64_t normal = 0;
    uint64_t injected = 0;
    uint64_t skipped = 0;  // malformed lines dropped in lenient mode
};

struct ParseResult {
    std::vector<CanRecord> records;
    ParseStats stats;
};

class CanLogError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Lenient mode skips malformed lines and counts them; strict mode throws
// CanLogError naming the first offending line. Domain violations (can_id
// outside 29 bits, dlc above 8) throw in both modes.
ParseResult parse_hcrl_csv(std::istream& in, bool strict = false);
ParseResult parse_hcrl_csv_file(const std::string& path, bool strict = false);

// Canonical short-layout form: "%.6f" timestamp, lowercase zero-padded hex id
// (4 digits minimum), dlc, two-digit hex bytes, explicit R/T flag. Parsing a
// canonical stream and serializing it again reproduces it byte for byte.
void serialize_csv(const std::vector<CanRecord>& records, std::ostream& out);
std::string serialize_csv(const std::vector<CanRecord>& records);

// 29-bit identifier as a binary row, most significant bit first,
// left-padded with zeros.
using IdBits = std::array<uint8_t, 29>;
IdBits encode_id_29bit(uint32_t can_id);
uint32_t decode_id_29bit(const IdBits& bits);

}  // namespace canids
