#include "canids/can_log.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace canids {
namespace {

std::string_view trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

void split_csv(std::string_view line, std::vector<std::string_view>& out) {
    out.clear();
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            return;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
}

bool parse_double(std::string_view tok, double& out) {
    if (tok.empty()) return false;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last;
}

bool parse_hex(std::string_view tok, uint64_t& out) {
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) tok.remove_prefix(2);
    if (tok.empty()) return false;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(first, last, out, 16);
    return ec == std::errc() && p == last;
}

bool parse_uint(std::string_view tok, uint64_t& out) {
    if (tok.empty()) return false;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last;
}

[[noreturn]] void fail(uint64_t line_no, const std::string& what) {
    throw CanLogError("line " + std::to_string(line_no) + ": " + what);
}

// Returns false when the line is malformed (reason filled in); throws for
// domain violations that must not be skipped.
bool parse_line(std::string_view line, uint64_t line_no, CanRecord& rec, std::string& reason) {
    static thread_local std::vector<std::string_view> tok;
    split_csv(line, tok);
    if (tok.size() < 3) {
        reason = "expected at least timestamp, id, dlc";
        return false;
    }

    if (!parse_double(tok[0], rec.timestamp)) {
        reason = "bad timestamp";
        return false;
    }

    uint64_t id;
    if (!parse_hex(tok[1], id)) {
        reason = "bad hex id";
        return false;
    }
    if (id > kMaxCanId) fail(line_no, "can_id exceeds 29 bits");
    rec.can_id = static_cast<uint32_t>(id);

    uint64_t dlc;
    if (!parse_uint(tok[2], dlc)) {
        reason = "bad dlc";
        return false;
    }
    if (dlc > 8) fail(line_no, "dlc exceeds 8");
    rec.dlc = static_cast<uint8_t>(dlc);

    // The last column is a flag only when it is literally R or T; a hex byte
    // can never look like one, which settles layouts like dlc=7 plus flag
    // versus 8 padded data columns.
    size_t n = tok.size();
    bool has_flag = false;
    if (n > 3 && (tok[n - 1] == "R" || tok[n - 1] == "T")) {
        has_flag = true;
        rec.flag = tok[n - 1] == "T" ? MsgFlag::Injected : MsgFlag::Normal;
    } else {
        rec.flag = MsgFlag::Normal;
    }

    size_t data_cols = n - 3 - (has_flag ? 1 : 0);
    if (data_cols != rec.dlc && data_cols != 8) {
        reason = "data column count matches neither dlc nor padded layout";
        return false;
    }

    rec.payload.fill(0);
    for (size_t i = 0; i < data_cols; ++i) {
        std::string_view b = tok[3 + i];
        uint64_t v;
        if (b.empty() || b.size() > 2 || !parse_hex(b, v)) {
            reason = "bad data byte";
            return false;
        }
        if (i < rec.dlc) rec.payload[i] = static_cast<uint8_t>(v);
    }
    return true;
}

}  // namespace

ParseResult parse_hcrl_csv(std::istream& in, bool strict) {
    ParseResult res;
    std::string line;
    uint64_t line_no = 0;
    double last_ts = 0.0;
    bool have_last = false;

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;

        ++res.stats.total;
        CanRecord rec;
        std::string reason;
        if (!parse_line(line, line_no, rec, reason)) {
            if (strict) fail(line_no, reason);
            ++res.stats.skipped;
            continue;
        }
        if (have_last && rec.timestamp < last_ts) {
            if (strict) fail(line_no, "timestamp decreases");
            ++res.stats.skipped;
            continue;
        }
        last_ts = rec.timestamp;
        have_last = true;
        if (rec.flag == MsgFlag::Injected)
            ++res.stats.injected;
        else
            ++res.stats.normal;
        res.records.push_back(rec);
    }
    return res;
}

ParseResult parse_hcrl_csv_file(const std::string& path, bool strict) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CanLogError("cannot open " + path);
    try {
        return parse_hcrl_csv(in, strict);
    } catch (const CanLogError& e) {
        throw CanLogError(path + ": " + e.what());
    }
}

void serialize_csv(const std::vector<CanRecord>& records, std::ostream& out) {
    char buf[64];
    for (const CanRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.timestamp);
        out << buf << ',';
        std::snprintf(buf, sizeof(buf), "%04x", r.can_id);
        out << buf << ',' << static_cast<int>(r.dlc);
        for (int i = 0; i < r.dlc; ++i) {
            std::snprintf(buf, sizeof(buf), "%02x", r.payload[static_cast<size_t>(i)]);
            out << ',' << buf;
        }
        out << ',' << (r.flag == MsgFlag::Injected ? 'T' : 'R') << '\n';
    }
}

std::string serialize_csv(const std::vector<CanRecord>& records) {
    std::ostringstream os;
    serialize_csv(records, os);
    return os.str();
}

IdBits encode_id_29bit(uint32_t can_id) {
    if (can_id > kMaxCanId) throw std::invalid_argument("can_id exceeds 29 bits");
    IdBits bits;
    for (int i = 0; i < 29; ++i)
        bits[static_cast<size_t>(i)] = static_cast<uint8_t>((can_id >> (28 - i)) & 1u);
    return bits;
}

uint32_t decode_id_29bit(const IdBits& bits) {
    uint32_t id = 0;
    for (int i = 0; i < 29; ++i) {
        if (bits[static_cast<size_t>(i)] > 1) throw std::invalid_argument("bit value not 0/1");
        id = (id << 1) | bits[static_cast<size_t>(i)];
    }
    return id;
}

}  // namespace canids
