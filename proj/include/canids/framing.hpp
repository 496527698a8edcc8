#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "canids/can_log.hpp"

namespace canids {

// Sliding-window frame construction. A frame stacks the 29-bit identifiers of
// 29 consecutive messages into a 29x29 binary matrix; the window advances by
// a configurable stride and never straddles capture files.

constexpr int kWindow = 29;
constexpr int kFrameBits = kWindow * kWindow;           // 841
constexpr int kFrameBytes = (kFrameBits + 7) / 8;       // 106, last 7 bits zero
constexpr int kDefaultStrideSource = 15;
constexpr int kDefaultStrideTarget = 10;

class FramingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LabelSpace {
    std::vector<std::string> names;  // index 0 is the attack-free class

    bool operator==(const LabelSpace&) const = default;
    int size() const { return static_cast<int>(names.size()); }
    int index_of(const std::string& name) const;
    void validate() const;  // nonempty, unique names
};

// Bits are packed row-major, most significant bit of each byte first, so
// byte 0 bit 7 is matrix position (0,0).
struct Frame {
    std::array<uint8_t, kFrameBytes> bits{};
    uint16_t label = 0;

    bool get(int row, int col) const {
        int b = row * kWindow + col;
        return (bits[static_cast<size_t>(b >> 3)] >> (7 - (b & 7))) & 1;
    }
    void set(int row, int col, bool v) {
        int b = row * kWindow + col;
        uint8_t mask = static_cast<uint8_t>(1u << (7 - (b & 7)));
        if (v)
            bits[static_cast<size_t>(b >> 3)] |= mask;
        else
            bits[static_cast<size_t>(b >> 3)] &= static_cast<uint8_t>(~mask);
    }

    bool operator==(const Frame&) const = default;
};

struct FrameSet {
    LabelSpace labels;
    int stride = kDefaultStrideSource;
    std::vector<Frame> frames;
    std::vector<std::string> sources;  // provenance, not serialized

    int64_t size() const { return static_cast<int64_t>(frames.size()); }
    std::vector<int64_t> class_histogram() const;
};

// Number of windows over m records at the given stride:
// floor((m - 29)/stride) + 1 when m >= 29, else 0.
int64_t frame_count(int64_t num_records, int stride);

// Window label: attack_class when any record in the window is injected,
// otherwise 0.
int label_window(const MsgFlag* flags, size_t n, int attack_class);

// Frames one capture. attack_class indexes labels and is applied to every
// window containing an injected record. Fewer than 29 records yield an empty
// set (the caller decides whether to warn).
FrameSet build_frames(const std::vector<CanRecord>& records, int stride, int attack_class,
                      const LabelSpace& labels, const std::string& source_name = "");

// Appends src frames to dst. Label spaces and strides must match.
void merge_framesets(FrameSet& dst, const FrameSet& src);

// Deterministic shuffled split; |train| = round(train_fraction * n).
// train_fraction must lie strictly inside (0, 1) and the set must be nonempty.
std::pair<FrameSet, FrameSet> split_train_test(const FrameSet& set, double train_fraction,
                                               uint64_t seed);

// Binary frame container. Layout, all integers little-endian:
//   "CANF" | u16 version | u16 window | u16 label_count
//   | label_count x (u16 len + utf8 name) | u64 frame_count
//   | frame_count x (u16 label + 106 packed bytes)
void pack_frames(const FrameSet& set, std::ostream& out);
void pack_frames_file(const FrameSet& set, const std::string& path);
FrameSet unpack_frames(std::istream& in);
FrameSet unpack_frames_file(const std::string& path);

// Expands a frame to 841 floats (row-major, 0.0/1.0).
void frame_to_floats(const Frame& f, float* out);

}  // namespace canids
