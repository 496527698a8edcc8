#include "canids/framing.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "canids/rng.hpp"
#include "canids/serialize.hpp"

namespace canids {

int LabelSpace::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

void LabelSpace::validate() const {
    if (names.empty()) throw FramingError("label space is empty");
    std::set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw FramingError("label space contains an empty name");
        if (!seen.insert(n).second) throw FramingError("duplicate label name: " + n);
    }
}

std::vector<int64_t> FrameSet::class_histogram() const {
    std::vector<int64_t> h(static_cast<size_t>(labels.size()), 0);
    for (const Frame& f : frames) {
        if (f.label >= h.size()) throw FramingError("frame label outside label space");
        ++h[f.label];
    }
    return h;
}

int64_t frame_count(int64_t num_records, int stride) {
    if (stride <= 0) throw FramingError("stride must be positive");
    if (num_records < kWindow) return 0;
    return (num_records - kWindow) / stride + 1;
}

int label_window(const MsgFlag* flags, size_t n, int attack_class) {
    for (size_t i = 0; i < n; ++i)
        if (flags[i] == MsgFlag::Injected) return attack_class;
    return 0;
}

FrameSet build_frames(const std::vector<CanRecord>& records, int stride, int attack_class,
                      const LabelSpace& labels, const std::string& source_name) {
    labels.validate();
    if (stride <= 0) throw FramingError("stride must be positive");
    if (attack_class < 0 || attack_class >= labels.size())
        throw FramingError("attack_class outside label space");

    FrameSet set;
    set.labels = labels;
    set.stride = stride;
    if (!source_name.empty()) set.sources.push_back(source_name);

    int64_t n = frame_count(static_cast<int64_t>(records.size()), stride);
    set.frames.reserve(static_cast<size_t>(n));

    std::array<MsgFlag, kWindow> flags;
    for (int64_t w = 0; w < n; ++w) {
        size_t start = static_cast<size_t>(w) * static_cast<size_t>(stride);
        Frame f;
        for (int row = 0; row < kWindow; ++row) {
            const CanRecord& r = records[start + static_cast<size_t>(row)];
            flags[static_cast<size_t>(row)] = r.flag;
            uint32_t id = r.can_id;
            for (int col = 0; col < kWindow; ++col)
                if ((id >> (kWindow - 1 - col)) & 1u) f.set(row, col, true);
        }
        f.label = static_cast<uint16_t>(label_window(flags.data(), flags.size(), attack_class));
        set.frames.push_back(f);
    }
    return set;
}

void merge_framesets(FrameSet& dst, const FrameSet& src) {
    if (dst.frames.empty() && dst.labels.names.empty()) {
        dst = src;
        return;
    }
    if (!(dst.labels == src.labels)) throw FramingError("cannot merge: label spaces differ");
    if (dst.stride != src.stride) throw FramingError("cannot merge: strides differ");
    dst.frames.insert(dst.frames.end(), src.frames.begin(), src.frames.end());
    dst.sources.insert(dst.sources.end(), src.sources.begin(), src.sources.end());
}

std::pair<FrameSet, FrameSet> split_train_test(const FrameSet& set, double train_fraction,
                                               uint64_t seed) {
    if (set.frames.empty()) throw FramingError("cannot split an empty frame set");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw FramingError("train_fraction must lie in (0, 1)");

    Rng rng(seed);
    std::vector<int64_t> order = rng.permutation(set.size());
    int64_t n_train = std::llround(train_fraction * static_cast<double>(set.size()));

    FrameSet train, test;
    train.labels = test.labels = set.labels;
    train.stride = test.stride = set.stride;
    train.sources = test.sources = set.sources;
    train.frames.reserve(static_cast<size_t>(n_train));
    test.frames.reserve(set.frames.size() - static_cast<size_t>(n_train));
    for (int64_t i = 0; i < set.size(); ++i) {
        const Frame& f = set.frames[static_cast<size_t>(order[static_cast<size_t>(i)])];
        (i < n_train ? train : test).frames.push_back(f);
    }
    return {std::move(train), std::move(test)};
}

namespace {
constexpr char kMagic[4] = {'C', 'A', 'N', 'F'};
constexpr uint16_t kVersion = 1;
}  // namespace

void pack_frames(const FrameSet& set, std::ostream& out) {
    set.labels.validate();
    io::write_bytes(out, kMagic, 4);
    io::write_le<uint16_t>(out, kVersion);
    io::write_le<uint16_t>(out, static_cast<uint16_t>(kWindow));
    io::write_le<uint16_t>(out, static_cast<uint16_t>(set.labels.size()));
    for (const auto& name : set.labels.names) io::write_str(out, name);
    io::write_le<uint64_t>(out, static_cast<uint64_t>(set.frames.size()));
    for (const Frame& f : set.frames) {
        if (f.label >= set.labels.names.size())
            throw FramingError("frame label outside label space");
        io::write_le<uint16_t>(out, f.label);
        io::write_bytes(out, f.bits.data(), f.bits.size());
    }
}

void pack_frames_file(const FrameSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FramingError("cannot open " + path + " for writing");
    pack_frames(set, out);
    out.flush();
    if (!out) throw FramingError("write failed: " + path);
}

namespace {

FrameSet unpack_frames_impl(std::istream& in) {
    char magic[4];
    io::read_bytes(in, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FramingError("bad magic, not a frame container");
    uint16_t version = io::read_le<uint16_t>(in);
    if (version != kVersion)
        throw FramingError("unsupported container version " + std::to_string(version));
    uint16_t window = io::read_le<uint16_t>(in);
    if (window != kWindow)
        throw FramingError("unsupported window size " + std::to_string(window));

    FrameSet set;
    uint16_t label_count = io::read_le<uint16_t>(in);
    if (label_count == 0) throw FramingError("container has no labels");
    set.labels.names.reserve(label_count);
    for (uint16_t i = 0; i < label_count; ++i) set.labels.names.push_back(io::read_str(in));
    set.labels.validate();

    uint64_t count = io::read_le<uint64_t>(in);
    set.frames.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        Frame f;
        f.label = io::read_le<uint16_t>(in);
        if (f.label >= label_count) throw FramingError("frame label outside label space");
        io::read_bytes(in, f.bits.data(), f.bits.size());
        if (f.bits.back() & 0x7f) throw FramingError("nonzero padding bits in frame");
        set.frames.push_back(f);
    }
    return set;
}

}  // namespace

FrameSet unpack_frames(std::istream& in) {
    try {
        return unpack_frames_impl(in);
    } catch (const FramingError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw FramingError(std::string("truncated or unreadable container: ") + e.what());
    }
}

FrameSet unpack_frames_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FramingError("cannot open " + path);
    try {
        return unpack_frames(in);
    } catch (const std::exception& e) {
        throw FramingError(path + ": " + e.what());
    }
}

void frame_to_floats(const Frame& f, float* out) {
    for (int b = 0; b < kFrameBits; ++b)
        out[b] = static_cast<float>((f.bits[static_cast<size_t>(b >> 3)] >> (7 - (b & 7))) & 1);
}

}  // namespace canids
