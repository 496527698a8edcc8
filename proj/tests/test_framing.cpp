#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sstream>

#include "canids/framing.hpp"
#include "canids/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace canids;

namespace {

LabelSpace two_classes() { return LabelSpace{{"normal", "dos"}}; }

std::vector<CanRecord> make_records(int n, uint64_t seed = 1) {
    Rng rng(seed);
    std::vector<CanRecord> rec(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        rec[static_cast<size_t>(i)].timestamp = 0.001 * i;
        rec[static_cast<size_t>(i)].can_id = rng.next_u32() & kMaxCanId;
        rec[static_cast<size_t>(i)].dlc = 8;
    }
    return rec;
}

}  // namespace

TEST_CASE("window count formula") {
    CHECK(frame_count(28, 15) == 0);
    CHECK(frame_count(29, 15) == 1);
    CHECK(frame_count(43, 15) == 1);
    CHECK(frame_count(44, 15) == 2);
    CHECK(frame_count(100, 15) == 5);
    CHECK(frame_count(100, 1) == 72);
    CHECK(frame_count(0, 15) == 0);
}

TEST_CASE("window count matches naive enumeration on random sizes") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        int64_t n = static_cast<int64_t>(rng.uniform_int(400));
        int stride = 1 + static_cast<int>(rng.uniform_int(40));
        CHECK(frame_count(n, stride) ==
              static_cast<int64_t>(oracle::window_starts(n, kWindow, stride).size()));
    }
}

TEST_CASE("frames copy id bits row by row") {
    std::vector<CanRecord> rec = make_records(29 + 15);
    FrameSet set = build_frames(rec, 15, 1, two_classes());
    REQUIRE(set.size() == 2);

    for (int64_t f = 0; f < set.size(); ++f) {
        int64_t start = f * 15;
        for (int row = 0; row < kWindow; ++row) {
            IdBits bits = encode_id_29bit(rec[static_cast<size_t>(start + row)].can_id);
            for (int col = 0; col < kWindow; ++col)
                CHECK(set.frames[static_cast<size_t>(f)].get(row, col) == (bits[static_cast<size_t>(col)] != 0));
        }
    }
}

TEST_CASE("window label is the attack class when anything in it is injected") {
    std::vector<MsgFlag> flags(29, MsgFlag::Normal);
    CHECK(label_window(flags.data(), flags.size(), 1) == 0);
    flags[14] = MsgFlag::Injected;
    CHECK(label_window(flags.data(), flags.size(), 1) == 1);
    flags.assign(29, MsgFlag::Injected);
    CHECK(label_window(flags.data(), flags.size(), 3) == 3);
}

TEST_CASE("frame labels follow the injected flags") {
    std::vector<CanRecord> rec = make_records(29 * 3);
    // second window (records 15..43) gets one injected message at 20
    rec[20].flag = MsgFlag::Injected;
    FrameSet set = build_frames(rec, 15, 1, two_classes());
    REQUIRE(set.size() >= 2);
    CHECK(set.frames[0].label == 1);  // record 20 also sits in window 0 (0..28)
    CHECK(set.frames[1].label == 1);
    CHECK(set.frames[2].label == 0);
}

TEST_CASE("fewer than a window of records yields an empty set") {
    std::vector<CanRecord> rec = make_records(28);
    FrameSet set = build_frames(rec, 15, 1, two_classes());
    CHECK(set.size() == 0);
}

TEST_CASE("merge demands matching label spaces and strides") {
    std::vector<CanRecord> rec = make_records(40);
    FrameSet a = build_frames(rec, 15, 1, two_classes(), "a.csv");
    FrameSet b = build_frames(rec, 15, 1, two_classes(), "b.csv");
    merge_framesets(a, b);
    CHECK(a.size() == 2);
    CHECK(a.sources.size() == 2);

    FrameSet c = build_frames(rec, 10, 1, two_classes());
    CHECK_THROWS_AS(merge_framesets(a, c), FramingError);

    FrameSet d = build_frames(rec, 15, 1, LabelSpace{{"normal", "fuzzy"}});
    CHECK_THROWS_AS(merge_framesets(a, d), FramingError);
}

TEST_CASE("merging into an empty set adopts the source") {
    FrameSet dst;
    std::vector<CanRecord> rec = make_records(40);
    FrameSet src = build_frames(rec, 10, 1, two_classes());
    dst.labels = two_classes();
    dst.stride = 10;
    merge_framesets(dst, src);
    CHECK(dst.size() == src.size());
}

TEST_CASE("train/test split partitions deterministically") {
    std::vector<CanRecord> rec = make_records(29 + 9 * 15);
    FrameSet set = build_frames(rec, 15, 1, two_classes());
    REQUIRE(set.size() == 10);

    auto [train, test] = split_train_test(set, 0.7, 99);
    CHECK(train.size() == 7);
    CHECK(test.size() == 3);

    // partition: every frame appears exactly once across the two halves
    std::vector<int> seen(10, 0);
    auto mark = [&](const FrameSet& part) {
        for (const Frame& f : part.frames)
            for (int64_t i = 0; i < set.size(); ++i)
                if (set.frames[static_cast<size_t>(i)] == f) ++seen[static_cast<size_t>(i)];
    };
    mark(train);
    mark(test);
    for (int s : seen) CHECK(s == 1);

    auto [train2, test2] = split_train_test(set, 0.7, 99);
    CHECK(train2.frames == train.frames);
    CHECK(test2.frames == test.frames);

    auto [train3, test3] = split_train_test(set, 0.7, 100);
    CHECK(train3.frames != train.frames);  // different seed, different shuffle

    CHECK_THROWS_AS(split_train_test(set, 0.0, 1), FramingError);
    CHECK_THROWS_AS(split_train_test(set, 1.0, 1), FramingError);
}

TEST_CASE("pack and unpack round-trip") {
    std::vector<CanRecord> rec = make_records(200, 7);
    rec[50].flag = MsgFlag::Injected;
    FrameSet set = build_frames(rec, 10, 1, two_classes(), "x.csv");

    std::stringstream buf;
    pack_frames(set, buf);
    FrameSet back = unpack_frames(buf);
    CHECK(back.labels == set.labels);
    CHECK(back.frames == set.frames);
    // stride is in-memory provenance only; the container does not carry it
    CHECK(back.stride == kDefaultStrideSource);
}

TEST_CASE("unpack rejects damaged containers") {
    std::vector<CanRecord> rec = make_records(60);
    FrameSet set = build_frames(rec, 15, 1, two_classes());
    std::stringstream buf;
    pack_frames(set, buf);
    std::string bytes = buf.str();

    SUBCASE("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::istringstream in(bad);
        CHECK_THROWS_AS(unpack_frames(in), FramingError);
    }
    SUBCASE("truncated") {
        std::istringstream in(bytes.substr(0, bytes.size() - 5));
        CHECK_THROWS_AS(unpack_frames(in), FramingError);
    }
    SUBCASE("nonzero padding bits") {
        std::string bad = bytes;
        bad[bytes.size() - 1] = static_cast<char>(0x01);  // last 7 bits must be zero
        std::istringstream in(bad);
        CHECK_THROWS_AS(unpack_frames(in), FramingError);
    }
    SUBCASE("frame label beyond the label count") {
        std::vector<CanRecord> rec2 = make_records(60);
        rec2[30].flag = MsgFlag::Injected;
        FrameSet hot = build_frames(rec2, 15, 1, two_classes());
        std::stringstream buf2;
        pack_frames(hot, buf2);
        std::string b2 = buf2.str();
        // each frame is a u16 label plus 106 bit bytes, so the last frame's
        // label sits 108 bytes before the end of the stream
        b2[b2.size() - 108] = static_cast<char>(0xff);
        b2[b2.size() - 107] = static_cast<char>(0xff);
        std::istringstream in(b2);
        CHECK_THROWS_AS(unpack_frames(in), FramingError);
    }
}

TEST_CASE("bit accessors agree with float expansion") {
    std::vector<CanRecord> rec = make_records(29, 21);
    FrameSet set = build_frames(rec, 15, 0, two_classes());
    REQUIRE(set.size() == 1);
    float x[kFrameBits];
    frame_to_floats(set.frames[0], x);
    for (int r = 0; r < kWindow; ++r)
        for (int c = 0; c < kWindow; ++c)
            CHECK(x[r * kWindow + c] == (set.frames[0].get(r, c) ? 1.0f : 0.0f));
}

TEST_CASE("class histogram counts labels") {
    std::vector<CanRecord> rec = make_records(29 * 4);
    rec[40].flag = MsgFlag::Injected;
    FrameSet set = build_frames(rec, 29, 1, two_classes());  // non-overlapping windows
    REQUIRE(set.size() == 4);
    std::vector<int64_t> h = set.class_histogram();
    CHECK(h.size() == 2);
    CHECK(h[0] == 3);
    CHECK(h[1] == 1);
}

TEST_CASE("default strides") {
    CHECK(kDefaultStrideSource == 15);
    CHECK(kDefaultStrideTarget == 10);
    CHECK(kWindow == 29);
    CHECK(kFrameBytes == 106);
}
