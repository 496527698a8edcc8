#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <set>

#include "canids/traffic_synth.hpp"
#include "doctest.h"

using namespace canids;

namespace {

int64_t count_injected(const std::vector<CanRecord>& rec) {
    return std::count_if(rec.begin(), rec.end(),
                         [](const CanRecord& r) { return r.flag == MsgFlag::Injected; });
}

bool sorted_by_time(const std::vector<CanRecord>& rec) {
    return std::is_sorted(rec.begin(), rec.end(), [](const CanRecord& a, const CanRecord& b) {
        return a.timestamp < b.timestamp;
    });
}

}  // namespace

TEST_CASE("zero jitter gives an exact grid") {
    TrafficProfile p;
    p.ids.push_back({0x100, 0.01, 0.0});
    std::vector<CanRecord> rec = generate_normal_traffic(p, 1.0, 5);
    REQUIRE(rec.size() >= 95);
    for (size_t i = 1; i < rec.size(); ++i)
        CHECK(rec[i].timestamp - rec[i - 1].timestamp == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("rates follow the periods") {
    TrafficProfile p;
    p.ids.push_back({0x100, 0.01, 0.1});  // 100 msg/s
    p.ids.push_back({0x200, 0.02, 0.1});  // 50 msg/s
    CHECK(p.total_rate() == doctest::Approx(150.0));

    std::vector<CanRecord> rec = generate_normal_traffic(p, 20.0, 6);
    int64_t fast = std::count_if(rec.begin(), rec.end(),
                                 [](const CanRecord& r) { return r.can_id == 0x100; });
    int64_t slow = std::count_if(rec.begin(), rec.end(),
                                 [](const CanRecord& r) { return r.can_id == 0x200; });
    CHECK(std::abs(static_cast<double>(fast) / static_cast<double>(slow) - 2.0) < 0.1);
    CHECK(sorted_by_time(rec));
    CHECK(rec.front().timestamp >= 0.0);
}

TEST_CASE("identical seeds reproduce the capture exactly") {
    TrafficProfile p = source_vehicle_profile();
    std::vector<CanRecord> a = generate_normal_traffic(p, 2.0, 77);
    std::vector<CanRecord> b = generate_normal_traffic(p, 2.0, 77);
    CHECK(a == b);
    std::vector<CanRecord> c = generate_normal_traffic(p, 2.0, 78);
    CHECK(a != c);
}

TEST_CASE("profile validation") {
    TrafficProfile p;
    CHECK_THROWS_AS(generate_normal_traffic(p, 1.0, 1), std::invalid_argument);  // no ids
    p.ids.push_back({0x100, 0.01, 0.5});  // jitter at the monotonicity bound
    CHECK_THROWS_AS(generate_normal_traffic(p, 1.0, 1), std::invalid_argument);
    p.ids[0].jitter = 0.1;
    p.ids[0].period = 0.0;
    CHECK_THROWS_AS(generate_normal_traffic(p, 1.0, 1), std::invalid_argument);
    p.ids[0].period = 0.01;
    CHECK_THROWS_AS(generate_normal_traffic(p, 0.0, 1), std::invalid_argument);
}

TEST_CASE("dos injection floods id zero at the requested rate") {
    TrafficProfile p = source_vehicle_profile();
    std::vector<CanRecord> base = generate_normal_traffic(p, 4.0, 10);
    double span = base.back().timestamp - base.front().timestamp;
    double rate = p.total_rate() / 5.24;

    std::vector<CanRecord> mixed = inject_dos(base, rate, 11);
    CHECK(sorted_by_time(mixed));
    CHECK(mixed.size() == base.size() + static_cast<size_t>(std::llround(rate * span)));

    for (const CanRecord& r : mixed)
        if (r.flag == MsgFlag::Injected) {
            CHECK(r.can_id == 0);
            for (uint8_t b : r.payload) CHECK(b == 0);
        }

    // base records survive untouched, in order
    std::vector<CanRecord> survivors;
    for (const CanRecord& r : mixed)
        if (r.flag == MsgFlag::Normal) survivors.push_back(r);
    CHECK(survivors == base);

    double got_ratio = static_cast<double>(count_injected(mixed)) /
                       static_cast<double>(mixed.size() - static_cast<size_t>(count_injected(mixed)));
    CHECK(std::abs(got_ratio - 1.0 / 5.24) / (1.0 / 5.24) < 0.05);
}

TEST_CASE("fuzzy injection draws ids from the requested pool") {
    TrafficProfile p = target_vehicle_profile();
    std::vector<CanRecord> base = generate_normal_traffic(p, 4.0, 20);

    std::set<uint32_t> observed;
    for (const CanRecord& r : base) observed.insert(r.can_id);

    SUBCASE("observed mode stays inside the base id set") {
        std::vector<CanRecord> mixed = inject_fuzzy(base, 300.0, FuzzyIdMode::Observed, 21);
        CHECK(count_injected(mixed) > 0);
        for (const CanRecord& r : mixed)
            if (r.flag == MsgFlag::Injected) CHECK(observed.count(r.can_id) == 1);
    }

    SUBCASE("random mode roams the 29-bit space") {
        std::vector<CanRecord> mixed = inject_fuzzy(base, 300.0, FuzzyIdMode::Random29, 21);
        int64_t injected = 0, collisions = 0;
        for (const CanRecord& r : mixed)
            if (r.flag == MsgFlag::Injected) {
                ++injected;
                if (observed.count(r.can_id)) ++collisions;
            }
        REQUIRE(injected > 500);
        // 18 known ids out of 2^29: collisions should be essentially absent
        CHECK(static_cast<double>(collisions) / static_cast<double>(injected) < 0.01);
    }
}

TEST_CASE("targeted injection repeats one id and payload") {
    TrafficProfile p = source_vehicle_profile();
    std::vector<CanRecord> base = generate_normal_traffic(p, 2.0, 30);
    std::array<uint8_t, 8> payload{0x00, 0x00, 0x00, 0xff, 0x00, 0x00, 0x00, 0x00};
    std::vector<CanRecord> mixed = inject_targeted(base, 250.0, 0x043f, payload, 31);
    int64_t injected = count_injected(mixed);
    CHECK(injected > 0);
    for (const CanRecord& r : mixed)
        if (r.flag == MsgFlag::Injected) {
            CHECK(r.can_id == 0x043f);
            CHECK(r.payload == payload);
        }
    CHECK(sorted_by_time(mixed));
}

TEST_CASE("injection rejects degenerate inputs") {
    std::vector<CanRecord> empty;
    CHECK_THROWS_AS(inject_dos(empty, 100.0, 1), std::invalid_argument);
    TrafficProfile p = source_vehicle_profile();
    std::vector<CanRecord> base = generate_normal_traffic(p, 1.0, 1);
    CHECK_THROWS_AS(inject_dos(base, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(inject_targeted(base, 100.0, kMaxCanId + 1, {}, 1), std::invalid_argument);
}

TEST_CASE("preset vehicles differ") {
    TrafficProfile src = source_vehicle_profile();
    TrafficProfile tgt = target_vehicle_profile();
    CHECK(src.ids.size() == 20);
    CHECK(tgt.ids.size() == 18);
    CHECK(std::abs(src.total_rate() - 2040.0) / 2040.0 < 0.15);
    CHECK(std::abs(tgt.total_rate() - 1810.0) / 1810.0 < 0.15);

    std::set<uint32_t> src_ids, tgt_ids;
    for (const auto& i : src.ids) src_ids.insert(i.can_id);
    for (const auto& i : tgt.ids) tgt_ids.insert(i.can_id);
    CHECK(src_ids != tgt_ids);
}

TEST_CASE("label spaces of the two scenarios") {
    LabelSpace s = source_label_space();
    LabelSpace t = target_label_space();
    CHECK(s.names == std::vector<std::string>{"normal", "dos", "fuzzy", "gear", "rpm"});
    CHECK(t.names == std::vector<std::string>{"normal", "dos", "fuzzy", "malfunction"});
}

TEST_CASE("scenario presets produce the advertised captures") {
    SUBCASE("source") {
        std::vector<ScenarioCapture> caps = synth_scenario("source", 3, 2.0);
        REQUIRE(caps.size() == 5);
        CHECK(caps[0].file_name == "normal.csv");
        CHECK(caps[0].class_name == "normal");
        CHECK(count_injected(caps[0].records) == 0);
        for (size_t i = 1; i < caps.size(); ++i) CHECK(count_injected(caps[i].records) > 0);
    }
    SUBCASE("target") {
        std::vector<ScenarioCapture> caps = synth_scenario("target", 3, 2.0);
        REQUIRE(caps.size() == 4);
        for (const auto& c : caps) CHECK(sorted_by_time(c.records));
    }
    SUBCASE("same seed, same bytes") {
        std::vector<ScenarioCapture> a = synth_scenario("target", 9, 1.5);
        std::vector<ScenarioCapture> b = synth_scenario("target", 9, 1.5);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].records == b[i].records);
    }
    SUBCASE("unknown scenario") {
        CHECK_THROWS_AS(synth_scenario("city", 1, 1.0), std::invalid_argument);
    }
}
