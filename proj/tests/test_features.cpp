#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "poisoncap/features.hpp"
#include "poisoncap/pcap.hpp"
#include "poisoncap/rng.hpp"

#include "oracle_features.hpp"
#include "support.hpp"

using namespace poisoncap;
namespace ts = testsupport;

TEST_SUITE_BEGIN("features");

namespace {

constexpr std::uint32_t kA = 0x0a000001;
constexpr std::uint32_t kB = 0x0a000002;

// Four UDP packets on one socket, alternating direction, frame sizes
// 60/80/100/120 at t = 0/1/2/3 seconds. With one-second gaps every decay
// factor at lambda = 1 is an exact power of two, so the expected values
// below are closed forms the incremental extractor must reproduce to the
// last few ulps. (Frame size = 42-byte Ethernet+IPv4+UDP scaffolding plus
// payload.)
Trace dialogue_fixture() {
    Trace t;
    t.packets.push_back(ts::make_udp(0, kA, kB, 1111, 2222, 18));          // 60
    t.packets.push_back(ts::make_udp(1'000'000, kB, kA, 2222, 1111, 38));  // 80
    t.packets.push_back(ts::make_udp(2'000'000, kA, kB, 1111, 2222, 58));  // 100
    t.packets.push_back(ts::make_udp(3'000'000, kB, kA, 2222, 1111, 78));  // 120
    return t;
}

// Column offsets inside one 23-column decay block.
enum : std::size_t {
    kMacW = 0, kMacMean, kMacStd,
    kSrcW, kSrcMean, kSrcStd,
    kChW, kChMean, kChStd, kChMag, kChRadius, kChCov, kChCorr,
    kSoW, kSoMean, kSoStd, kSoMag, kSoRadius, kSoCov, kSoCorr,
    kJitW, kJitMean, kJitStd,
};

doctest::Approx near_val(double v) { return doctest::Approx(v).epsilon(1e-14); }

} // namespace

TEST_CASE("fixture frame sizes are what the closed forms assume") {
    const Trace t = dialogue_fixture();
    CHECK(frame_size(t.packets[0]) == 60);
    CHECK(frame_size(t.packets[1]) == 80);
    CHECK(frame_size(t.packets[2]) == 100);
    CHECK(frame_size(t.packets[3]) == 120);
}

TEST_CASE("hand-computed damped statistics at lambda = 1") {
    const auto rows = extract(dialogue_fixture(), FeatureSet::All, "x");
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) REQUIRE(r.values.size() == kFullWidth);
    const std::size_t base = 2 * kStatsPerRate; // lambda order 5, 3, [1], ...

    // Row 0 (t=0, A->B, 60B): first packet everywhere.
    {
        const auto& v = rows[0].values;
        CHECK(v[base + kMacW] == 1.0);
        CHECK(v[base + kMacMean] == 60.0);
        CHECK(v[base + kMacStd] == 0.0);
        CHECK(v[base + kSrcW] == 1.0);
        CHECK(v[base + kChW] == 1.0);
        CHECK(v[base + kChMean] == 60.0);
        CHECK(v[base + kChMag] == 60.0); // other side silent: sqrt(60^2+0)
        CHECK(v[base + kChRadius] == 0.0);
        CHECK(v[base + kChCov] == 0.0);
        CHECK(v[base + kChCorr] == 0.0); // 0/0 reported as 0
        CHECK(v[base + kJitW] == 0.0);   // first arrival: no gap sample
        CHECK(v[base + kJitMean] == 0.0);
    }

    // Row 1 (t=1s, B->A, 80B): the B side opens; means are decay-invariant,
    // so the channel magnitude is the exact 3-4-5 triangle sqrt(60^2+80^2).
    {
        const auto& v = rows[1].values;
        CHECK(v[base + kMacW] == 1.0); // fresh MAC+IP key for B
        CHECK(v[base + kMacMean] == 80.0);
        CHECK(v[base + kChW] == 1.0);
        CHECK(v[base + kChMean] == 80.0);
        CHECK(v[base + kChMag] == near_val(100.0));
        CHECK(v[base + kChRadius] == 0.0);
        CHECK(v[base + kChCov] == 0.0);
        CHECK(v[base + kJitW] == 0.0); // first arrival on the B->A direction
    }

    // Row 2 (t=2s, A->B, 100B): A's history is {60 @ weight 1/4, 100 @ 1}.
    {
        const auto& v = rows[2].values;
        CHECK(v[base + kMacW] == near_val(1.25));
        CHECK(v[base + kMacMean] == near_val(92.0));   // 115 / 1.25
        CHECK(v[base + kMacStd] == near_val(16.0));    // sqrt(8720 - 92^2)
        CHECK(v[base + kChW] == near_val(1.25));
        CHECK(v[base + kChMag] == near_val(std::sqrt(92.0 * 92 + 80.0 * 80)));
        CHECK(v[base + kChRadius] == near_val(256.0)); // sqrt(256^2 + 0)
        CHECK(v[base + kChCov] == 0.0); // opposite residual still zero
        CHECK(v[base + kChCorr] == 0.0); // B side still constant: denom 0
        CHECK(v[base + kJitW] == 1.0);   // one A->B gap sample
        CHECK(v[base + kJitMean] == near_val(2.0));
        CHECK(v[base + kJitStd] == 0.0);
    }

    // Row 3 (t=3s, B->A, 120B): every statistic has a genuine value.
    {
        const auto& v = rows[3].values;
        CHECK(v[base + kMacW] == near_val(1.25));
        CHECK(v[base + kMacMean] == near_val(112.0)); // 140 / 1.25
        CHECK(v[base + kMacStd] == near_val(16.0));
        CHECK(v[base + kSrcW] == near_val(1.25));
        CHECK(v[base + kSrcMean] == near_val(112.0));
        CHECK(v[base + kSrcStd] == near_val(16.0));

        CHECK(v[base + kChW] == near_val(1.25));
        CHECK(v[base + kChMean] == near_val(112.0));
        CHECK(v[base + kChStd] == near_val(16.0));
        CHECK(v[base + kChMag] == near_val(std::sqrt(21008.0))); // 92,112
        CHECK(v[base + kChRadius] == near_val(256.0 * std::sqrt(2.0)));
        CHECK(v[base + kChCov] == near_val(512.0 / 15.0));  // 64 / 1.875
        CHECK(v[base + kChCorr] == near_val(2.0 / 15.0));   // cov / (16*16)

        // The socket carries exactly the channel's history here.
        for (std::size_t o = 0; o < 7; ++o)
            CHECK(v[base + kSoW + o] == v[base + kChW + o]);

        CHECK(v[base + kJitW] == 1.0);
        CHECK(v[base + kJitMean] == near_val(2.0));
        CHECK(v[base + kJitStd] == 0.0);
    }
}

TEST_CASE("first packet's blocks are identical across decay rates") {
    const auto rows = extract(dialogue_fixture(), FeatureSet::All, "x");
    const auto& v = rows[0].values;
    for (std::size_t r = 1; r < kDecayRates.size(); ++r)
        for (std::size_t o = 0; o < kStatsPerRate; ++o)
            CHECK(v[r * kStatsPerRate + o] == v[o]);
}

TEST_CASE("weight halves per second at lambda = 1") {
    Trace t;
    t.packets.push_back(ts::make_udp(0, kA, kB, 1, 2, 10));
    t.packets.push_back(ts::make_udp(1'000'000, kA, kB, 1, 2, 10));
    const auto rows = extract(t, FeatureSet::All, "x");
    const std::size_t base = 2 * kStatsPerRate;
    CHECK(rows[1].values[base + kMacW] == near_val(1.5)); // 1 * 0.5 + 1
    // And the faster rates decay harder: 2^-5 and 2^-3 of the first packet.
    CHECK(rows[1].values[0 * kStatsPerRate + kMacW] == near_val(1.0 + 0.03125));
    CHECK(rows[1].values[1 * kStatsPerRate + kMacW] == near_val(1.125));
}

TEST_CASE("every cell matches the full-history oracle on random traffic") {
    Rng rng(0xFEA7);
    const Trace t = ts::random_trace(rng, 100, 140);
    const auto lib = extract(t, FeatureSet::All, "x");
    const ts::FeatureOracle oracle(t);
    REQUIRE(lib.size() == oracle.rows.size());
    const ts::OracleTally tally = ts::compare_rows(lib, oracle);
    CHECK(tally.failed == 0);
    CHECK(tally.rel > 0);
}

TEST_CASE("rows are emitted for ipv4 packets only, indexed to the trace") {
    Trace t;
    t.packets.push_back(ts::make_udp(0, kA, kB, 1, 2, 10));
    Packet arp;
    arp.ts_usec = 500;
    arp.ethertype = 0x0806;
    arp.payload.assign(28, 0x22);
    t.packets.push_back(arp);
    t.packets.push_back(ts::make_udp(1000, kA, kB, 1, 2, 10));

    const auto rows = extract(t, FeatureSet::All, "lbl");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].packet_index == 0);
    CHECK(rows[1].packet_index == 2);
    CHECK(rows[0].label == "lbl");

    FeatureExtractor ex;
    std::vector<double> row;
    CHECK(!ex.consume(arp, row));
}

TEST_CASE("time going backwards is an ordering error") {
    Trace t;
    t.packets.push_back(ts::make_udp(5000, kA, kB, 1, 2, 10));
    t.packets.push_back(ts::make_udp(0, kA, kB, 1, 2, 10));
    CHECK_THROWS_AS(extract(t, FeatureSet::All, "x"), FeatureError);
}

TEST_CASE("subset widths and column names") {
    CHECK(feature_width(FeatureSet::All) == 115);
    CHECK(feature_width(FeatureSet::Size) == 40);
    CHECK(feature_width(FeatureSet::Socket) == 35);
    CHECK(feature_width(FeatureSet::Jitter) == 15);

    const auto all = feature_column_names(FeatureSet::All);
    REQUIRE(all.size() == 115);
    CHECK(all[0] == "srcmac_ip_w_5");
    CHECK(all[12] == "channel_corr_5");
    CHECK(all[22] == "jitter_std_5");
    CHECK(all[23] == "srcmac_ip_w_3");
    CHECK(all[46] == "srcmac_ip_w_1");
    CHECK(all.back() == "jitter_std_0.01");

    const auto size = feature_column_names(FeatureSet::Size);
    REQUIRE(size.size() == 40);
    CHECK(size[0] == "srcmac_ip_w_5");
    CHECK(size[6] == "channel_mean_5");
    CHECK(size[7] == "channel_std_5");
    CHECK(size[8] == "srcmac_ip_w_3");

    const auto jit = feature_column_names(FeatureSet::Jitter);
    REQUIRE(jit.size() == 15);
    CHECK(jit[0] == "jitter_w_5");
    CHECK(jit[14] == "jitter_std_0.01");
}

TEST_CASE("feature set names parse and print") {
    for (FeatureSet fs : {FeatureSet::Jitter, FeatureSet::Size,
                          FeatureSet::Socket, FeatureSet::All})
        CHECK(parse_feature_set(to_string(fs)) == fs);
    CHECK_THROWS_AS(parse_feature_set("bogus"), FeatureError);
}

TEST_CASE("subsets are projections of the full row") {
    Rng rng(0x5E7);
    const Trace t = ts::random_trace(rng, 50, 80);
    const auto all = extract(t, FeatureSet::All, "x");

    struct Sub {
        FeatureSet fs;
        std::vector<std::size_t> offsets; // within one decay block
    };
    const std::vector<Sub> subs = {
        {FeatureSet::Size, {0, 1, 2, 3, 4, 5, 7, 8}},
        {FeatureSet::Socket, {13, 14, 15, 16, 17, 18, 19}},
        {FeatureSet::Jitter, {20, 21, 22}},
    };
    for (const Sub& sub : subs) {
        const auto got = extract(t, sub.fs, "x");
        REQUIRE(got.size() == all.size());
        for (std::size_t r = 0; r < got.size(); ++r) {
            CHECK(got[r].packet_index == all[r].packet_index);
            REQUIRE(got[r].values.size() ==
                    sub.offsets.size() * kDecayRates.size());
            std::size_t k = 0;
            for (std::size_t rate = 0; rate < kDecayRates.size(); ++rate)
                for (std::size_t o : sub.offsets)
                    CHECK(got[r].values[k++] ==
                          all[r].values[rate * kStatsPerRate + o]);
        }
    }
}

TEST_CASE("csv round trip preserves every bit") {
    ts::TempDir dir;
    Rng rng(0xC5F);
    const Trace t = ts::random_trace(rng, 30, 50);
    const auto rows = extract(t, FeatureSet::All, "some-label");
    const std::string path = (dir.path() / "rows.csv").string();
    write_features_csv(path, rows, FeatureSet::All);

    // Header names the columns.
    const std::string content = ts::slurp(path);
    const std::string header = content.substr(0, content.find('\n'));
    CHECK(header.rfind("packet_index,label,srcmac_ip_w_5,", 0) == 0);
    CHECK(header.find("jitter_std_0.01") != std::string::npos);

    const auto back = read_features_csv(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        CHECK(back[r].packet_index == rows[r].packet_index);
        CHECK(back[r].label == rows[r].label);
        REQUIRE(back[r].values.size() == rows[r].values.size());
        for (std::size_t c = 0; c < rows[r].values.size(); ++c)
            CHECK(back[r].values[c] == rows[r].values[c]); // exact
    }
}

TEST_CASE("csv reader rejects nonsense") {
    ts::TempDir dir;
    CHECK_THROWS_AS(read_features_csv((dir.path() / "absent.csv").string()),
                    FeatureError);
    const std::string empty = (dir.path() / "empty.csv").string();
    { std::FILE* f = std::fopen(empty.c_str(), "w"); std::fclose(f); }
    CHECK_THROWS_AS(read_features_csv(empty), FeatureError);
}

TEST_SUITE_END();
