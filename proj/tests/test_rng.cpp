#include "doctest.h"

#include <random>
#include <set>

#include "poisoncap/rng.hpp"

using namespace poisoncap;

TEST_SUITE_BEGIN("rng");

TEST_CASE("the raw stream is standard mt19937_64") {
    // The C++ standard pins the 10000th draw of a default-seeded (5489)
    // mt19937_64, so this anchors the generator across platforms.
    Rng rng(5489);
    std::uint64_t last = 0;
    for (int i = 0; i < 10000; ++i) last = rng.next_u64();
    CHECK(last == 9981545732273789042ull);
}

TEST_CASE("derived draws are fixed maps of the raw stream") {
    std::mt19937_64 ref(123);
    Rng a(123), b(123), c(123);
    for (int i = 0; i < 1000; ++i) {
        const std::uint64_t x = ref();
        CHECK(a.uniform() == static_cast<double>(x >> 11) * 0x1.0p-53);
        CHECK(b.next_u32() == static_cast<std::uint32_t>(x >> 32));
        const std::uint64_t n = 1 + (i % 97) * 13;
        const std::uint64_t expected = static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(x) * n) >> 64);
        CHECK(c.below(n) == expected);
    }
}

TEST_CASE("ranges hold") {
    Rng rng(7);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(17) < 17);
        const double v = rng.uniform(3.0, 5.0);
        CHECK(v >= 3.0);
        CHECK(v < 5.0);
    }
}

TEST_CASE("seeding is reproducible and seed-sensitive") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_equal_c = false;
    for (int i = 0; i < 64; ++i) {
        const std::uint64_t x = a.next_u64();
        all_equal = all_equal && x == b.next_u64();
        any_equal_c = any_equal_c || x == c.next_u64();
    }
    CHECK(all_equal);
    CHECK(!any_equal_c); // 64 collisions in a row would be miraculous
}

TEST_CASE("derive_seed separates tags, indices, and masters") {
    std::set<std::uint64_t> seen;
    seen.insert(derive_seed(1, "inject.poison"));
    seen.insert(derive_seed(1, "inject.attack"));
    seen.insert(derive_seed(1, "assemble"));
    seen.insert(derive_seed(1, "train.poisoned"));
    seen.insert(derive_seed(2, "inject.poison"));
    seen.insert(derive_seed(1, "inject.poison", 0));
    seen.insert(derive_seed(1, "inject.poison", 1));
    CHECK(seen.size() == 7);
    CHECK(derive_seed(1, "inject.poison") == derive_seed(1, "inject.poison"));
    CHECK(derive_seed(1, "x", 5) == derive_seed(1, "x", 5));
}

TEST_SUITE_END();
