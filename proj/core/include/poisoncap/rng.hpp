#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace poisoncap {

// Deterministic RNG used everywhere seeded randomness is needed.
//
// mt19937_64 itself is pinned bit-for-bit by the C++ standard, so the raw
// stream is portable. The standard *distributions* are not (their mapping is
// implementation-defined), which is why the uniform mappings below are done
// by hand: identical seeds must give identical traces, models and reports on
// any toolchain.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1) with 53 random mantissa bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    std::uint32_t next_u32() { return static_cast<std::uint32_t>(gen_() >> 32); }

    // Uniform integer in [0, n). Multiply-shift mapping; the tiny modulo bias
    // of the naive approach is avoided and the result stays portable.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

private:
    std::mt19937_64 gen_;
};

// Stable seed derivation: one master seed fans out into independent module
// seeds without overlapping streams ("synth", "train", ...). FNV-1a over the
// tag, then a splitmix64 finalizer to decorrelate.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    std::uint64_t z = master ^ h;
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index) {
    return derive_seed(master ^ (0x9e3779b97f4a7c15ull * (index + 1)), tag);
}

} // namespace poisoncap
