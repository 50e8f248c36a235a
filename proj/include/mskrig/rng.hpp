#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mskrig {

// One splitmix64 step; used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic seed for the substream named `tag`. Streams derived from the
// same run seed with different tags never share draw order, so adding draws in
// one subsystem cannot shift another's.
std::uint64_t derive_stream_seed(std::uint64_t seed, std::string_view tag);

// Seeded random stream with explicit, portable transforms. mt19937_64 is
// pinned by the standard; the transforms below are implemented here because
// std::normal_distribution is not bit-portable across standard libraries.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view tag)
        : gen_(derive_stream_seed(seed, tag)) {}

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller; the second deviate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] keeps the log argument positive
        const double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, bound) by rejection.
    std::uint64_t integer(std::uint64_t bound) {
        const std::uint64_t min = (0 - bound) % bound; // 2^64 mod bound
        std::uint64_t x;
        do {
            x = gen_();
        } while (x < min);
        return x % bound;
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mskrig
