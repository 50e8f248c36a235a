#include "mskrig/rng.hpp"

namespace mskrig {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_stream_seed(std::uint64_t seed, std::string_view tag) {
    // FNV-1a over the tag, then two splitmix64 scrambles against the seed.
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    std::uint64_t state = seed ^ h;
    std::uint64_t out = splitmix64(state);
    out ^= splitmix64(state);
    return out;
}

} // namespace mskrig
