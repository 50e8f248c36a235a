#include <doctest.h>

#include <set>
#include <vector>

#include "mskrig/rng.hpp"

using namespace mskrig;

TEST_CASE("streams with the same seed and tag are identical") {
    RngStream a(42, "alpha"), b(42, "alpha");
    for (int i = 0; i < 1000; ++i) CHECK(a.uniform01() == b.uniform01());
    RngStream c(42, "alpha"), d(42, "alpha");
    for (int i = 0; i < 200; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("different tags or seeds give different streams") {
    CHECK(derive_stream_seed(7, "a") != derive_stream_seed(7, "b"));
    CHECK(derive_stream_seed(7, "a") != derive_stream_seed(8, "a"));
    RngStream a(7, "waves"), b(7, "samples");
    int same = 0;
    for (int i = 0; i < 100; ++i)
        if (a.uniform01() == b.uniform01()) ++same;
    CHECK(same == 0);
}

TEST_CASE("uniform01 stays in the half-open unit interval") {
    RngStream r(1, "u");
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("bounded integers cover every residue without exceeding the bound") {
    RngStream r(3, "ints");
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const std::uint64_t v = r.integer(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("normals have roughly standard moments") {
    RngStream r(11, "n");
    const int n = 50000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = r.normal();
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(var - 1.0) < 0.03);
}
