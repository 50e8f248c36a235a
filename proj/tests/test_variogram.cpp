#include <doctest.h>

#include <cmath>
#include <vector>

#include "mskrig/variogram.hpp"
#include "test_helpers.hpp"

using namespace mskrig;
using namespace mskrig::testing;

TEST_CASE("empirical variogram matches the brute-force double loop") {
    RngStream rng(21, "vario");
    PointSet data;
    data.points = random_points(120, rng);
    data.values.resize(120);
    for (long i = 0; i < 120; ++i) data.values[i] = rng.normal();

    const double max_lag = 0.3;
    const long n_bins = 8;
    const EmpiricalVariogram v = empirical_variogram(data, max_lag, n_bins);

    std::vector<double> acc(static_cast<size_t>(n_bins), 0.0);
    std::vector<long> cnt(static_cast<size_t>(n_bins), 0);
    const double width = max_lag / static_cast<double>(n_bins);
    for (long i = 0; i < 120; ++i) {
        for (long j = i + 1; j < 120; ++j) {
            const double d = dist(data.points[static_cast<size_t>(i)],
                                  data.points[static_cast<size_t>(j)]);
            if (d >= max_lag) continue;
            long b = static_cast<long>(d / width);
            if (b >= n_bins) b = n_bins - 1;
            const double dz = data.values[i] - data.values[j];
            acc[static_cast<size_t>(b)] += dz * dz;
            ++cnt[static_cast<size_t>(b)];
        }
    }
    for (long b = 0; b < n_bins; ++b) {
        CHECK(v.count[static_cast<size_t>(b)] == cnt[static_cast<size_t>(b)]);
        CHECK(v.lag[static_cast<size_t>(b)] ==
              doctest::Approx((b + 0.5) * width).epsilon(1e-15));
        if (cnt[static_cast<size_t>(b)] > 0) {
            CHECK(v.gamma[static_cast<size_t>(b)] ==
                  doctest::Approx(acc[static_cast<size_t>(b)] /
                                  (2.0 * cnt[static_cast<size_t>(b)]))
                      .epsilon(1e-12));
        } else {
            CHECK(std::isnan(v.gamma[static_cast<size_t>(b)]));
        }
    }
}

TEST_CASE("empty bins keep zero counts and NaN estimates") {
    PointSet data;
    data.points = {{0.0, 0.0}, {1.0, 0.0}};
    data.values.resize(2);
    data.values << 1.0, 2.0;
    const EmpiricalVariogram v = empirical_variogram(data, 2.0, 4);
    // the single pair lands in bin 2 (distance 1.0 of max 2.0)
    CHECK(v.count[2] == 1);
    CHECK(v.gamma[2] == doctest::Approx(0.5));
    CHECK(v.count[0] == 0);
    CHECK(std::isnan(v.gamma[0]));
    CHECK(v.n_nonempty() == 1);
}

TEST_CASE("model variogram complements the tapered correlation") {
    SmallScaleModel m;
    m.base = KernelFamily::exponential;
    m.scale = 0.08;
    m.sill = 1.2;
    m.taper = KernelFamily::spherical;
    m.taper_range = 0.25;
    m.nugget = 0.3;

    CHECK(m.variogram(0.0) == 0.0);
    CHECK(m.correlation(0.0) == doctest::Approx(1.0));
    const double h = 0.05;
    CHECK(m.variogram(h) ==
          doctest::Approx(m.nugget + m.sill * (1.0 - m.correlation(h))).epsilon(1e-15));
    // beyond the taper support the variogram reaches the full sill plus nugget
    CHECK(m.variogram(0.3) == doctest::Approx(m.sill + m.nugget).epsilon(1e-15));
    CHECK(m.ratio() == doctest::Approx(0.25).epsilon(1e-15));

    const TaperedKernel k = m.kernel();
    CHECK(k(h) == doctest::Approx(m.sill * m.correlation(h)).epsilon(1e-14));
}

TEST_CASE("weighted least squares recovers a clean synthetic variogram") {
    SmallScaleModel truth;
    truth.base = KernelFamily::exponential;
    truth.scale = 0.08;
    truth.sill = 1.2;
    truth.taper = KernelFamily::spherical;
    truth.taper_range = 0.25;
    truth.nugget = 0.3;

    EmpiricalVariogram v;
    v.max_lag = 0.5;
    const long n_bins = 15;
    for (long b = 0; b < n_bins; ++b) {
        const double h = (b + 0.5) * v.max_lag / n_bins;
        v.lag.push_back(h);
        v.gamma.push_back(truth.variogram(h));
        v.count.push_back(200);
    }

    SmallScaleModel tmpl;
    tmpl.base = KernelFamily::exponential;
    tmpl.taper = KernelFamily::spherical;
    tmpl.taper_range = 0.25;
    const SmallScaleModel fit = fit_small_scale(v, tmpl);

    CHECK(variogram_wls_objective(v, fit) < 1e-8);
    CHECK(fit.sill == doctest::Approx(truth.sill).epsilon(0.02));
    CHECK(fit.scale == doctest::Approx(truth.scale).epsilon(0.02));
    CHECK(fit.nugget == doctest::Approx(truth.nugget).epsilon(0.02));
    CHECK(fit.taper_range == 0.25); // fixed, never fitted
}

TEST_CASE("an all-zero variogram returns exact zeros") {
    EmpiricalVariogram v;
    v.max_lag = 0.4;
    for (long b = 0; b < 6; ++b) {
        v.lag.push_back((b + 0.5) * v.max_lag / 6);
        v.gamma.push_back(0.0);
        v.count.push_back(50);
    }
    SmallScaleModel tmpl;
    tmpl.taper_range = 0.2;
    const SmallScaleModel fit = fit_small_scale(v, tmpl);
    CHECK(fit.sill == 0.0);
    CHECK(fit.nugget == 0.0);
}

TEST_CASE("too few nonempty bins is a configuration error") {
    EmpiricalVariogram v;
    v.max_lag = 0.4;
    v.lag = {0.05, 0.15, 0.25};
    v.gamma = {0.5, std::nan(""), std::nan("")};
    v.count = {10, 0, 0};
    SmallScaleModel tmpl;
    tmpl.taper_range = 0.2;
    CHECK_THROWS_AS(fit_small_scale(v, tmpl), ConfigError);
}

TEST_CASE("fitted scales stay inside the projection interval") {
    // data whose apparent range is far larger than the taper budget
    SmallScaleModel truth;
    truth.base = KernelFamily::exponential;
    truth.scale = 5.0;
    truth.sill = 1.0;
    truth.taper = KernelFamily::spherical;
    truth.taper_range = 0.1;
    truth.nugget = 0.0;

    EmpiricalVariogram v;
    v.max_lag = 0.2;
    for (long b = 0; b < 10; ++b) {
        const double h = (b + 0.5) * v.max_lag / 10;
        v.lag.push_back(h);
        v.gamma.push_back(truth.variogram(h));
        v.count.push_back(100);
    }
    SmallScaleModel tmpl;
    tmpl.base = KernelFamily::exponential;
    tmpl.taper = KernelFamily::spherical;
    tmpl.taper_range = 0.1;
    const SmallScaleModel fit = fit_small_scale(v, tmpl);
    CHECK(fit.scale >= 0.1 / 10.0 - 1e-12);
    CHECK(fit.scale <= 10.0 * 0.1 + 1e-12);
}
