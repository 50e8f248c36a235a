#pragma once

#include <vector>

#include "mskrig/common.hpp"
#include "mskrig/kernels.hpp"

namespace mskrig {

// Semivariance estimates in uniform distance bins over [0, max_lag). Empty
// bins keep count 0 and a NaN estimate.
struct EmpiricalVariogram {
    std::vector<double> lag;   // bin centers, strictly increasing
    std::vector<double> gamma; // (1/2N_b) sum of squared increments
    std::vector<long> count;   // pairs per bin
    double max_lag = 0.0;

    long n_nonempty() const;
};

// Stationary small-scale structure: tapered correlation times a sill, plus a
// nugget. The taper range is fixed by the modeling budget, never fitted.
struct SmallScaleModel {
    KernelFamily base = KernelFamily::exponential;
    double scale = 1.0;
    double sill = 1.0;
    KernelFamily taper = KernelFamily::spherical;
    double taper_range = 0.0;
    double nugget = 0.0;

    double correlation(double h) const; // base correlation times taper
    double variogram(double h) const;   // nugget 1{h>0} + sill (1 - correlation)
    double ratio() const;               // nugget / sill
    TaperedKernel kernel() const;       // sill folded into the kernel
};

// gamma(bin) = (1/2N) sum (z_i - z_j)^2 over pairs with distance in the bin;
// pairs at distance >= max_lag are ignored. Pair enumeration uses the grid
// index, so cost is near-linear when max_lag is small against the domain.
EmpiricalVariogram empirical_variogram(const PointSet& data, double max_lag, long n_bins);

// Thrown when no optimizer restart converges; carries the best iterate so the
// caller can still inspect it.
struct VariogramFitError : NumericError {
    VariogramFitError(const std::string& msg, SmallScaleModel best_iterate)
        : NumericError(msg), best(best_iterate) {}
    SmallScaleModel best;
};

// Weighted least squares against the empirical variogram, weights count/h^2,
// over (sill, scale, nugget) in log space; Nelder-Mead with three
// deterministic restarts. The scale is kept inside [tau/10, 10 tau] by
// projection. Needs at least 3 nonempty bins. An all-zero variogram returns
// exact zero sill and nugget.
SmallScaleModel fit_small_scale(const EmpiricalVariogram& v, const SmallScaleModel& tmpl);

// WLS objective of a candidate model against an empirical variogram; exposed
// for diagnostics and optimality checks.
double variogram_wls_objective(const EmpiricalVariogram& v, const SmallScaleModel& m);

} // namespace mskrig
