#include "mskrig/variogram.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "mskrig/grid_index.hpp"

namespace mskrig {

long EmpiricalVariogram::n_nonempty() const {
    long k = 0;
    for (const long c : count)
        if (c > 0) ++k;
    return k;
}

double SmallScaleModel::correlation(double h) const {
    double c = base_correlation(base, h / scale);
    if (taper_range > 0.0) c *= base_correlation(taper, h / taper_range);
    return c;
}

double SmallScaleModel::variogram(double h) const {
    if (h <= 0.0) return 0.0;
    return nugget + sill * (1.0 - correlation(h));
}

double SmallScaleModel::ratio() const {
    if (sill <= 0.0) throw NumericError("nugget ratio undefined for zero sill");
    return nugget / sill;
}

TaperedKernel SmallScaleModel::kernel() const {
    return TaperedKernel{base, KernelParams{sill, scale, 0.0}, TaperSpec{taper, taper_range}};
}

EmpiricalVariogram empirical_variogram(const PointSet& data, double max_lag, long n_bins) {
    if (max_lag <= 0.0) throw ConfigError("variogram max_lag must be positive");
    if (n_bins < 2) throw ConfigError("variogram needs at least 2 bins");
    if (data.n() < 2) throw ConfigError("variogram needs at least 2 points");

    EmpiricalVariogram v;
    v.max_lag = max_lag;
    const double width = max_lag / static_cast<double>(n_bins);
    v.lag.resize(n_bins);
    for (long b = 0; b < n_bins; ++b) v.lag[b] = (static_cast<double>(b) + 0.5) * width;
    v.count.assign(n_bins, 0);
    std::vector<double> acc(n_bins, 0.0);

    NeighborGrid index(data.points, max_lag);
    const Eigen::VectorXd& z = data.values;
    index.for_each_pair(max_lag, [&](int i, int j, double d) {
        long b = static_cast<long>(d / width);
        if (b >= n_bins) b = n_bins - 1; // d < max_lag, guard roundoff only
        const double dz = z[i] - z[j];
        acc[b] += dz * dz;
        ++v.count[b];
    });

    v.gamma.assign(n_bins, std::numeric_limits<double>::quiet_NaN());
    for (long b = 0; b < n_bins; ++b)
        if (v.count[b] > 0) v.gamma[b] = acc[b] / (2.0 * static_cast<double>(v.count[b]));
    return v;
}

double variogram_wls_objective(const EmpiricalVariogram& v, const SmallScaleModel& m) {
    double obj = 0.0;
    for (size_t b = 0; b < v.lag.size(); ++b) {
        if (v.count[b] <= 0) continue;
        const double h = v.lag[b];
        const double w = static_cast<double>(v.count[b]) / (h * h);
        const double r = v.gamma[b] - m.variogram(h);
        obj += w * r * r;
    }
    return obj;
}

namespace {

struct NmResult {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    double fx = 0.0;
    bool converged = false;
};

// Standard Nelder-Mead (reflect/expand/contract/shrink) on R^3.
NmResult nelder_mead(const std::function<double(const Eigen::Vector3d&)>& f,
                     const Eigen::Vector3d& x0, double step, long max_iter, double tol) {
    constexpr int n = 3;
    std::array<Eigen::Vector3d, n + 1> xs;
    std::array<double, n + 1> fs;
    xs[0] = x0;
    for (int i = 0; i < n; ++i) {
        xs[i + 1] = x0;
        xs[i + 1][i] += step;
    }
    for (int i = 0; i <= n; ++i) fs[i] = f(xs[i]);

    NmResult res;
    for (long it = 0; it < max_iter; ++it) {
        std::array<int, n + 1> ord{0, 1, 2, 3};
        std::sort(ord.begin(), ord.end(), [&](int a, int b) { return fs[a] < fs[b]; });
        {
            std::array<Eigen::Vector3d, n + 1> xs2;
            std::array<double, n + 1> fs2;
            for (int i = 0; i <= n; ++i) {
                xs2[i] = xs[ord[i]];
                fs2[i] = fs[ord[i]];
            }
            xs = xs2;
            fs = fs2;
        }
        const double spread = std::abs(fs[n] - fs[0]);
        if (spread <= tol * (std::abs(fs[0]) + tol)) {
            res.converged = true;
            break;
        }
        Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
        for (int i = 0; i < n; ++i) centroid += xs[i];
        centroid /= static_cast<double>(n);

        const Eigen::Vector3d xr = centroid + (centroid - xs[n]);
        const double fr = f(xr);
        if (fr < fs[0]) {
            const Eigen::Vector3d xe = centroid + 2.0 * (centroid - xs[n]);
            const double fe = f(xe);
            if (fe < fr) {
                xs[n] = xe;
                fs[n] = fe;
            } else {
                xs[n] = xr;
                fs[n] = fr;
            }
        } else if (fr < fs[n - 1]) {
            xs[n] = xr;
            fs[n] = fr;
        } else {
            const Eigen::Vector3d xc = centroid + 0.5 * (xs[n] - centroid);
            const double fc = f(xc);
            if (fc < fs[n]) {
                xs[n] = xc;
                fs[n] = fc;
            } else {
                for (int i = 1; i <= n; ++i) {
                    xs[i] = xs[0] + 0.5 * (xs[i] - xs[0]);
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    int best = 0;
    for (int i = 1; i <= n; ++i)
        if (fs[i] < fs[best]) best = i;
    res.x = xs[best];
    res.fx = fs[best];
    return res;
}

} // namespace

SmallScaleModel fit_small_scale(const EmpiricalVariogram& v, const SmallScaleModel& tmpl) {
    if (v.n_nonempty() < 3) throw ConfigError("variogram fit needs at least 3 nonempty bins");
    const double tau = tmpl.taper_range;
    if (tau <= 0.0) throw ConfigError("variogram fit needs a positive taper range");

    double gmax = 0.0, gfirst = 0.0;
    bool first_seen = false;
    for (size_t b = 0; b < v.lag.size(); ++b) {
        if (v.count[b] <= 0) continue;
        gmax = std::max(gmax, v.gamma[b]);
        if (!first_seen) {
            gfirst = v.gamma[b];
            first_seen = true;
        }
    }
    if (gmax <= 0.0) {
        SmallScaleModel m = tmpl;
        m.sill = 0.0;
        m.nugget = 0.0;
        return m;
    }

    const double lo_scale = tau / 10.0, hi_scale = 10.0 * tau;
    const auto model_of = [&](const Eigen::Vector3d& u) {
        SmallScaleModel m = tmpl;
        m.sill = std::exp(std::clamp(u[0], -40.0, 40.0));
        m.scale = std::clamp(std::exp(std::clamp(u[1], -40.0, 40.0)), lo_scale, hi_scale);
        m.nugget = std::exp(std::clamp(u[2], -40.0, 40.0));
        return m;
    };
    const auto obj = [&](const Eigen::Vector3d& u) { return variogram_wls_objective(v, model_of(u)); };

    const double sill0 = std::max(gmax - 0.5 * gfirst, 0.1 * gmax);
    const double nugget0 = std::max(0.5 * gfirst, 0.05 * gmax);
    const double scale_inits[3] = {0.5 * tau, 1.5 * tau, 4.0 * tau};

    NmResult best;
    best.fx = std::numeric_limits<double>::infinity();
    bool any_converged = false;
    for (const double s0 : scale_inits) {
        Eigen::Vector3d u0(std::log(sill0), std::log(s0), std::log(nugget0));
        const NmResult r = nelder_mead(obj, u0, 0.5, 400, 1e-12);
        any_converged = any_converged || r.converged;
        if (r.fx < best.fx) best = r;
    }
    const SmallScaleModel fitted = model_of(best.x);
    if (!any_converged) {
        std::ostringstream msg;
        msg << "variogram fit did not converge; best iterate sill=" << fitted.sill
            << " scale=" << fitted.scale << " nugget=" << fitted.nugget;
        throw VariogramFitError(msg.str(), fitted);
    }
    return fitted;
}

} // namespace mskrig
