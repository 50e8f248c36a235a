#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "mskrig/common.hpp"
#include "mskrig/kernels.hpp"
#include "mskrig/sparse.hpp"

namespace mskrig {

// Regular grid of cell centers, values row-major (index j*nx + i).
struct Grid {
    long nx = 0, ny = 0;
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;
    std::vector<double> values;

    long cells() const { return nx * ny; }
    double dx() const { return (x1 - x0) / static_cast<double>(nx); }
    double dy() const { return (y1 - y0) / static_cast<double>(ny); }
    Point center(long i, long j) const {
        return Point{x0 + (static_cast<double>(i) + 0.5) * dx(),
                     y0 + (static_cast<double>(j) + 0.5) * dy()};
    }
    std::vector<Point> centers() const;
};

Grid make_grid(long nx, long ny, double x0 = 0.0, double y0 = 0.0, double x1 = 1.0,
               double y1 = 1.0);

// Clamped bilinear interpolation between cell centers; exact at centers.
double bilinear(const Grid& g, const Point& p);

// Dense-Cholesky draw: values = L xi. Fails above 20000 cells (the dense
// matrix stops being desk-sized). A non-PD covariance gets one shot of
// diagonal jitter (1e-10 times the largest diagonal entry), then errors.
void simulate_dense(Grid& g, const std::function<double(const Point&, const Point&)>& cov,
                    unsigned long long seed);

// Draw with covariance A through the sparse factor (unwhitened noise).
Eigen::VectorXd simulate_compact(const SparseSymMatrix& A, unsigned long long seed);

struct SpectralConfig {
    long waves = 10000;
    unsigned long long seed = 0;
    double overflow_bound = 1e12; // importance-ratio cap before a wave is resampled
};

// Spectral draw of a nonstationary Matern field:
//   Z(x) = sqrt(2/N) sum_k w_k(x) cos(<omega_k, x> + phi_k),
// omega_k sampled from an instrumental isotropic Matern spectral density
// (median nu, median geometric-mean scale), w_k(x) the importance weight
// between the local density at x and the instrumental one. Waves whose
// worst-case importance ratio overflows are resampled and counted in the
// return value.
long simulate_nonstationary(Grid& g, const LocalParamField& field, const SpectralConfig& cfg);

// Phase-averaged variance (1/N) sum_k w_k(x)^2 of the spectral draw at one
// location; converges to the punctual variance 1 as N grows.
double spectral_variance_estimate(const Point& x, const LocalParamField& field,
                                  const SpectralConfig& cfg);

// n locations uniform over the grid domain, values bilinearly interpolated.
PointSet sample_locations(const Grid& g, long n, unsigned long long seed);

} // namespace mskrig
