#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mskrig {

// Error taxonomy. The CLI maps these to exit codes: config 2, numeric 3, I/O 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Factorization failure. `index` is the first offending row: exact for a
// nonpositive diagonal entry, otherwise the original row of the first
// nonpositive pivot under the fill-reducing permutation.
struct NotPositiveDefinite : NumericError {
    long index;
    NotPositiveDefinite(long idx, const std::string& msg)
        : NumericError(msg), index(idx) {}
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double dist(const Point& a, const Point& b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

// Observations: one value per location.
struct PointSet {
    std::vector<Point> points;
    Eigen::VectorXd values;
    long n() const { return static_cast<long>(points.size()); }
};

// Population variance (divides by n).
inline double variance(const Eigen::VectorXd& v) {
    if (v.size() == 0) return 0.0;
    const double m = v.mean();
    return (v.array() - m).square().sum() / static_cast<double>(v.size());
}

} // namespace mskrig
