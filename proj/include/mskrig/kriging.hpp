#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mskrig/common.hpp"
#include "mskrig/dictionary.hpp"
#include "mskrig/sparse.hpp"
#include "mskrig/variogram.hpp"

namespace mskrig {

// Polynomial drift in the coordinates, constant term first, then monomials by
// total degree: 1, x, y, x^2, x*y, y^2, ...
struct TrendModel {
    long degree = 0;
    Eigen::VectorXd beta;

    double eval(const Point& p) const;
};

long trend_size(long degree);
std::vector<std::string> trend_names(long degree);
Eigen::MatrixXd trend_design(const std::vector<Point>& pts, long degree);

// Ordinary least squares fit of the drift; returns the model and residuals.
// A rank-deficient design is an error naming the collinear drift terms.
std::pair<TrendModel, Eigen::VectorXd> ols_detrend(const PointSet& data, long degree);

// Complete fitted predictor state. The data-side covariance is
// fA_scale * A_base (factor held in fA) and the cross covariance to a target
// at distance h is struct_weight * correlation(h) + nugget_weight * 1{h=0};
// both sides must describe the same model for kriging exactness to hold.
// mu and C are the posterior moments of the basis coefficients.
struct FittedModel {
    TrendModel trend;
    SmallScaleModel small; // correlation shape of the structured cross part
    std::vector<BasisAtom> basis;
    PointSet data;
    Eigen::VectorXd z_resid; // observations minus trend
    SparseDesign P;          // basis evaluated at the data

    double sigma2 = 1.0; // small-scale weight estimated by EM
    Eigen::MatrixXd B;
    Eigen::VectorXd mu;
    Eigen::MatrixXd C;
    bool filter_nugget = false;

    double struct_weight = 0.0;
    double nugget_weight = 0.0;

    std::shared_ptr<const CholeskyFactor> fA;
    double fA_scale = 1.0;

    // Recipe behind fA, kept so a saved model can rebuild the factor:
    // A_base = a_sill * R + a_nugget * I, or the identity when diag_A.
    bool diag_A = false;
    double a_sill = 1.0;
    double a_nugget = 0.0;

    Eigen::VectorXd w; // A~^{-1} (z_resid - P mu), set by finalize_model
    mutable std::shared_ptr<Eigen::MatrixXd> Wt; // A~^{-1} P, built on demand

    long p() const { return static_cast<long>(basis.size()); }
    double punctual_variance() const { return struct_weight + nugget_weight; }
};

// Validates dimensions and precomputes the kriging weights w.
void finalize_model(FittedModel& m);

struct PredictionResult {
    std::vector<Point> targets;
    Eigen::VectorXd mean;
    Eigen::VectorXd variance; // empty unless variances were requested
    long clamped = 0;         // variances in [-1e-10, 0) clamped to zero
};

// mean(x0) = trend(x0) + P0' mu + a0' w, with a0 assembled sparsely from the
// taper support via a grid index over the data.
PredictionResult predict(const FittedModel& m, const std::vector<Point>& targets);

// Adds the conditional variance
//   punct - a0' A~^{-1} a0 + (P0 - u)' C (P0 - u),   u = P' A~^{-1} a0,
// which is the joint-Gaussian conditional variance expressed through the
// Woodbury pieces. Each target costs one sparse triangular solve.
PredictionResult predict_variance(const FittedModel& m, const std::vector<Point>& targets);

struct UkResult {
    double mean = 0.0;
    double variance = 0.0;
};

// Dense universal-kriging reference: solves the bordered system
// [K F; F' 0] [lambda; m] = [k0; f0] directly and returns
// lambda'z and c00 - lambda'k0 - m'f0. trend_degree -1 means simple kriging
// with known zero mean. Small n only.
UkResult dense_uk_oracle(const PointSet& data,
                         const std::function<double(const Point&, const Point&)>& cov,
                         long trend_degree, const Point& target);

} // namespace mskrig
