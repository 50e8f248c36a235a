#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mskrig/common.hpp"
#include "mskrig/sparse.hpp"

namespace mskrig {

// Regularization path, strongest penalty first. Coefficients are reported on
// the original column scale; the penalty itself applies to internally
// standardized columns (unit empirical norm, no centering so the design stays
// sparse). CV fields stay empty until cross_validate fills them.
struct LassoPath {
    std::vector<double> lambdas;
    std::vector<Eigen::VectorXd> betas;
    std::vector<long> n_active;
    std::vector<double> explained_variance; // population variance of X beta
    std::vector<double> cv_mean;
    std::vector<double> cv_se;
    unsigned long long cv_seed = 0;

    long m() const { return static_cast<long>(lambdas.size()); }
    bool has_cv() const { return !cv_mean.empty(); }
};

// Geometric grid of n_lambda penalties from lambda_max down to
// min_ratio * lambda_max, with lambda_max = max_j |X_j' y| / (n s_j) the
// smallest penalty with an all-zero solution.
std::vector<double> lambda_grid(const SparseDesign& X, const Eigen::VectorXd& y,
                                long n_lambda = 100, double min_ratio = 1e-3);

// Cyclic coordinate descent with warm starts along the path and active-set
// inner iterations; converged when no standardized coefficient moves more
// than 1e-7 sd(y) in a full sweep. Zero-norm columns are pinned at zero.
LassoPath lasso_path(const SparseDesign& X, const Eigen::VectorXd& y,
                     const std::vector<double>& lambdas);

// K-fold CV over the same penalty grid; folds are a seeded shuffle striped
// across the data, columns re-standardized per training fold. Mean squared
// held-out error per lambda, with the standard error of the fold mean.
void cross_validate(LassoPath& path, const SparseDesign& X, const Eigen::VectorXd& y,
                    long folds, unsigned long long seed);

// Largest penalty whose CV mean is within one standard error of the minimum;
// returns an index into path.lambdas.
long one_se_rule(const LassoPath& path);

struct Selection {
    long index = 0;
    double lambda = 0.0;
    std::vector<long> active;
    bool fallback_warning = false; // no path point reached the target
};

// Largest penalty whose fitted values reach the target variance; falls back
// to the smallest penalty (with a warning flag) when none does.
Selection select_by_variance_target(const LassoPath& path, double target_variance);

// ||y - X beta||^2 / (2n) + lambda * sum_j s_j |beta_j| (the standardized
// objective expressed in original-scale coefficients).
double lasso_objective(const SparseDesign& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta, double lambda);

// Worst violation of the subgradient conditions on the standardized problem;
// zero (up to tolerance) at an exact solution.
double kkt_violation(const SparseDesign& X, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& beta, double lambda);

} // namespace mskrig
