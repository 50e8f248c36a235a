#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mskrig/common.hpp"
#include "mskrig/sparse.hpp"

namespace mskrig {

struct EMConfig {
    double tolerance = 1e-3;
    long patience = 20; // consecutive iterations below tolerance
    long max_iter = 2000;
    bool fix_sigma = false;
};

struct EMHistoryRow {
    long iter = 0;
    double sigma2 = 0.0;
    double logdetB = 0.0;
    double criterion = 0.0;
    double loglik = 0.0;
};

struct EMState {
    double sigma2 = 0.0;
    Eigen::MatrixXd B; // p x p SPD
    Eigen::VectorXd mu;
    Eigen::MatrixXd C;
    long iterations = 0;
    bool converged = false;
    std::vector<EMHistoryRow> history;
};

struct EStepResult {
    Eigen::VectorXd mu;
    Eigen::MatrixXd C;
    double logdetB = 0.0;
    double logdetM = 0.0; // M = B^{-1} + G / sigma^2
    double btmu = 0.0;    // b' mu, with b = P' A^{-1} z
};

// Fixed-structure EM workspace. The correlation-scale factor A stays constant
// across iterations, so G = P'A^{-1}P, b = P'A^{-1}z and z'A^{-1}z are
// computed once; each iteration only factors p x p matrices.
class EMProblem {
public:
    EMProblem(const CholeskyFactor& fA, const SparseDesign& P, const Eigen::VectorXd& z);

    long n() const { return n_; }
    long p() const { return p_; }
    const Eigen::MatrixXd& G() const { return G_; }
    const Eigen::VectorXd& b() const { return b_; }
    const Eigen::MatrixXd& W() const { return W_; } // A^{-1} P
    double zAz() const { return zAz_; }
    double logdetA() const { return logdetA_; }

    // mu = (1/s) M^{-1} b and C = M^{-1}. B gets one shot of jitter
    // (1e-10 trace/p) if its factorization fails; M must be PD outright.
    EStepResult e_step(double sigma2, const Eigen::MatrixXd& B) const;

    // B_new = C + mu mu'; sigma2_new = (z'A^{-1}z - 2 b'mu + tr(G B_new)) / n,
    // or sigma2_old when fixed.
    std::pair<double, Eigen::MatrixXd> m_step(const EStepResult& es, double sigma2_old,
                                              bool fix_sigma) const;

    // Log-likelihood of z under sigma2 A + P B P', reusing an e_step result;
    // costs nothing beyond what the iteration already computed.
    double log_likelihood(double sigma2, const EStepResult& es) const;

private:
    long n_ = 0, p_ = 0;
    Eigen::MatrixXd G_, W_;
    Eigen::VectorXd b_;
    double zAz_ = 0.0, logdetA_ = 0.0;
};

// Spec-shaped entry points; each builds a one-shot workspace.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> e_step(const Eigen::VectorXd& z,
                                                   const CholeskyFactor& fA,
                                                   const SparseDesign& P, double sigma2,
                                                   const Eigen::MatrixXd& B);
std::pair<double, Eigen::MatrixXd> m_step(const Eigen::VectorXd& z, const CholeskyFactor& fA,
                                          const SparseDesign& P, const Eigen::VectorXd& mu,
                                          const Eigen::MatrixXd& C, double sigma2_old,
                                          bool fix_sigma);

// min(|d sigma2|, |d sigma2| / sigma2_next)
//   + min(|d logdetB|, |d logdetB| / |logdetB_next|).
// Zero denominators fall back to the absolute difference.
double stopping_criterion(double sigma2_prev, double logdetB_prev, double sigma2_next,
                          double logdetB_next);
double stopping_criterion(const EMState& prev, const EMState& next);

// Alternate E/M until the criterion stays below tolerance for `patience`
// iterations in a row or max_iter is hit; non-convergence is reported through
// the returned flag and history, not an exception.
EMState run_em(const Eigen::VectorXd& z, const CholeskyFactor& fA, const SparseDesign& P,
               double sigma2_init, const Eigen::MatrixXd& B_init, const EMConfig& cfg);

// Gaussian log-density of z under sigma2 A + P B P' (Woodbury quadratic form
// and determinant lemma), including the -(n/2) log 2 pi constant.
double full_log_likelihood(const Eigen::VectorXd& z, double sigma2, const CholeskyFactor& fA,
                           const SparseDesign& P, const Eigen::MatrixXd& B);

struct ReweightResult {
    double structured_weight = 0.0; // nugget-free weight of the structured part
    double nugget = 0.0;            // unchanged
};

// Keeps the nugget fixed while the structured small-scale weight moves from
// an old to a new estimate: weight = new * (1 + 1/old - 1/new).
ReweightResult nugget_ratio_reweight(double sigma2_phi_old, double sigma2_phi_new,
                                     double sigma2_eps);

} // namespace mskrig
