#include "mskrig/sparse.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "mskrig/grid_index.hpp"

namespace mskrig {

SparseSymMatrix::SparseSymMatrix(Eigen::SparseMatrix<double> lower) : lower_(std::move(lower)) {
    if (lower_.rows() != lower_.cols()) throw ConfigError("sparse covariance must be square");
    lower_.makeCompressed();
}

double SparseSymMatrix::density() const {
    const double n = static_cast<double>(size());
    if (n == 0) return 0.0;
    const double full = 2.0 * static_cast<double>(nnz_lower()) - n; // diagonal counted once
    return full / (n * n);
}

Eigen::MatrixXd SparseSymMatrix::dense() const {
    Eigen::MatrixXd lo = Eigen::MatrixXd(lower_);
    return lo.selfadjointView<Eigen::Lower>();
}

SparseSymMatrix assemble_sparse_cov(const std::vector<Point>& pts, const TaperedKernel& k,
                                    double nugget, AssemblyInfo* info) {
    const long n = static_cast<long>(pts.size());
    if (n == 0) throw ConfigError("cannot assemble covariance of zero points");
    if (nugget < 0.0) throw ConfigError("nugget must be nonnegative");
    const double support = k.support();
    if (!std::isfinite(support) || support <= 0.0)
        throw ConfigError("covariance assembly needs a compactly supported kernel or taper");

    const double diag = k(0.0) + nugget;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n) * 8);
    for (long i = 0; i < n; ++i) trips.emplace_back(i, i, diag);

    long dup = 0;
    NeighborGrid index(pts, support);
    index.for_each_pair(support, [&](int i, int j, double d) {
        if (d == 0.0 && nugget == 0.0) ++dup; // harmless once a nugget pads the diagonal
        trips.emplace_back(j, i, k(d)); // j > i: lower triangle
    });
    if (info) info->duplicate_pairs = dup;

    Eigen::SparseMatrix<double> lower(n, n);
    lower.setFromTriplets(trips.begin(), trips.end());
    return SparseSymMatrix(std::move(lower));
}

SparseSymMatrix diagonal_matrix(long n, double value) {
    if (n <= 0) throw ConfigError("diagonal matrix needs a positive size");
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) trips.emplace_back(i, i, value);
    Eigen::SparseMatrix<double> lower(n, n);
    lower.setFromTriplets(trips.begin(), trips.end());
    return SparseSymMatrix(std::move(lower));
}

CholeskyFactor::CholeskyFactor(const SparseSymMatrix& A) : n_(A.size()) {
    // A nonpositive diagonal entry already rules out SPD; report it exactly.
    for (long j = 0; j < n_; ++j) {
        if (!(A.lower().coeff(j, j) > 0.0))
            throw NotPositiveDefinite(j, "covariance has a nonpositive diagonal entry");
    }
    ldlt_.compute(A.lower());
    // A zero pivot aborts the factorization with NumericalIssue but leaves the
    // partial D filled up to the break, so the scan below names the failing row.
    if (ldlt_.info() != Eigen::Success && ldlt_.info() != Eigen::NumericalIssue)
        throw NumericError("sparse Cholesky factorization failed");
    const auto& d = ldlt_.vectorD();
    for (long kpiv = 0; kpiv < n_; ++kpiv) {
        if (!(d[kpiv] > 0.0)) {
            // Map the pivot back through the fill-reducing permutation.
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n_);
            e[kpiv] = 1.0;
            const Eigen::VectorXd orig = ldlt_.permutationPinv() * e;
            long row = 0;
            for (long i = 0; i < n_; ++i)
                if (orig[i] != 0.0) { row = i; break; }
            throw NotPositiveDefinite(row, "covariance is not positive definite");
        }
        log_det_ += std::log(d[kpiv]);
    }
    if (ldlt_.info() != Eigen::Success)
        throw NumericError("sparse Cholesky factorization failed");
}

Eigen::VectorXd CholeskyFactor::solve(const Eigen::VectorXd& rhs) const {
    if (rhs.size() != n_) throw ConfigError("solve: dimension mismatch");
    return ldlt_.solve(rhs);
}

Eigen::MatrixXd CholeskyFactor::solve(const Eigen::MatrixXd& rhs) const {
    if (rhs.rows() != n_) throw ConfigError("solve: dimension mismatch");
    return ldlt_.solve(rhs);
}

Eigen::MatrixXd CholeskyFactor::solve_design(const SparseDesign& P) const {
    if (P.n() != n_) throw ConfigError("solve_design: dimension mismatch");
    Eigen::MatrixXd W(n_, P.p());
    Eigen::VectorXd col(n_);
    for (long j = 0; j < P.p(); ++j) {
        col = P.mat.col(j);
        W.col(j) = ldlt_.solve(col);
    }
    return W;
}

double CholeskyFactor::inv_quad_form(const Eigen::VectorXd& b) const {
    if (b.size() != n_) throw ConfigError("inv_quad_form: dimension mismatch");
    Eigen::VectorXd v = ldlt_.permutationP() * b;
    ldlt_.matrixL().solveInPlace(v);
    const auto& d = ldlt_.vectorD();
    double acc = 0.0;
    for (long i = 0; i < n_; ++i) acc += v[i] * v[i] / d[i];
    return acc;
}

Eigen::VectorXd CholeskyFactor::unwhiten(const Eigen::VectorXd& xi) const {
    if (xi.size() != n_) throw ConfigError("unwhiten: dimension mismatch");
    Eigen::VectorXd t = ldlt_.vectorD().array().sqrt() * xi.array();
    t = ldlt_.matrixL() * t;
    return ldlt_.permutationPinv() * t;
}

Eigen::SparseMatrix<double> CholeskyFactor::scaled_factor() const {
    Eigen::SparseMatrix<double> L = ldlt_.matrixL();
    Eigen::VectorXd s = ldlt_.vectorD().array().sqrt();
    return L * s.asDiagonal();
}

const Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int>& CholeskyFactor::permutation() const {
    return ldlt_.permutationP();
}

CholeskyFactor cholesky(const SparseSymMatrix& A) { return CholeskyFactor(A); }

Eigen::LLT<Eigen::MatrixXd> dense_llt(const Eigen::MatrixXd& M, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success)
        throw NumericError(std::string(what) + " is not positive definite");
    return llt;
}

double dense_logdet(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::VectorXd woodbury_apply(const CholeskyFactor& fA, const SparseDesign& P,
                               const Eigen::MatrixXd& B, const Eigen::VectorXd& v) {
    if (P.p() != B.rows() || B.rows() != B.cols())
        throw ConfigError("woodbury: low-rank dimensions disagree");
    Eigen::VectorXd y = fA.solve(v);
    const long p = P.p();
    if (p == 0) return y;
    const Eigen::MatrixXd W = fA.solve_design(P);
    const auto bllt = dense_llt(B, "low-rank covariance");
    Eigen::MatrixXd M = bllt.solve(Eigen::MatrixXd::Identity(p, p));
    M += P.mat.transpose() * W;
    M = 0.5 * (M + M.transpose()).eval();
    const auto mllt = dense_llt(M, "woodbury capacitance");
    const Eigen::VectorXd t = mllt.solve(P.mat.transpose() * y);
    return y - W * t;
}

double woodbury_logdet(const CholeskyFactor& fA, const SparseDesign& P,
                       const Eigen::MatrixXd& B) {
    if (P.p() != B.rows() || B.rows() != B.cols())
        throw ConfigError("woodbury: low-rank dimensions disagree");
    const long p = P.p();
    if (p == 0) return fA.log_det();
    const auto bllt = dense_llt(B, "low-rank covariance");
    Eigen::MatrixXd M = bllt.solve(Eigen::MatrixXd::Identity(p, p));
    M += P.mat.transpose() * fA.solve_design(P);
    M = 0.5 * (M + M.transpose()).eval();
    const auto mllt = dense_llt(M, "woodbury capacitance");
    return fA.log_det() + dense_logdet(bllt) + dense_logdet(mllt);
}

} // namespace mskrig
