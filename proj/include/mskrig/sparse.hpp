#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "mskrig/common.hpp"
#include "mskrig/kernels.hpp"

namespace mskrig {

// Symmetric sparse covariance; only the lower triangle is stored (column
// compressed, rows sorted, diagonal always present). Symmetry holds by
// construction, never by duplicated data.
class SparseSymMatrix {
public:
    SparseSymMatrix() = default;
    explicit SparseSymMatrix(Eigen::SparseMatrix<double> lower);

    long size() const { return lower_.rows(); }
    long nnz_lower() const { return lower_.nonZeros(); }
    const Eigen::SparseMatrix<double>& lower() const { return lower_; }

    // Fraction of structurally nonzero entries of the full symmetric matrix.
    double density() const;
    Eigen::MatrixXd dense() const; // test-sized matrices only

private:
    Eigen::SparseMatrix<double> lower_;
};

struct AssemblyInfo {
    long duplicate_pairs = 0; // coincident point pairs seen with zero nugget
};

// Entry (i,j) = k(|x_i - x_j|) + nugget 1{i=j}; structural zero when the
// distance reaches the kernel support. Neighbor pairs come from a uniform
// grid index of cell size equal to the support, O(n * avg_neighbors) total.
// Coincident points are allowed; with a zero nugget they make the matrix
// singular, which is only counted here (factorization reports the failure).
SparseSymMatrix assemble_sparse_cov(const std::vector<Point>& pts, const TaperedKernel& k,
                                    double nugget, AssemblyInfo* info = nullptr);

// n x n diagonal matrix with constant value; the degenerate small-scale
// structure of a pure-nugget model.
SparseSymMatrix diagonal_matrix(long n, double value);

// Sparse design: n x p basis evaluations, column compressed.
struct SparseDesign {
    Eigen::SparseMatrix<double> mat;
    long n() const { return mat.rows(); }
    long p() const { return mat.cols(); }
};

// Sparse LDL' Cholesky with approximate-minimum-degree ordering. With
// P A P' = L D L', solves and the log-determinant come from the factor; the
// matrix is SPD iff every pivot in D is positive.
class CholeskyFactor {
public:
    explicit CholeskyFactor(const SparseSymMatrix& A);

    long size() const { return n_; }
    double log_det() const { return log_det_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
    // A^{-1} P, one dense column per design column.
    Eigen::MatrixXd solve_design(const SparseDesign& P) const;

    // b' A^{-1} b through one forward triangular solve: v = L^{-1} (perm b),
    // result sum v_i^2 / d_i.
    double inv_quad_form(const Eigen::VectorXd& b) const;

    // M xi with M M' = A (M = P' L D^{1/2}); turns white noise into a draw
    // with covariance A.
    Eigen::VectorXd unwhiten(const Eigen::VectorXd& xi) const;

    // Scaled lower factor of the permuted matrix: P A P' = (L D^{1/2})(L D^{1/2})'.
    Eigen::SparseMatrix<double> scaled_factor() const;
    const Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int>& permutation() const;

private:
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
    long n_ = 0;
    double log_det_ = 0.0;
};

// Factor A, throwing NotPositiveDefinite with the offending row index when A
// is not SPD.
CholeskyFactor cholesky(const SparseSymMatrix& A);

// (A + P B P')^{-1} v without forming the sum: A^{-1}v - A^{-1}P M^{-1} P'A^{-1}v
// with M = B^{-1} + P'A^{-1}P. p = 0 degenerates to a plain solve.
Eigen::VectorXd woodbury_apply(const CholeskyFactor& fA, const SparseDesign& P,
                               const Eigen::MatrixXd& B, const Eigen::VectorXd& v);

// logdet(A + P B P') = logdet A + logdet B + logdet(B^{-1} + P'A^{-1}P).
double woodbury_logdet(const CholeskyFactor& fA, const SparseDesign& P,
                       const Eigen::MatrixXd& B);

// Dense SPD helpers (p x p blocks).
Eigen::LLT<Eigen::MatrixXd> dense_llt(const Eigen::MatrixXd& M, const char* what);
double dense_logdet(const Eigen::LLT<Eigen::MatrixXd>& llt);

} // namespace mskrig
