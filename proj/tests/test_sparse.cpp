#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "mskrig/sparse.hpp"
#include "test_helpers.hpp"

using namespace mskrig;
using namespace mskrig::testing;

namespace {

TaperedKernel test_kernel() {
    TaperedKernel k;
    k.base = KernelFamily::exponential;
    k.params = KernelParams{1.3, 0.1, 0.0};
    k.taper = TaperSpec{KernelFamily::spherical, 0.3};
    return k;
}

} // namespace

TEST_CASE("sparse assembly matches the dense brute force") {
    RngStream rng(5, "pts");
    const auto pts = random_points(70, rng);
    const TaperedKernel k = test_kernel();
    const double nugget = 0.2;
    const SparseSymMatrix A = assemble_sparse_cov(pts, k, nugget);
    const Eigen::MatrixXd D = A.dense();
    for (long j = 0; j < 70; ++j) {
        for (long i = 0; i < 70; ++i) {
            const double h = dist(pts[static_cast<size_t>(i)], pts[static_cast<size_t>(j)]);
            const double want = k(h) + (i == j ? nugget : 0.0);
            CHECK(D(i, j) == doctest::Approx(want).epsilon(1e-15));
        }
    }
    CHECK(A.density() > 0.0);
    CHECK(A.density() <= 1.0);
}

TEST_CASE("entries beyond the taper support are structural zeros") {
    std::vector<Point> pts{{0.0, 0.0}, {0.29, 0.0}, {0.75, 0.0}};
    const SparseSymMatrix A = assemble_sparse_cov(pts, test_kernel(), 0.0);
    CHECK(A.nnz_lower() == 4); // three diagonals plus the one pair inside 0.3
    const Eigen::MatrixXd D = A.dense();
    CHECK(D(2, 0) == 0.0);
    CHECK(D(2, 1) == 0.0);
    CHECK(D(1, 0) > 0.0);
}

TEST_CASE("coincident points with zero nugget are counted") {
    std::vector<Point> pts{{0.1, 0.1}, {0.1, 0.1}, {0.5, 0.5}};
    AssemblyInfo info;
    assemble_sparse_cov(pts, test_kernel(), 0.0, &info);
    CHECK(info.duplicate_pairs == 1);
    AssemblyInfo info2;
    assemble_sparse_cov(pts, test_kernel(), 0.1, &info2);
    CHECK(info2.duplicate_pairs == 0);
}

TEST_CASE("cholesky reproduces dense solves and the log-determinant") {
    RngStream rng(6, "pts");
    const auto pts = random_points(60, rng);
    const SparseSymMatrix A = assemble_sparse_cov(pts, test_kernel(), 0.15);
    const CholeskyFactor f = cholesky(A);
    const Eigen::MatrixXd D = A.dense();

    CHECK(f.log_det() ==
          doctest::Approx(std::log(D.determinant())).epsilon(1e-9));

    Eigen::VectorXd b(60);
    for (long i = 0; i < 60; ++i) b[i] = rng.normal();
    const Eigen::VectorXd x = f.solve(b);
    CHECK((D * x - b).norm() < 1e-10 * b.norm());
    CHECK(f.inv_quad_form(b) == doctest::Approx(b.dot(D.llt().solve(b))).epsilon(1e-10));

    Eigen::MatrixXd R(60, 3);
    for (long j = 0; j < 3; ++j)
        for (long i = 0; i < 60; ++i) R(i, j) = rng.normal();
    const Eigen::MatrixXd Xm = f.solve(R);
    CHECK((D * Xm - R).norm() < 1e-9 * R.norm());

    SparseDesign P = design_of(R);
    const Eigen::MatrixXd Xd = f.solve_design(P);
    CHECK((Xd - Xm).norm() < 1e-12 * Xm.norm());
}

TEST_CASE("unwhitening reproduces the covariance") {
    RngStream rng(7, "pts");
    const auto pts = random_points(25, rng);
    const SparseSymMatrix A = assemble_sparse_cov(pts, test_kernel(), 0.05);
    const CholeskyFactor f = cholesky(A);
    Eigen::MatrixXd M(25, 25);
    for (long k = 0; k < 25; ++k) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(25);
        e[k] = 1.0;
        M.col(k) = f.unwhiten(e);
    }
    CHECK((M * M.transpose() - A.dense()).norm() < 1e-10);
}

TEST_CASE("nonpositive diagonals are reported with their exact index") {
    std::vector<Point> pts{{0.0, 0.0}, {0.5, 0.5}, {1.0, 1.0}};
    TaperedKernel k = test_kernel();
    k.params.sill = 0.0; // zero diagonal without a nugget
    const SparseSymMatrix A = assemble_sparse_cov(pts, k, 0.0);
    CHECK_THROWS_AS(cholesky(A), NotPositiveDefinite);
    try {
        cholesky(A);
    } catch (const NotPositiveDefinite& e) {
        CHECK(e.index == 0);
    }
}

TEST_CASE("an indefinite matrix fails with an in-range index") {
    // two coincident points, zero nugget: positive semidefinite, rank 2
    std::vector<Point> pts{{0.2, 0.2}, {0.2, 0.2}, {0.8, 0.8}};
    const SparseSymMatrix A = assemble_sparse_cov(pts, test_kernel(), 0.0);
    try {
        cholesky(A);
        CHECK(false);
    } catch (const NotPositiveDefinite& e) {
        CHECK(e.index >= 0);
        CHECK(e.index < 3);
    }
}

TEST_CASE("diagonal matrices factor to themselves") {
    const SparseSymMatrix I = diagonal_matrix(40, 2.5);
    const CholeskyFactor f = cholesky(I);
    CHECK(f.log_det() == doctest::Approx(40.0 * std::log(2.5)).epsilon(1e-13));
    Eigen::VectorXd b = Eigen::VectorXd::Constant(40, 5.0);
    CHECK((f.solve(b) - b / 2.5).norm() < 1e-14);
}

TEST_CASE("woodbury apply and logdet match the dense rank-updated matrix") {
    RngStream rng(8, "pts");
    for (int rep = 0; rep < 5; ++rep) {
        const long n = 40 + 10 * rep, p = 3 + rep;
        const auto pts = random_points(n, rng);
        const SparseSymMatrix A = assemble_sparse_cov(pts, test_kernel(), 0.1);
        const CholeskyFactor f = cholesky(A);

        Eigen::MatrixXd Pd(n, p);
        for (long j = 0; j < p; ++j)
            for (long i = 0; i < n; ++i) Pd(i, j) = rng.normal();
        const Eigen::MatrixXd B = random_spd(p, rng);
        Eigen::VectorXd y(n);
        for (long i = 0; i < n; ++i) y[i] = rng.normal();

        const SparseDesign P = design_of(Pd);
        const Eigen::MatrixXd S = A.dense() + Pd * B * Pd.transpose();

        const Eigen::VectorXd got = woodbury_apply(f, P, B, y);
        const Eigen::VectorXd want = S.llt().solve(y);
        CHECK((got - want).norm() < 1e-8 * want.norm());

        const double ld = woodbury_logdet(f, P, B);
        CHECK(ld == doctest::Approx(std::log(S.determinant())).epsilon(1e-9));
    }
}

TEST_CASE("woodbury with an empty low-rank part degenerates to plain solves") {
    RngStream rng(9, "pts");
    const auto pts = random_points(30, rng);
    const SparseSymMatrix A = assemble_sparse_cov(pts, test_kernel(), 0.1);
    const CholeskyFactor f = cholesky(A);
    SparseDesign P;
    P.mat.resize(30, 0);
    Eigen::MatrixXd B(0, 0);
    Eigen::VectorXd y(30);
    for (long i = 0; i < 30; ++i) y[i] = rng.normal();
    CHECK((woodbury_apply(f, P, B, y) - f.solve(y)).norm() < 1e-14);
    CHECK(woodbury_logdet(f, P, B) == doctest::Approx(f.log_det()).epsilon(1e-14));
}
