#include <doctest.h>

#include <cmath>

#include "mskrig/em.hpp"
#include "mskrig/kernels.hpp"
#include "test_helpers.hpp"

using namespace mskrig;
using namespace mskrig::testing;

namespace {

// 2 x 2 worked example, every number checked outside this code base:
// A = [[2, .5],[.5, 1]], P = [1, 2]', z = [1.2, -0.7]', sigma2 = .8, B = [1.5].
struct Toy {
    CholeskyFactor fA;
    SparseDesign P;
    Eigen::VectorXd z;

    static SparseSymMatrix matrix() {
        std::vector<Eigen::Triplet<double>> t{{0, 0, 2.0}, {1, 0, 0.5}, {1, 1, 1.0}};
        Eigen::SparseMatrix<double> lower(2, 2);
        lower.setFromTriplets(t.begin(), t.end());
        return SparseSymMatrix(std::move(lower));
    }

    Toy() : fA(cholesky(matrix())), z(2) {
        Eigen::MatrixXd Pd(2, 1);
        Pd << 1.0, 2.0;
        P = design_of(Pd);
        z << 1.2, -0.7;
    }
};

} // namespace

TEST_CASE("the EM workspace caches the right projections") {
    Toy t;
    EMProblem prob(t.fA, t.P, t.z);
    CHECK(prob.n() == 2);
    CHECK(prob.p() == 1);
    CHECK(prob.G()(0, 0) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(prob.b()[0] == doctest::Approx(-1.4).epsilon(1e-14));
    CHECK(prob.zAz() == doctest::Approx(1.8628571428571425).epsilon(1e-14));
}

TEST_CASE("one E and M step match the worked example") {
    Toy t;
    EMProblem prob(t.fA, t.P, t.z);
    Eigen::MatrixXd B(1, 1);
    B << 1.5;
    const EStepResult es = prob.e_step(0.8, B);
    CHECK(es.C(0, 0) == doctest::Approx(0.1764705882352941).epsilon(1e-13));
    CHECK(es.mu[0] == doctest::Approx(-0.3088235294117646).epsilon(1e-13));

    const auto [s2_new, B_new] = prob.m_step(es, 0.8, false);
    CHECK(B_new(0, 0) == doctest::Approx(0.27184256055363315).epsilon(1e-13));
    CHECK(s2_new == doctest::Approx(1.042760751359367).epsilon(1e-13));

    const auto [s2_fixed, B_fixed] = prob.m_step(es, 0.8, true);
    CHECK(s2_fixed == 0.8);
    CHECK(B_fixed(0, 0) == doctest::Approx(B_new(0, 0)));

    CHECK(prob.log_likelihood(0.8, es) ==
          doctest::Approx(-3.858639616861402).epsilon(1e-13));
}

TEST_CASE("the spec-shaped entry points agree with the workspace") {
    Toy t;
    Eigen::MatrixXd B(1, 1);
    B << 1.5;
    const auto [mu, C] = e_step(t.z, t.fA, t.P, 0.8, B);
    CHECK(mu[0] == doctest::Approx(-0.3088235294117646).epsilon(1e-13));
    CHECK(C(0, 0) == doctest::Approx(0.1764705882352941).epsilon(1e-13));
    const auto [s2, Bn] = m_step(t.z, t.fA, t.P, mu, C, 0.8, false);
    CHECK(s2 == doctest::Approx(1.042760751359367).epsilon(1e-13));
    CHECK(Bn(0, 0) == doctest::Approx(0.27184256055363315).epsilon(1e-13));
}

TEST_CASE("the free likelihood matches a dense Gaussian density") {
    RngStream rng(61, "em");
    const long n = 40, p = 3;
    const auto pts = random_points(n, rng);
    TaperedKernel k;
    k.base = KernelFamily::exponential;
    k.params = KernelParams{1.0, 0.1, 0.0};
    k.taper = TaperSpec{KernelFamily::spherical, 0.3};
    const SparseSymMatrix A = assemble_sparse_cov(pts, k, 0.3);
    const CholeskyFactor fA = cholesky(A);

    Eigen::MatrixXd Pd(n, p);
    for (long j = 0; j < p; ++j)
        for (long i = 0; i < n; ++i) Pd(i, j) = rng.normal();
    const SparseDesign P = design_of(Pd);
    const Eigen::MatrixXd B = random_spd(p, rng);
    Eigen::VectorXd z(n);
    for (long i = 0; i < n; ++i) z[i] = rng.normal();
    const double s2 = 0.7;

    const Eigen::MatrixXd S = s2 * A.dense() + Pd * B * Pd.transpose();
    const Eigen::LLT<Eigen::MatrixXd> llt(S);
    double logdet = 0.0;
    for (long i = 0; i < n; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const double want =
        -0.5 * (n * std::log(2.0 * 3.14159265358979323846) + logdet + z.dot(llt.solve(z)));

    CHECK(full_log_likelihood(z, s2, fA, P, B) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("stopping criterion uses relative changes with absolute fallbacks") {
    // sigma2 doubles, logdetB unchanged: min(s2, s2/(2 s2)) + 0
    CHECK(stopping_criterion(0.2, 1.0, 0.4, 1.0) == doctest::Approx(std::min(0.2, 0.5)));
    CHECK(stopping_criterion(2.0, 1.0, 4.0, 1.0) == doctest::Approx(0.5));
    // B scaled by e at p = 2: logdetB moves by 2
    const double before = 0.3, after = 0.3; // sigma2 unchanged
    CHECK(stopping_criterion(before, 0.0, after, 2.0) == doctest::Approx(std::min(2.0, 1.0)));
    CHECK(stopping_criterion(before, 5.0, after, 7.0) == doctest::Approx(std::min(2.0, 2.0 / 7.0)));
    // zero denominators fall back to the absolute difference
    CHECK(stopping_criterion(0.5, -1.0, 0.5, 0.0) == doctest::Approx(1.0));
    // no change at all
    CHECK(stopping_criterion(0.5, -1.0, 0.5, -1.0) == 0.0);
}

TEST_CASE("run_em is a monotone ascent that reaches its tolerance") {
    RngStream rng(62, "em_run");
    const long n = 80, p = 4;
    const auto pts = random_points(n, rng);
    TaperedKernel k;
    k.base = KernelFamily::exponential;
    k.params = KernelParams{1.0, 0.08, 0.0};
    k.taper = TaperSpec{KernelFamily::spherical, 0.25};
    const SparseSymMatrix A = assemble_sparse_cov(pts, k, 0.25);
    const CholeskyFactor fA = cholesky(A);

    Eigen::MatrixXd Pd(n, p);
    for (long j = 0; j < p; ++j)
        for (long i = 0; i < n; ++i) Pd(i, j) = rng.normal() * 0.5;
    const SparseDesign P = design_of(Pd);

    // draw z from the model itself so the likelihood surface is sensible
    Eigen::VectorXd xi(n);
    for (long i = 0; i < n; ++i) xi[i] = rng.normal();
    Eigen::VectorXd beta(p);
    for (long j = 0; j < p; ++j) beta[j] = rng.normal();
    const Eigen::VectorXd z = 0.9 * fA.unwhiten(xi) + Pd * beta;

    EMConfig cfg;
    const EMState st = run_em(z, fA, P, 1.0, Eigen::MatrixXd::Identity(p, p), cfg);
    REQUIRE(st.history.size() >= 2);
    for (size_t i = 1; i < st.history.size(); ++i) {
        CHECK(st.history[i].loglik >=
              st.history[i - 1].loglik - 1e-9 * std::abs(st.history[i - 1].loglik));
    }
    CHECK(st.converged);
    CHECK(st.iterations == static_cast<long>(st.history.size()));
    CHECK(st.history.back().criterion < cfg.tolerance);
    CHECK(st.sigma2 > 0.0);

    // the reported history rows carry the free likelihood of their iterate
    const double ll = full_log_likelihood(z, st.sigma2, fA, P, st.B);
    CHECK(st.history.back().loglik == doctest::Approx(ll).epsilon(1e-10));
}

TEST_CASE("fixed-sigma EM never moves sigma2") {
    Toy t;
    EMConfig cfg;
    cfg.fix_sigma = true;
    cfg.max_iter = 50;
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1);
    const EMState st = run_em(t.z, t.fA, t.P, 0.8, B, cfg);
    CHECK(st.sigma2 == 0.8);
    for (const auto& row : st.history) CHECK(row.sigma2 == 0.8);
}

TEST_CASE("non-convergence is a flag, not an exception") {
    Toy t;
    EMConfig cfg;
    cfg.tolerance = 1e-300; // unattainable
    cfg.max_iter = 5;
    const EMState st = run_em(t.z, t.fA, t.P, 0.8, Eigen::MatrixXd::Identity(1, 1), cfg);
    CHECK_FALSE(st.converged);
    CHECK(st.iterations == 5);
    CHECK(st.history.size() == 5);
}

TEST_CASE("EM with an empty basis estimates the scale alone") {
    Toy t;
    SparseDesign P;
    P.mat.resize(2, 0);
    EMConfig cfg;
    const EMState st = run_em(t.z, t.fA, P, 1.0, Eigen::MatrixXd(0, 0), cfg);
    CHECK(st.mu.size() == 0);
    // the exact MLE of sigma2 for z ~ N(0, sigma2 A) is z'A^{-1}z / n
    CHECK(st.sigma2 == doctest::Approx(1.8628571428571425 / 2.0).epsilon(1e-6));
}

TEST_CASE("nugget reweighting keeps the nugget and rescales the structure") {
    const ReweightResult r = nugget_ratio_reweight(1.0, 2.0, 0.5);
    CHECK(r.structured_weight == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(r.nugget == 0.5);
    // an unchanged variance estimate leaves the variogram weights untouched
    const ReweightResult same = nugget_ratio_reweight(0.7, 0.7, 0.2);
    CHECK(same.structured_weight == doctest::Approx(0.7).epsilon(1e-15));
    CHECK_THROWS_AS(nugget_ratio_reweight(0.0, 2.0, 0.5), ConfigError);
    CHECK_THROWS_AS(nugget_ratio_reweight(5.0, 0.1, 0.5), NumericError);
}

TEST_CASE("invalid EM inputs are rejected") {
    Toy t;
    Eigen::MatrixXd B(1, 1);
    B << 1.0;
    CHECK_THROWS_AS(e_step(t.z, t.fA, t.P, -1.0, B), NumericError);
    Eigen::MatrixXd bad(2, 2);
    bad.setIdentity();
    CHECK_THROWS_AS(e_step(t.z, t.fA, t.P, 1.0, bad), ConfigError);
    EMConfig cfg;
    cfg.tolerance = -1.0;
    CHECK_THROWS_AS(run_em(t.z, t.fA, t.P, 1.0, B, cfg), ConfigError);
}
