#include "mskrig/em.hpp"

#include <cmath>

namespace mskrig {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// LLT with one shot of diagonal jitter; a second failure is a hard error.
Eigen::LLT<Eigen::MatrixXd> llt_with_jitter(const Eigen::MatrixXd& M, const char* what) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success) return llt;
    const long p = M.rows();
    const double jitter = 1e-10 * M.trace() / static_cast<double>(p);
    Eigen::MatrixXd Mj = M + jitter * Eigen::MatrixXd::Identity(p, p);
    llt.compute(Mj);
    if (llt.info() != Eigen::Success)
        throw NumericError(std::string(what) + " is not positive definite (after jitter)");
    return llt;
}

} // namespace

EMProblem::EMProblem(const CholeskyFactor& fA, const SparseDesign& P, const Eigen::VectorXd& z)
    : n_(fA.size()), p_(P.p()) {
    if (P.n() != n_ || z.size() != n_) throw ConfigError("EM: dimension mismatch");
    logdetA_ = fA.log_det();
    zAz_ = fA.inv_quad_form(z);
    W_ = fA.solve_design(P);
    G_ = P.mat.transpose() * W_;
    G_ = 0.5 * (G_ + G_.transpose()).eval();
    b_ = P.mat.transpose() * fA.solve(z);
}

EStepResult EMProblem::e_step(double sigma2, const Eigen::MatrixXd& B) const {
    if (sigma2 <= 0.0) throw NumericError("EM: sigma2 must be positive");
    if (B.rows() != p_ || B.cols() != p_) throw ConfigError("EM: B has wrong dimensions");
    EStepResult es;
    if (p_ == 0) {
        es.mu = Eigen::VectorXd(0);
        es.C = Eigen::MatrixXd(0, 0);
        return es;
    }
    const auto bllt = llt_with_jitter(B, "coefficient covariance B");
    es.logdetB = dense_logdet(bllt);
    Eigen::MatrixXd M = bllt.solve(Eigen::MatrixXd::Identity(p_, p_));
    M += G_ / sigma2;
    M = 0.5 * (M + M.transpose()).eval();
    Eigen::LLT<Eigen::MatrixXd> mllt(M);
    if (mllt.info() != Eigen::Success)
        throw NumericError("EM inner matrix is not positive definite");
    es.logdetM = dense_logdet(mllt);
    es.C = mllt.solve(Eigen::MatrixXd::Identity(p_, p_));
    es.C = 0.5 * (es.C + es.C.transpose()).eval();
    es.mu = mllt.solve(b_) / sigma2;
    es.btmu = b_.dot(es.mu);
    return es;
}

std::pair<double, Eigen::MatrixXd> EMProblem::m_step(const EStepResult& es, double sigma2_old,
                                                     bool fix_sigma) const {
    Eigen::MatrixXd B_new;
    double quad_tail = 0.0;
    if (p_ > 0) {
        B_new = es.C + es.mu * es.mu.transpose();
        quad_tail = -2.0 * es.btmu + G_.cwiseProduct(B_new).sum();
    } else {
        B_new = Eigen::MatrixXd(0, 0);
    }
    const double sigma2_new =
        fix_sigma ? sigma2_old : (zAz_ + quad_tail) / static_cast<double>(n_);
    return {sigma2_new, std::move(B_new)};
}

double EMProblem::log_likelihood(double sigma2, const EStepResult& es) const {
    // z'(s A + P B P')^{-1} z = (z'A^{-1}z - b'mu) / s, since mu = M^{-1}b / s.
    const double quad = (zAz_ - es.btmu) / sigma2;
    const double logdet =
        static_cast<double>(n_) * std::log(sigma2) + logdetA_ + es.logdetB + es.logdetM;
    return -0.5 * (static_cast<double>(n_) * kLog2Pi + logdet + quad);
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> e_step(const Eigen::VectorXd& z,
                                                   const CholeskyFactor& fA,
                                                   const SparseDesign& P, double sigma2,
                                                   const Eigen::MatrixXd& B) {
    const EMProblem prob(fA, P, z);
    EStepResult es = prob.e_step(sigma2, B);
    return {std::move(es.mu), std::move(es.C)};
}

std::pair<double, Eigen::MatrixXd> m_step(const Eigen::VectorXd& z, const CholeskyFactor& fA,
                                          const SparseDesign& P, const Eigen::VectorXd& mu,
                                          const Eigen::MatrixXd& C, double sigma2_old,
                                          bool fix_sigma) {
    const EMProblem prob(fA, P, z);
    EStepResult es;
    es.mu = mu;
    es.C = C;
    es.btmu = prob.b().dot(mu);
    return prob.m_step(es, sigma2_old, fix_sigma);
}

double stopping_criterion(double sigma2_prev, double logdetB_prev, double sigma2_next,
                          double logdetB_next) {
    const auto term = [](double diff, double denom) {
        const double d = std::abs(diff);
        if (d == 0.0) return 0.0;
        const double dn = std::abs(denom);
        return dn > 0.0 ? std::min(d, d / dn) : d;
    };
    return term(sigma2_next - sigma2_prev, sigma2_next) +
           term(logdetB_next - logdetB_prev, logdetB_next);
}

double stopping_criterion(const EMState& prev, const EMState& next) {
    const auto logdet_of = [](const Eigen::MatrixXd& B) {
        if (B.rows() == 0) return 0.0;
        Eigen::LLT<Eigen::MatrixXd> llt(B);
        if (llt.info() != Eigen::Success)
            throw NumericError("stopping criterion: B is not positive definite");
        return dense_logdet(llt);
    };
    return stopping_criterion(prev.sigma2, logdet_of(prev.B), next.sigma2, logdet_of(next.B));
}

EMState run_em(const Eigen::VectorXd& z, const CholeskyFactor& fA, const SparseDesign& P,
               double sigma2_init, const Eigen::MatrixXd& B_init, const EMConfig& cfg) {
    if (cfg.tolerance <= 0.0) throw ConfigError("EM tolerance must be positive");
    if (cfg.patience < 1) throw ConfigError("EM patience must be >= 1");
    if (sigma2_init <= 0.0) throw ConfigError("EM needs a positive initial sigma2");

    const EMProblem prob(fA, P, z);
    double sigma2 = sigma2_init;
    Eigen::MatrixXd B = B_init;
    EStepResult es = prob.e_step(sigma2, B);

    EMState st;
    st.history.reserve(64);
    long streak = 0;
    for (long it = 1; it <= cfg.max_iter; ++it) {
        auto [sigma2_new, B_new] = prob.m_step(es, sigma2, cfg.fix_sigma);
        EStepResult es_new = prob.e_step(sigma2_new, B_new);
        const double crit = stopping_criterion(sigma2, es.logdetB, sigma2_new, es_new.logdetB);

        sigma2 = sigma2_new;
        B = std::move(B_new);
        es = std::move(es_new);
        st.iterations = it;
        st.history.push_back(
            EMHistoryRow{it, sigma2, es.logdetB, crit, prob.log_likelihood(sigma2, es)});

        if (crit < cfg.tolerance) {
            if (++streak >= cfg.patience) {
                st.converged = true;
                break;
            }
        } else {
            streak = 0;
        }
    }
    st.sigma2 = sigma2;
    st.B = std::move(B);
    st.mu = std::move(es.mu);
    st.C = std::move(es.C);
    return st;
}

double full_log_likelihood(const Eigen::VectorXd& z, double sigma2, const CholeskyFactor& fA,
                           const SparseDesign& P, const Eigen::MatrixXd& B) {
    const EMProblem prob(fA, P, z);
    const EStepResult es = prob.e_step(sigma2, B);
    return prob.log_likelihood(sigma2, es);
}

ReweightResult nugget_ratio_reweight(double sigma2_phi_old, double sigma2_phi_new,
                                     double sigma2_eps) {
    if (sigma2_phi_old <= 0.0 || sigma2_phi_new <= 0.0 || sigma2_eps <= 0.0)
        throw ConfigError("nugget reweighting needs positive variances");
    const double w = sigma2_phi_new * (1.0 + 1.0 / sigma2_phi_old - 1.0 / sigma2_phi_new);
    if (w <= 0.0) throw NumericError("nugget reweighting produced a nonpositive weight");
    return ReweightResult{w, sigma2_eps};
}

} // namespace mskrig
