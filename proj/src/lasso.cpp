#include "mskrig/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mskrig/rng.hpp"

namespace mskrig {

namespace {

void check_finite(const SparseDesign& X, const Eigen::VectorXd& y) {
    if (!y.allFinite()) throw NumericError("lasso: response contains non-finite values");
    const double* v = X.mat.valuePtr();
    for (long k = 0; k < X.mat.nonZeros(); ++k)
        if (!std::isfinite(v[k])) throw NumericError("lasso: design contains non-finite values");
}

std::vector<double> column_scales(const Eigen::SparseMatrix<double>& X) {
    const long n = X.rows();
    std::vector<double> s(X.cols(), 0.0);
    for (long j = 0; j < X.cols(); ++j) {
        double ss = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(X, j); it; ++it)
            ss += it.value() * it.value();
        s[j] = std::sqrt(ss / static_cast<double>(n));
    }
    return s;
}

double population_variance(const Eigen::VectorXd& v) {
    if (v.size() == 0) return 0.0;
    const double mean = v.mean();
    return (v.array() - mean).square().sum() / static_cast<double>(v.size());
}

double soft_threshold(double g, double lambda) {
    if (g > lambda) return g - lambda;
    if (g < -lambda) return g + lambda;
    return 0.0;
}

// Core solver on standardized columns. beta holds standardized coefficients
// and r the current residual y - X~ beta; both are updated in place.
struct CdWorkspace {
    const Eigen::SparseMatrix<double>* X;
    const std::vector<double>* s;
    Eigen::VectorXd r;
    Eigen::VectorXd beta;
    double tol;

    // One pass over the given columns; returns the largest coefficient move.
    double sweep(const std::vector<long>& cols, double lambda) {
        const double n = static_cast<double>(X->rows());
        double max_change = 0.0;
        for (const long j : cols) {
            const double sj = (*s)[j];
            if (sj == 0.0) continue;
            double dot = 0.0;
            for (Eigen::SparseMatrix<double>::InnerIterator it(*X, j); it; ++it)
                dot += it.value() * r[it.row()];
            const double g = beta[j] + dot / (n * sj);
            const double bnew = soft_threshold(g, lambda);
            const double delta = bnew - beta[j];
            if (delta != 0.0) {
                for (Eigen::SparseMatrix<double>::InnerIterator it(*X, j); it; ++it)
                    r[it.row()] -= delta * it.value() / sj;
                beta[j] = bnew;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        return max_change;
    }

    void solve(double lambda, const std::vector<long>& all_cols) {
        std::vector<long> active;
        for (long outer = 0; outer < 10000; ++outer) {
            const double full_change = sweep(all_cols, lambda);
            if (full_change < tol) return;
            active.clear();
            for (const long j : all_cols)
                if (beta[j] != 0.0) active.push_back(j);
            for (long inner = 0; inner < 10000; ++inner)
                if (sweep(active, lambda) < tol) break;
        }
        throw NumericError("lasso coordinate descent did not converge");
    }
};

Eigen::VectorXd to_original_scale(const Eigen::VectorXd& beta_std, const std::vector<double>& s) {
    Eigen::VectorXd b = beta_std;
    for (long j = 0; j < b.size(); ++j) b[j] = s[j] > 0.0 ? b[j] / s[j] : 0.0;
    return b;
}

double convergence_tol(const Eigen::VectorXd& y) {
    const double sd = std::sqrt(population_variance(y));
    if (sd > 0.0) return 1e-7 * sd;
    const double m = std::abs(y.size() ? y.mean() : 0.0);
    return 1e-7 * (m > 0.0 ? m : 1.0);
}

// Betas on the original scale for every lambda, strongest penalty first.
std::vector<Eigen::VectorXd> cd_path(const Eigen::SparseMatrix<double>& X,
                                     const Eigen::VectorXd& y,
                                     const std::vector<double>& lambdas) {
    const long p = X.cols();
    const std::vector<double> s = column_scales(X);
    std::vector<long> all_cols(p);
    std::iota(all_cols.begin(), all_cols.end(), 0);

    CdWorkspace w{&X, &s, y, Eigen::VectorXd::Zero(p), convergence_tol(y)};
    std::vector<Eigen::VectorXd> out;
    out.reserve(lambdas.size());
    for (const double lambda : lambdas) {
        if (lambda < 0.0) throw ConfigError("lasso penalties must be nonnegative");
        w.solve(lambda, all_cols);
        out.push_back(to_original_scale(w.beta, s));
    }
    return out;
}

} // namespace

std::vector<double> lambda_grid(const SparseDesign& X, const Eigen::VectorXd& y,
                                long n_lambda, double min_ratio) {
    if (X.n() != y.size()) throw ConfigError("lasso: design and response sizes disagree");
    if (n_lambda < 2) throw ConfigError("lambda grid needs at least 2 points");
    if (!(min_ratio > 0.0 && min_ratio < 1.0)) throw ConfigError("lambda grid ratio must be in (0,1)");
    check_finite(X, y);

    const double n = static_cast<double>(X.n());
    const std::vector<double> s = column_scales(X.mat);
    double lmax = 0.0;
    for (long j = 0; j < X.p(); ++j) {
        if (s[j] == 0.0) continue;
        double dot = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(X.mat, j); it; ++it)
            dot += it.value() * y[it.row()];
        lmax = std::max(lmax, std::abs(dot) / (n * s[j]));
    }
    std::vector<double> grid(n_lambda);
    for (long k = 0; k < n_lambda; ++k)
        grid[k] = lmax * std::pow(min_ratio, static_cast<double>(k) / static_cast<double>(n_lambda - 1));
    return grid;
}

LassoPath lasso_path(const SparseDesign& X, const Eigen::VectorXd& y,
                     const std::vector<double>& lambdas) {
    if (X.n() != y.size()) throw ConfigError("lasso: design and response sizes disagree");
    if (lambdas.empty()) throw ConfigError("lasso: empty penalty sequence");
    for (size_t k = 1; k < lambdas.size(); ++k)
        if (!(lambdas[k] <= lambdas[k - 1]))
            throw ConfigError("lasso: penalties must be non-increasing");
    check_finite(X, y);

    LassoPath path;
    path.lambdas = lambdas;
    path.betas = cd_path(X.mat, y, lambdas);
    path.n_active.reserve(lambdas.size());
    path.explained_variance.reserve(lambdas.size());
    for (const Eigen::VectorXd& b : path.betas) {
        long act = 0;
        for (long j = 0; j < b.size(); ++j)
            if (b[j] != 0.0) ++act;
        path.n_active.push_back(act);
        path.explained_variance.push_back(population_variance(X.mat * b));
    }
    return path;
}

void cross_validate(LassoPath& path, const SparseDesign& X, const Eigen::VectorXd& y,
                    long folds, unsigned long long seed) {
    const long n = X.n();
    if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
    if (n < folds) throw ConfigError("cross-validation needs n >= folds");
    if (path.m() == 0) throw ConfigError("cross-validation needs a penalty grid");

    // Striped assignment of a seeded shuffle: fold sizes differ by at most 1.
    std::vector<long> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    RngStream rng(seed, "cv_folds");
    for (long i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.integer(static_cast<unsigned long long>(i + 1))]);
    std::vector<int> fold_of(n);
    for (long i = 0; i < n; ++i) fold_of[perm[i]] = static_cast<int>(i % folds);

    const long m = path.m();
    Eigen::MatrixXd fold_mse(folds, m);
    for (int f = 0; f < folds; ++f) {
        std::vector<long> train_row(n, -1), test_row(n, -1);
        long ntr = 0, nte = 0;
        for (long i = 0; i < n; ++i) {
            if (fold_of[i] == f)
                test_row[i] = nte++;
            else
                train_row[i] = ntr++;
        }
        Eigen::VectorXd ytr(ntr), yte(nte);
        for (long i = 0; i < n; ++i) {
            if (train_row[i] >= 0) ytr[train_row[i]] = y[i];
            if (test_row[i] >= 0) yte[test_row[i]] = y[i];
        }

        std::vector<Eigen::Triplet<double>> tr_trips, te_trips;
        tr_trips.reserve(static_cast<size_t>(X.mat.nonZeros()));
        for (long j = 0; j < X.p(); ++j) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(X.mat, j); it; ++it) {
                if (train_row[it.row()] >= 0)
                    tr_trips.emplace_back(train_row[it.row()], j, it.value());
                else
                    te_trips.emplace_back(test_row[it.row()], j, it.value());
            }
        }
        Eigen::SparseMatrix<double> Xtr(ntr, X.p()), Xte(nte, X.p());
        Xtr.setFromTriplets(tr_trips.begin(), tr_trips.end());
        Xte.setFromTriplets(te_trips.begin(), te_trips.end());

        const std::vector<Eigen::VectorXd> betas = cd_path(Xtr, ytr, path.lambdas);
        for (long k = 0; k < m; ++k) {
            const Eigen::VectorXd err = yte - Xte * betas[k];
            fold_mse(f, k) = err.squaredNorm() / static_cast<double>(nte);
        }
    }

    path.cv_mean.assign(m, 0.0);
    path.cv_se.assign(m, 0.0);
    for (long k = 0; k < m; ++k) {
        const double mean = fold_mse.col(k).mean();
        double ss = 0.0;
        for (int f = 0; f < folds; ++f) {
            const double d = fold_mse(f, k) - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(folds - 1));
        path.cv_mean[k] = mean;
        path.cv_se[k] = sd / std::sqrt(static_cast<double>(folds));
    }
    path.cv_seed = seed;
}

long one_se_rule(const LassoPath& path) {
    if (!path.has_cv()) throw ConfigError("one-SE rule needs CV results");
    long kmin = 0;
    for (long k = 1; k < path.m(); ++k)
        if (path.cv_mean[k] < path.cv_mean[kmin]) kmin = k;
    const double cutoff = path.cv_mean[kmin] + path.cv_se[kmin];
    for (long k = 0; k < path.m(); ++k)
        if (path.cv_mean[k] <= cutoff) return k;
    return kmin;
}

Selection select_by_variance_target(const LassoPath& path, double target_variance) {
    if (target_variance < 0.0) throw ConfigError("variance target must be nonnegative");
    if (path.m() == 0) throw ConfigError("variance selection needs a path");
    Selection sel;
    long chosen = -1;
    for (long k = 0; k < path.m(); ++k) {
        if (path.explained_variance[k] >= target_variance) {
            chosen = k;
            break;
        }
    }
    if (chosen < 0) {
        chosen = path.m() - 1;
        sel.fallback_warning = true;
    }
    sel.index = chosen;
    sel.lambda = path.lambdas[chosen];
    const Eigen::VectorXd& b = path.betas[chosen];
    for (long j = 0; j < b.size(); ++j)
        if (b[j] != 0.0) sel.active.push_back(j);
    return sel;
}

double lasso_objective(const SparseDesign& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& beta, double lambda) {
    const double n = static_cast<double>(X.n());
    const std::vector<double> s = column_scales(X.mat);
    const Eigen::VectorXd r = y - X.mat * beta;
    double l1 = 0.0;
    for (long j = 0; j < beta.size(); ++j) l1 += s[j] * std::abs(beta[j]);
    return r.squaredNorm() / (2.0 * n) + lambda * l1;
}

double kkt_violation(const SparseDesign& X, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& beta, double lambda) {
    const double n = static_cast<double>(X.n());
    const std::vector<double> s = column_scales(X.mat);
    const Eigen::VectorXd r = y - X.mat * beta;
    double worst = 0.0;
    for (long j = 0; j < X.p(); ++j) {
        if (s[j] == 0.0) continue;
        double dot = 0.0;
        for (Eigen::SparseMatrix<double>::InnerIterator it(X.mat, j); it; ++it)
            dot += it.value() * r[it.row()];
        const double g = dot / (n * s[j]); // gradient wrt the standardized coefficient
        if (beta[j] != 0.0)
            worst = std::max(worst, std::abs(g - lambda * (beta[j] > 0.0 ? 1.0 : -1.0)));
        else
            worst = std::max(worst, std::max(0.0, std::abs(g) - lambda));
    }
    return worst;
}

} // namespace mskrig
