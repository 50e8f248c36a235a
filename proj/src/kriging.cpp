#include "mskrig/kriging.hpp"

#include <cmath>
#include <sstream>

#include "mskrig/grid_index.hpp"

namespace mskrig {

long trend_size(long degree) {
    if (degree < 0) throw ConfigError("trend degree must be nonnegative");
    return (degree + 1) * (degree + 2) / 2;
}

std::vector<std::string> trend_names(long degree) {
    std::vector<std::string> names;
    for (long t = 0; t <= degree; ++t) {
        for (long a = t; a >= 0; --a) {
            const long b = t - a;
            std::ostringstream s;
            if (t == 0) {
                s << "1";
            } else {
                if (a == 1) s << "x";
                if (a > 1) s << "x^" << a;
                if (a > 0 && b > 0) s << "*";
                if (b == 1) s << "y";
                if (b > 1) s << "y^" << b;
            }
            names.push_back(s.str());
        }
    }
    return names;
}

Eigen::MatrixXd trend_design(const std::vector<Point>& pts, long degree) {
    const long n = static_cast<long>(pts.size());
    const long L = trend_size(degree);
    Eigen::MatrixXd F(n, L);
    for (long i = 0; i < n; ++i) {
        long c = 0;
        for (long t = 0; t <= degree; ++t) {
            for (long a = t; a >= 0; --a) {
                const long b = t - a;
                F(i, c++) = std::pow(pts[i].x, static_cast<double>(a)) *
                            std::pow(pts[i].y, static_cast<double>(b));
            }
        }
    }
    return F;
}

double TrendModel::eval(const Point& p) const {
    long c = 0;
    double acc = 0.0;
    for (long t = 0; t <= degree; ++t) {
        for (long a = t; a >= 0; --a) {
            const long b = t - a;
            acc += beta[c++] * std::pow(p.x, static_cast<double>(a)) *
                   std::pow(p.y, static_cast<double>(b));
        }
    }
    return acc;
}

std::pair<TrendModel, Eigen::VectorXd> ols_detrend(const PointSet& data, long degree) {
    const long n = data.n();
    const long L = trend_size(degree);
    if (n <= L) throw ConfigError("detrending needs more observations than drift terms");
    const Eigen::MatrixXd F = trend_design(data.points, degree);
    Eigen::Map<const Eigen::VectorXd> z(data.values.data(), n);

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(F);
    if (qr.rank() < L) {
        const auto perm = qr.colsPermutation().indices();
        const std::vector<std::string> names = trend_names(degree);
        std::ostringstream msg;
        msg << "trend design is rank deficient; collinear drifts:";
        for (long k = qr.rank(); k < L; ++k) msg << " " << names[perm[k]];
        throw ConfigError(msg.str());
    }
    TrendModel t;
    t.degree = degree;
    t.beta = qr.solve(z);
    return {t, z - F * t.beta};
}

namespace {

// Sparse cross-covariance vector between a target and the data, as
// (row, value) pairs. Uses the structured support radius when there is a
// structured part, otherwise a point query for the nugget.
struct CrossBuilder {
    const FittedModel* m;
    NeighborGrid index;
    double radius;
    std::vector<int> buf;

    CrossBuilder(const FittedModel& model, double rad, double cell)
        : m(&model), index(model.data.points, cell), radius(rad) {}

    void build(const Point& t, std::vector<std::pair<int, double>>& out) {
        out.clear();
        index.neighbors(t, radius, buf);
        for (const int i : buf) {
            const double h = dist(t, m->data.points[i]);
            double v = 0.0;
            if (m->struct_weight > 0.0) v = m->struct_weight * m->small.correlation(h);
            if (h == 0.0) v += m->nugget_weight;
            if (v != 0.0) out.emplace_back(i, v);
        }
    }
};

CrossBuilder make_cross_builder(const FittedModel& m) {
    double srad = 0.0;
    if (m.struct_weight > 0.0) {
        srad = m.small.kernel().support();
        if (!std::isfinite(srad) || srad <= 0.0)
            throw ConfigError("prediction needs a compactly supported small-scale structure");
    }
    // Point queries still need a positive radius; size cells so they stay cheap.
    double xlo = 0.0, xhi = 0.0, ylo = 0.0, yhi = 0.0;
    bool first = true;
    for (const Point& p : m.data.points) {
        if (first) {
            xlo = xhi = p.x;
            ylo = yhi = p.y;
            first = false;
        } else {
            xlo = std::min(xlo, p.x);
            xhi = std::max(xhi, p.x);
            ylo = std::min(ylo, p.y);
            yhi = std::max(yhi, p.y);
        }
    }
    const double extent = std::max(xhi - xlo, yhi - ylo);
    const double radius = srad > 0.0 ? srad : 1e-12;
    const double cell = std::max({radius, extent / 512.0, 1e-9});
    return CrossBuilder(m, radius, cell);
}

Eigen::VectorXd basis_at(const FittedModel& m, const Point& t) {
    Eigen::VectorXd p0(m.p());
    for (long k = 0; k < m.p(); ++k) p0[k] = m.basis[k](t);
    return p0;
}

void check_model(const FittedModel& m) {
    const long n = m.data.n();
    const long p = m.p();
    if (n == 0) throw ConfigError("model has no data");
    if (m.z_resid.size() != n) throw ConfigError("model residuals inconsistent with data");
    if (m.P.n() != n || m.P.p() != p) throw ConfigError("model design inconsistent");
    if (m.mu.size() != p || m.B.rows() != p || m.B.cols() != p || m.C.rows() != p ||
        m.C.cols() != p)
        throw ConfigError("model posterior inconsistent with basis");
    if (!m.fA || m.fA->size() != n) throw ConfigError("model factor inconsistent with data");
    if (m.fA_scale <= 0.0) throw ConfigError("model covariance scale must be positive");
    if (m.struct_weight < 0.0 || m.nugget_weight < 0.0)
        throw ConfigError("model covariance weights must be nonnegative");
}

} // namespace

void finalize_model(FittedModel& m) {
    check_model(m);
    Eigen::VectorXd r = m.z_resid;
    if (m.p() > 0) r -= m.P.mat * m.mu;
    m.w = m.fA->solve(r) / m.fA_scale;
    m.Wt.reset();
}

PredictionResult predict(const FittedModel& m, const std::vector<Point>& targets) {
    check_model(m);
    if (m.w.size() != m.data.n()) throw ConfigError("model not finalized");
    PredictionResult res;
    res.targets = targets;
    res.mean.resize(static_cast<long>(targets.size()));

    CrossBuilder cross = make_cross_builder(m);
    std::vector<std::pair<int, double>> a0;
    for (size_t t = 0; t < targets.size(); ++t) {
        const Point& x0 = targets[t];
        double mean = m.trend.eval(x0);
        for (long k = 0; k < m.p(); ++k) mean += m.basis[k](x0) * m.mu[k];
        cross.build(x0, a0);
        for (const auto& [i, v] : a0) mean += v * m.w[i];
        res.mean[static_cast<long>(t)] = mean;
    }
    return res;
}

PredictionResult predict_variance(const FittedModel& m, const std::vector<Point>& targets) {
    check_model(m);
    if (m.w.size() != m.data.n()) throw ConfigError("model not finalized");
    const long n = m.data.n();
    const long p = m.p();
    if (p > 0 && !m.Wt)
        m.Wt = std::make_shared<Eigen::MatrixXd>(m.fA->solve_design(m.P) / m.fA_scale);

    PredictionResult res;
    res.targets = targets;
    res.mean.resize(static_cast<long>(targets.size()));
    res.variance.resize(static_cast<long>(targets.size()));

    CrossBuilder cross = make_cross_builder(m);
    std::vector<std::pair<int, double>> a0;
    Eigen::VectorXd a0_dense = Eigen::VectorXd::Zero(n);
    const double punct = m.punctual_variance();
    for (size_t t = 0; t < targets.size(); ++t) {
        const Point& x0 = targets[t];
        cross.build(x0, a0);

        double mean = m.trend.eval(x0);
        Eigen::VectorXd p0;
        if (p > 0) {
            p0 = basis_at(m, x0);
            mean += p0.dot(m.mu);
        }
        for (const auto& [i, v] : a0) mean += v * m.w[i];
        res.mean[static_cast<long>(t)] = mean;

        double quad = 0.0;
        if (!a0.empty()) {
            for (const auto& [i, v] : a0) a0_dense[i] = v;
            quad = m.fA->inv_quad_form(a0_dense) / m.fA_scale;
            for (const auto& [i, v] : a0) a0_dense[i] = 0.0;
        }
        double var = punct - quad;
        if (p > 0) {
            Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
            for (const auto& [i, v] : a0) u += v * m.Wt->row(i).transpose();
            const Eigen::VectorXd d = p0 - u;
            var += d.dot(m.C * d);
        }
        if (var < 0.0) {
            if (var < -1e-10) throw NumericError("prediction variance is negative");
            var = 0.0;
            ++res.clamped;
        }
        res.variance[static_cast<long>(t)] = var;
    }
    return res;
}

UkResult dense_uk_oracle(const PointSet& data,
                         const std::function<double(const Point&, const Point&)>& cov,
                         long trend_degree, const Point& target) {
    const long n = data.n();
    if (n == 0) throw ConfigError("kriging oracle needs data");
    if (n > 2000) throw ConfigError("kriging oracle is dense; n too large");
    Eigen::MatrixXd K(n, n);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j) K(i, j) = cov(data.points[i], data.points[j]);
    Eigen::VectorXd k0(n);
    for (long i = 0; i < n; ++i) k0[i] = cov(data.points[i], target);
    const double c00 = cov(target, target);
    Eigen::Map<const Eigen::VectorXd> z(data.values.data(), n);

    if (trend_degree < 0) { // simple kriging, known zero mean
        Eigen::LLT<Eigen::MatrixXd> llt(K);
        if (llt.info() != Eigen::Success)
            throw NumericError("kriging oracle covariance is not positive definite");
        const Eigen::VectorXd lambda = llt.solve(k0);
        return UkResult{lambda.dot(z), c00 - lambda.dot(k0)};
    }

    const long L = trend_size(trend_degree);
    const Eigen::MatrixXd F = trend_design(data.points, trend_degree);
    const Eigen::VectorXd f0 = trend_design({target}, trend_degree).row(0);
    Eigen::MatrixXd bordered = Eigen::MatrixXd::Zero(n + L, n + L);
    bordered.topLeftCorner(n, n) = K;
    bordered.topRightCorner(n, L) = F;
    bordered.bottomLeftCorner(L, n) = F.transpose();
    Eigen::VectorXd rhs(n + L);
    rhs.head(n) = k0;
    rhs.tail(L) = f0;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(bordered);
    if (!lu.isInvertible()) throw NumericError("universal kriging system is singular");
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd lambda = sol.head(n);
    const Eigen::VectorXd mlag = sol.tail(L);
    return UkResult{lambda.dot(z), c00 - lambda.dot(k0) - mlag.dot(f0)};
}

} // namespace mskrig
