#include "mskrig/simulate.hpp"

#include <cmath>

#include "mskrig/rng.hpp"

namespace mskrig {

std::vector<Point> Grid::centers() const {
    std::vector<Point> pts;
    pts.reserve(static_cast<size_t>(cells()));
    for (long j = 0; j < ny; ++j)
        for (long i = 0; i < nx; ++i) pts.push_back(center(i, j));
    return pts;
}

Grid make_grid(long nx, long ny, double x0, double y0, double x1, double y1) {
    if (nx < 1 || ny < 1) throw ConfigError("grid needs nx, ny >= 1");
    if (x1 <= x0 || y1 <= y0) throw ConfigError("grid domain is empty");
    Grid g;
    g.nx = nx;
    g.ny = ny;
    g.x0 = x0;
    g.y0 = y0;
    g.x1 = x1;
    g.y1 = y1;
    return g;
}

double bilinear(const Grid& g, const Point& p) {
    if (g.values.size() != static_cast<size_t>(g.cells()))
        throw ConfigError("grid has no values to interpolate");
    const auto axis = [](double t, double orig, double step, long n) {
        if (n == 1) return std::pair<long, double>{0, 0.0};
        double gx = (t - orig) / step - 0.5;
        if (gx < 0.0) gx = 0.0;
        if (gx > static_cast<double>(n - 1)) gx = static_cast<double>(n - 1);
        long i0 = static_cast<long>(gx);
        if (i0 > n - 2) i0 = n - 2;
        double w = gx - static_cast<double>(i0);
        // Exact at centers: the division above can miss an integer by one ulp,
        // so snap the weight when t sits on a center coordinate.
        if (t == orig + (static_cast<double>(i0) + 0.5) * step) w = 0.0;
        else if (t == orig + (static_cast<double>(i0 + 1) + 0.5) * step) w = 1.0;
        return std::pair<long, double>{i0, w};
    };
    const auto [i0, tx] = axis(p.x, g.x0, g.dx(), g.nx);
    const auto [j0, ty] = axis(p.y, g.y0, g.dy(), g.ny);
    const auto v = [&](long i, long j) { return g.values[j * g.nx + i]; };
    if (g.nx == 1 && g.ny == 1) return v(0, 0);
    if (g.nx == 1) return (1.0 - ty) * v(0, j0) + ty * v(0, j0 + 1);
    if (g.ny == 1) return (1.0 - tx) * v(i0, 0) + tx * v(i0 + 1, 0);
    return (1.0 - tx) * (1.0 - ty) * v(i0, j0) + tx * (1.0 - ty) * v(i0 + 1, j0) +
           (1.0 - tx) * ty * v(i0, j0 + 1) + tx * ty * v(i0 + 1, j0 + 1);
}

void simulate_dense(Grid& g, const std::function<double(const Point&, const Point&)>& cov,
                    unsigned long long seed) {
    const long n = g.cells();
    if (n > 20000) throw ConfigError("grid too large for dense simulation (over 20000 cells)");
    const std::vector<Point> pts = g.centers();
    Eigen::MatrixXd K(n, n);
    for (long i = 0; i < n; ++i) {
        for (long j = 0; j <= i; ++j) {
            const double v = cov(pts[i], pts[j]);
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) {
        const double jitter = 1e-10 * K.diagonal().maxCoeff();
        K.diagonal().array() += jitter;
        llt.compute(K);
        if (llt.info() != Eigen::Success)
            throw NumericError("simulation covariance is not positive definite (after jitter)");
    }
    RngStream rng(seed, "simulate_dense");
    Eigen::VectorXd xi(n);
    for (long i = 0; i < n; ++i) xi[i] = rng.normal();
    const Eigen::VectorXd z = llt.matrixL() * xi;
    g.values.assign(z.data(), z.data() + n);
}

Eigen::VectorXd simulate_compact(const SparseSymMatrix& A, unsigned long long seed) {
    const CholeskyFactor f = cholesky(A);
    RngStream rng(seed, "simulate_compact");
    Eigen::VectorXd xi(A.size());
    for (long i = 0; i < A.size(); ++i) xi[i] = rng.normal();
    return f.unwhiten(xi);
}

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Instrumental {
    double nu = 0.0;
    double a = 0.0; // isotropic scale
    double norm = 0.0; // a^2 nu / pi

    double density(double w1, double w2) const {
        const double q = a * a * (w1 * w1 + w2 * w2);
        return norm * std::pow(1.0 + q, -(nu + 1.0));
    }
};

Instrumental instrumental_of(const LocalParamField& f) {
    Instrumental g;
    g.nu = f.nu_median();
    g.a = f.scale_median();
    if (g.nu <= 0.0 || g.a <= 0.0)
        throw ConfigError("spectral simulation needs positive median parameters");
    g.norm = g.a * g.a * g.nu / kPi;
    return g;
}

struct Wave {
    double w1 = 0.0, w2 = 0.0, phi = 0.0;
    double g = 0.0; // instrumental density at omega
};

// One accepted wave; draws whose worst-case importance ratio over the domain
// exceeds the overflow bound are resampled.
Wave draw_wave(RngStream& rng, const Instrumental& g, const LocalParamField& f,
               double overflow_bound, long& rejected) {
    const double worst_norm = f.det_root_max() * f.nu_max() / kPi;
    const double amin2 = f.scale_min() * f.scale_min();
    for (long attempt = 0; attempt < 100000; ++attempt) {
        const double u = rng.uniform01();
        const double t = std::sqrt(std::pow(1.0 - u, -1.0 / g.nu) - 1.0);
        const double r = t / g.a;
        const double theta = rng.uniform(0.0, 2.0 * kPi);
        Wave w;
        w.w1 = r * std::cos(theta);
        w.w2 = r * std::sin(theta);
        w.phi = rng.uniform(0.0, 2.0 * kPi);
        w.g = g.density(w.w1, w.w2);
        const double worst =
            worst_norm * std::pow(1.0 + amin2 * r * r, -(f.nu_min() + 1.0)) / w.g;
        if (worst <= overflow_bound) return w;
        ++rejected;
    }
    throw NumericError("spectral simulation rejected too many waves");
}

// Cell-local quantities of the importance weight, precomputed once.
struct CellParams {
    double e11 = 0.0, e12 = 0.0, e22 = 0.0; // Sigma entries
    double nup1 = 0.0;                      // nu + 1
    double amp = 0.0;                       // sqrt(a1 a2 nu / pi)
};

CellParams cell_params(const LocalParamField& f, const Point& x) {
    const LocalParams lp = f.at(x);
    const double c = std::cos(lp.aniso.angle), s = std::sin(lp.aniso.angle);
    const double l1 = lp.aniso.a1 * lp.aniso.a1, l2 = lp.aniso.a2 * lp.aniso.a2;
    CellParams cp;
    cp.e11 = l1 * c * c + l2 * s * s;
    cp.e12 = (l1 - l2) * c * s;
    cp.e22 = l1 * s * s + l2 * c * c;
    cp.nup1 = lp.nu + 1.0;
    cp.amp = std::sqrt(lp.aniso.a1 * lp.aniso.a2 * lp.nu / kPi);
    return cp;
}

double weight_at(const CellParams& cp, const Wave& w, double g_inv_sqrt) {
    const double q = cp.e11 * w.w1 * w.w1 + 2.0 * cp.e12 * w.w1 * w.w2 + cp.e22 * w.w2 * w.w2;
    return cp.amp * std::exp(-0.5 * cp.nup1 * std::log1p(q)) * g_inv_sqrt;
}

} // namespace

long simulate_nonstationary(Grid& g, const LocalParamField& field, const SpectralConfig& cfg) {
    if (cfg.waves < 1) throw ConfigError("spectral simulation needs at least one wave");
    const long n = g.cells();
    const std::vector<Point> pts = g.centers();
    const Instrumental inst = instrumental_of(field);

    std::vector<CellParams> cps;
    cps.reserve(static_cast<size_t>(n));
    for (const Point& p : pts) cps.push_back(cell_params(field, p));

    std::vector<double> acc(n, 0.0);
    RngStream rng(cfg.seed, "spectral");
    long rejected = 0;
    for (long k = 0; k < cfg.waves; ++k) {
        const Wave w = draw_wave(rng, inst, field, cfg.overflow_bound, rejected);
        const double g_inv_sqrt = 1.0 / std::sqrt(w.g);
        for (long c = 0; c < n; ++c) {
            const double phase = w.w1 * pts[c].x + w.w2 * pts[c].y + w.phi;
            acc[c] += weight_at(cps[c], w, g_inv_sqrt) * std::cos(phase);
        }
    }
    const double scale = std::sqrt(2.0 / static_cast<double>(cfg.waves));
    g.values.resize(n);
    for (long c = 0; c < n; ++c) g.values[c] = scale * acc[c];
    return rejected;
}

double spectral_variance_estimate(const Point& x, const LocalParamField& field,
                                  const SpectralConfig& cfg) {
    if (cfg.waves < 1) throw ConfigError("spectral simulation needs at least one wave");
    const Instrumental inst = instrumental_of(field);
    const CellParams cp = cell_params(field, x);
    RngStream rng(cfg.seed, "spectral");
    long rejected = 0;
    double acc = 0.0;
    for (long k = 0; k < cfg.waves; ++k) {
        const Wave w = draw_wave(rng, inst, field, cfg.overflow_bound, rejected);
        const double wk = weight_at(cp, w, 1.0 / std::sqrt(w.g));
        acc += wk * wk;
    }
    return acc / static_cast<double>(cfg.waves);
}

PointSet sample_locations(const Grid& g, long n, unsigned long long seed) {
    if (n < 1) throw ConfigError("sampling needs n >= 1");
    if (g.values.size() != static_cast<size_t>(g.cells()))
        throw ConfigError("grid has no values to sample");
    RngStream rng(seed, "sample_locations");
    PointSet out;
    out.points.reserve(static_cast<size_t>(n));
    out.values.resize(n);
    for (long k = 0; k < n; ++k) {
        Point p;
        p.x = rng.uniform(g.x0, g.x1);
        p.y = rng.uniform(g.y0, g.y1);
        out.points.push_back(p);
        out.values[k] = bilinear(g, p);
    }
    return out;
}

} // namespace mskrig
