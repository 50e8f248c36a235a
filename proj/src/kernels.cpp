#include "mskrig/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mskrig {

KernelFamily kernel_family_from_string(std::string_view s) {
    if (s == "spherical") return KernelFamily::spherical;
    if (s == "exponential") return KernelFamily::exponential;
    if (s == "gaussian") return KernelFamily::gaussian;
    if (s == "cubic") return KernelFamily::cubic;
    if (s == "wendland2") return KernelFamily::wendland2;
    if (s == "matern") return KernelFamily::matern;
    throw ConfigError("unknown kernel family: " + std::string(s));
}

std::string_view to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::spherical: return "spherical";
        case KernelFamily::exponential: return "exponential";
        case KernelFamily::gaussian: return "gaussian";
        case KernelFamily::cubic: return "cubic";
        case KernelFamily::wendland2: return "wendland2";
        case KernelFamily::matern: return "matern";
    }
    throw ConfigError("unknown kernel family");
}

bool compactly_supported(KernelFamily f) {
    switch (f) {
        case KernelFamily::spherical:
        case KernelFamily::cubic:
        case KernelFamily::wendland2:
            return true;
        default:
            return false;
    }
}

double base_correlation(KernelFamily f, double u, double smoothness) {
    switch (f) {
        case KernelFamily::spherical:
            return u < 1.0 ? 1.0 - 1.5 * u + 0.5 * u * u * u : 0.0;
        case KernelFamily::exponential:
            return std::exp(-u);
        case KernelFamily::gaussian:
            return std::exp(-u * u);
        case KernelFamily::cubic: {
            if (u >= 1.0) return 0.0;
            const double u2 = u * u, u3 = u2 * u;
            return 1.0 - 7.0 * u2 + 8.75 * u3 - 3.5 * u3 * u2 + 0.75 * u3 * u3 * u;
        }
        case KernelFamily::wendland2: {
            if (u >= 1.0) return 0.0;
            const double v = 1.0 - u;
            const double v2 = v * v, v6 = v2 * v2 * v2;
            return v6 * (35.0 * u * u + 18.0 * u + 3.0) / 3.0;
        }
        case KernelFamily::matern:
            if (u == 0.0) return 1.0;
            return matern_m(smoothness, u) / (std::tgamma(smoothness) * std::pow(2.0, smoothness - 1.0));
    }
    throw ConfigError("unknown kernel family");
}

double eval_kernel(KernelFamily f, const KernelParams& p, double h) {
    if (p.scale <= 0.0) throw ConfigError("kernel scale must be positive");
    if (p.sill < 0.0) throw ConfigError("kernel sill must be nonnegative");
    if (f == KernelFamily::matern && p.smoothness <= 0.0)
        throw ConfigError("matern smoothness must be positive");
    if (h < 0.0) throw ConfigError("kernel distance must be nonnegative");
    return p.sill * base_correlation(f, h / p.scale, p.smoothness);
}

double TaperedKernel::support() const {
    double s = std::numeric_limits<double>::infinity();
    if (compactly_supported(base)) s = params.scale;
    if (taper.range > 0.0) s = std::min(s, taper.range);
    return s;
}

double TaperedKernel::operator()(double h) const {
    double v = eval_kernel(base, params, h);
    if (taper.range > 0.0) {
        if (!compactly_supported(taper.family))
            throw ConfigError("taper family must have compact support");
        v *= base_correlation(taper.family, h / taper.range);
    }
    return v;
}

double eval_tapered(const TaperedKernel& k, const Point& x, const Point& y) {
    return k(dist(x, y));
}

double matern_m(double nu, double t) {
    if (nu <= 0.0) throw ConfigError("matern smoothness must be positive");
    if (t < 0.0) throw NumericError("matern argument must be nonnegative");
    if (t == 0.0) return std::tgamma(nu) * std::pow(2.0, nu - 1.0);
    // K_nu underflows to 0 for large t, which is the correct limit here
    return std::pow(t, nu) * std::cyl_bessel_k(nu, t);
}

LocalParamField::LocalParamField(double xmin, double xmax, double ymin, double ymax,
                                 int nx, int ny,
                                 std::vector<double> a1, std::vector<double> a2,
                                 std::vector<double> angle, std::vector<double> nu)
    : xmin_(xmin), xmax_(xmax), ymin_(ymin), ymax_(ymax), nx_(nx), ny_(ny),
      a1_(std::move(a1)), a2_(std::move(a2)), angle_(std::move(angle)), nu_(std::move(nu)) {
    const std::size_t n = static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_);
    if (nx_ < 1 || ny_ < 1) throw ConfigError("parameter field needs at least one node");
    if (a1_.size() != n || a2_.size() != n || angle_.size() != n || nu_.size() != n)
        throw ConfigError("parameter field arrays must have nx*ny entries");
    if (xmax_ <= xmin_ || ymax_ <= ymin_) throw ConfigError("parameter field domain is empty");
    for (std::size_t i = 0; i < n; ++i) {
        if (a1_[i] <= 0.0 || a2_[i] <= 0.0) throw ConfigError("anisotropy scales must be positive");
        if (nu_[i] <= 0.0) throw ConfigError("smoothness field must be positive");
    }
    nu_min_ = *std::min_element(nu_.begin(), nu_.end());
    nu_max_ = *std::max_element(nu_.begin(), nu_.end());
    scale_min_ = std::numeric_limits<double>::infinity();
    det_root_max_ = 0.0;
    std::vector<double> gm(n);
    for (std::size_t i = 0; i < n; ++i) {
        scale_min_ = std::min(scale_min_, std::min(a1_[i], a2_[i]));
        det_root_max_ = std::max(det_root_max_, a1_[i] * a2_[i]);
        gm[i] = std::sqrt(a1_[i] * a2_[i]);
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    nu_median_ = median(nu_);
    scale_median_ = median(gm);
}

LocalParamField LocalParamField::constant(const LocalParams& p) {
    return LocalParamField(0.0, 1.0, 0.0, 1.0, 1, 1,
                           {p.aniso.a1}, {p.aniso.a2}, {p.aniso.angle}, {p.nu});
}

LocalParams LocalParamField::at(const Point& q) const {
    if (nx_ == 1 && ny_ == 1)
        return {{a1_[0], a2_[0], angle_[0]}, nu_[0]};
    // clamped bilinear interpolation on the node lattice
    const double fx = nx_ > 1 ? (q.x - xmin_) / (xmax_ - xmin_) * (nx_ - 1) : 0.0;
    const double fy = ny_ > 1 ? (q.y - ymin_) / (ymax_ - ymin_) * (ny_ - 1) : 0.0;
    const int i0 = std::clamp(static_cast<int>(std::floor(fx)), 0, nx_ - (nx_ > 1 ? 2 : 1));
    const int j0 = std::clamp(static_cast<int>(std::floor(fy)), 0, ny_ - (ny_ > 1 ? 2 : 1));
    const double tx = nx_ > 1 ? std::clamp(fx - i0, 0.0, 1.0) : 0.0;
    const double ty = ny_ > 1 ? std::clamp(fy - j0, 0.0, 1.0) : 0.0;
    const int i1 = nx_ > 1 ? i0 + 1 : i0;
    const int j1 = ny_ > 1 ? j0 + 1 : j0;
    auto lerp = [&](const std::vector<double>& v) {
        const double v00 = v[static_cast<std::size_t>(j0) * nx_ + i0];
        const double v10 = v[static_cast<std::size_t>(j0) * nx_ + i1];
        const double v01 = v[static_cast<std::size_t>(j1) * nx_ + i0];
        const double v11 = v[static_cast<std::size_t>(j1) * nx_ + i1];
        return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11);
    };
    return {{lerp(a1_), lerp(a2_), lerp(angle_)}, lerp(nu_)};
}

namespace {

struct Sym2 {
    double xx, xy, yy;
    double det() const { return xx * yy - xy * xy; }
};

Sym2 sigma_of(const AnisoParams& a) {
    const double c = std::cos(a.angle), s = std::sin(a.angle);
    const double d1 = a.a1 * a.a1, d2 = a.a2 * a.a2;
    return {c * c * d1 + s * s * d2, c * s * (d1 - d2), s * s * d1 + c * c * d2};
}

} // namespace

double eval_nonstationary_matern(const LocalParamField& f, const Point& x, const Point& y) {
    const LocalParams px = f.at(x), py = f.at(y);
    const Sym2 sx = sigma_of(px.aniso), sy = sigma_of(py.aniso);
    const Sym2 sm{0.5 * (sx.xx + sy.xx), 0.5 * (sx.xy + sy.xy), 0.5 * (sx.yy + sy.yy)};
    const double detm = sm.det();
    if (detm <= 0.0) throw NumericError("averaged anisotropy matrix is singular");
    const double phi = std::pow(sx.det(), 0.25) * std::pow(sy.det(), 0.25) / std::sqrt(detm);
    const double hx = x.x - y.x, hy = x.y - y.y;
    // Q = h' Sm^{-1} h via the 2x2 adjugate
    const double q = (sm.yy * hx * hx - 2.0 * sm.xy * hx * hy + sm.xx * hy * hy) / detm;
    const double nub = 0.5 * (px.nu + py.nu);
    const double m = matern_m(nub, std::sqrt(std::max(q, 0.0)));
    return phi * std::pow(2.0, 1.0 - nub) / std::sqrt(std::tgamma(px.nu) * std::tgamma(py.nu)) * m;
}

} // namespace mskrig
