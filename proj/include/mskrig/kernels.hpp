#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mskrig/common.hpp"

namespace mskrig {

enum class KernelFamily { spherical, exponential, gaussian, cubic, wendland2, matern };

KernelFamily kernel_family_from_string(std::string_view s);
std::string_view to_string(KernelFamily f);

// True when the correlation vanishes identically for h >= scale.
bool compactly_supported(KernelFamily f);

struct KernelParams {
    double sill = 1.0;
    double scale = 1.0;
    double smoothness = 0.0; // matern only
};

// Correlation rho(u) at normalized distance u = h/scale, rho(0) = 1.
//   spherical:   1 - 1.5u + 0.5u^3            (u < 1)
//   exponential: exp(-u)
//   gaussian:    exp(-u^2)
//   cubic:       1 - 7u^2 + 35/4 u^3 - 7/2 u^5 + 3/4 u^7   (u < 1)
//   wendland2:   (1-u)^6 (35u^2 + 18u + 3)/3  (u < 1; the d<=3, k=2 member)
//   matern:      2^{1-nu}/Gamma(nu) u^nu K_nu(u), 1 at u = 0
double base_correlation(KernelFamily f, double u, double smoothness = 0.0);

// sill * rho(h/scale). Throws ConfigError for nonpositive scale, nonpositive
// matern smoothness, or negative sill.
double eval_kernel(KernelFamily f, const KernelParams& p, double h);

// Compactly supported correlation multiplied onto the base kernel.
// range == 0 means no taper (only valid when the base itself has compact
// support and the kernel is used where finite support is required).
struct TaperSpec {
    KernelFamily family = KernelFamily::spherical;
    double range = 0.0;
};

// Base covariance times taper correlation; exact zero beyond the support.
struct TaperedKernel {
    KernelFamily base = KernelFamily::exponential;
    KernelParams params;
    TaperSpec taper;

    // Radius beyond which the kernel is identically zero; +inf when neither
    // part has compact support.
    double support() const;
    double operator()(double h) const;
};

double eval_tapered(const TaperedKernel& k, const Point& x, const Point& y);

// Local anisotropy: Sigma = R(angle) diag(a1^2, a2^2) R(angle)'.
struct AnisoParams {
    double a1 = 1.0;
    double a2 = 1.0;
    double angle = 0.0;
};

struct LocalParams {
    AnisoParams aniso;
    double nu = 0.5;
};

// Parameter fields (a1, a2, angle, nu) on a regular node grid over the domain,
// interpolated bilinearly. Nodes are stored row-major, index j*nx + i.
class LocalParamField {
public:
    LocalParamField(double xmin, double xmax, double ymin, double ymax,
                    int nx, int ny,
                    std::vector<double> a1, std::vector<double> a2,
                    std::vector<double> angle, std::vector<double> nu);

    static LocalParamField constant(const LocalParams& p);

    LocalParams at(const Point& x) const;

    double nu_min() const { return nu_min_; }
    double nu_max() const { return nu_max_; }
    double scale_min() const { return scale_min_; } // min over nodes of min(a1, a2)
    double det_root_max() const { return det_root_max_; } // max of a1*a2
    // medians over nodes: nu and the isotropic geometric-mean scale sqrt(a1 a2)
    double nu_median() const { return nu_median_; }
    double scale_median() const { return scale_median_; }

private:
    double xmin_, xmax_, ymin_, ymax_;
    int nx_, ny_;
    std::vector<double> a1_, a2_, angle_, nu_;
    double nu_min_, nu_max_, scale_min_, det_root_max_, nu_median_, scale_median_;
};

// t^nu K_nu(t) with its limit Gamma(nu) 2^{nu-1} at t = 0.
double matern_m(double nu, double t);

// Nonstationary Matern correlation between x and y:
//   phi_xy 2^{1-nu(x,y)} / sqrt(Gamma(nu(x)) Gamma(nu(y))) M_{nu(x,y)}(sqrt(Q_xy(x-y)))
// phi_xy = |Sx|^{1/4}|Sy|^{1/4}|(Sx+Sy)/2|^{-1/2}, Q_xy(h) = h'((Sx+Sy)/2)^{-1}h,
// nu(x,y) = (nu(x)+nu(y))/2. Value at x = y is exactly 1.
double eval_nonstationary_matern(const LocalParamField& f, const Point& x, const Point& y);

} // namespace mskrig
