#include "mskrig/dictionary.hpp"

#include <cmath>

#include "mskrig/grid_index.hpp"

namespace mskrig {

double BasisAtom::operator()(const Point& x) const {
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double dx = x.x - knot.x, dy = x.y - knot.y;
    const double du = dx * cs + dy * sn;  // major axis
    const double dv = -dx * sn + dy * cs; // minor axis
    const double q2 = (du / range) * (du / range) + (dv * ratio / range) * (dv * ratio / range);
    if (q2 >= 1.0) return 0.0;
    return base_correlation(family, std::sqrt(q2));
}

namespace {

void validate(const BasisSpec& s) {
    if (s.families.empty() || s.ranges.empty() || s.angles.empty())
        throw ConfigError("dictionary spec has an empty factor");
    if (s.spacing_factors.size() != s.ranges.size())
        throw ConfigError("dictionary spec needs one spacing factor per range");
    for (const double r : s.ranges)
        if (r <= 0.0) throw ConfigError("dictionary ranges must be positive");
    for (const double c : s.spacing_factors)
        if (c <= 0.0) throw ConfigError("dictionary spacing factors must be positive");
    for (const double a : s.angles)
        if (a < 0.0 || a >= 3.14159265358979323846)
            throw ConfigError("dictionary angles must lie in [0, pi)");
    if (s.ratio < 1.0) throw ConfigError("anisotropy ratio must be >= 1");
    if (s.x1 <= s.x0 || s.y1 <= s.y0) throw ConfigError("dictionary domain is empty");
    for (const KernelFamily f : s.families)
        if (!compactly_supported(f))
            throw ConfigError("dictionary families must be compactly supported");
}

} // namespace

Dictionary build_dictionary(const BasisSpec& spec) {
    validate(spec);
    Dictionary d;
    for (const KernelFamily fam : spec.families) {
        for (size_t ri = 0; ri < spec.ranges.size(); ++ri) {
            const double r = spec.ranges[ri];
            const double s1 = spec.spacing_factors[ri] * r;
            const double s2 = s1 / spec.ratio;
            for (const double phi : spec.angles) {
                const double cs = std::cos(phi), sn = std::sin(phi);
                // Rotated-frame extent of the domain corners.
                double ulo = 0, uhi = 0, vlo = 0, vhi = 0;
                bool first = true;
                const double xs[2] = {spec.x0, spec.x1};
                const double ys[2] = {spec.y0, spec.y1};
                for (const double x : xs) {
                    for (const double y : ys) {
                        const double u = x * cs + y * sn;
                        const double v = -x * sn + y * cs;
                        if (first) {
                            ulo = uhi = u;
                            vlo = vhi = v;
                            first = false;
                        } else {
                            ulo = std::min(ulo, u);
                            uhi = std::max(uhi, u);
                            vlo = std::min(vlo, v);
                            vhi = std::max(vhi, v);
                        }
                    }
                }
                const double m = spec.margin;
                const long i0 = static_cast<long>(std::ceil((ulo - m * s1) / s1 - 1e-9));
                const long i1 = static_cast<long>(std::floor((uhi + m * s1) / s1 + 1e-9));
                const long j0 = static_cast<long>(std::ceil((vlo - m * s2) / s2 - 1e-9));
                const long j1 = static_cast<long>(std::floor((vhi + m * s2) / s2 + 1e-9));
                // Axis-aligned half-widths of the support ellipse.
                const double a = r, b = r / spec.ratio;
                const double wx = std::sqrt(a * a * cs * cs + b * b * sn * sn);
                const double wy = std::sqrt(a * a * sn * sn + b * b * cs * cs);

                KnotGridInfo info;
                info.range = r;
                info.angle = phi;
                info.spacing_major = s1;
                info.spacing_minor = s2;
                info.i0 = i0;
                info.i1 = i1;
                info.j0 = j0;
                info.j1 = j1;
                for (long i = i0; i <= i1; ++i) {
                    for (long j = j0; j <= j1; ++j) {
                        const double u = static_cast<double>(i) * s1;
                        const double v = static_cast<double>(j) * s2;
                        const double x = u * cs - v * sn;
                        const double y = u * sn + v * cs;
                        const bool keep = x + wx >= spec.x0 && x - wx <= spec.x1 &&
                                          y + wy >= spec.y0 && y - wy <= spec.y1;
                        if (!keep) continue;
                        d.atoms.push_back(BasisAtom{fam, r, phi, spec.ratio, Point{x, y}});
                        ++info.kept;
                    }
                }
                d.grids.push_back(info);
            }
        }
    }
    if (d.atoms.empty()) throw ConfigError("dictionary construction kept no atoms");
    return d;
}

namespace {

SparseDesign evaluate_impl(const Dictionary& d, const std::vector<Point>& pts,
                           const std::vector<long>* subset) {
    const long n = static_cast<long>(pts.size());
    const long p = subset ? static_cast<long>(subset->size()) : d.p();
    double max_r = 0.0;
    for (const BasisAtom& a : d.atoms) max_r = std::max(max_r, a.range);

    std::vector<Eigen::Triplet<double>> trips;
    if (n > 0 && p > 0 && max_r > 0.0) {
        NeighborGrid index(pts, max_r);
        std::vector<int> buf;
        for (long k = 0; k < p; ++k) {
            const BasisAtom& atom = d.atoms[subset ? (*subset)[k] : k];
            index.neighbors(atom.knot, atom.range, buf);
            for (const int i : buf) {
                const double val = atom(pts[i]);
                if (val != 0.0) trips.emplace_back(i, k, val);
            }
        }
    }
    Eigen::SparseMatrix<double> mat(n, p);
    mat.setFromTriplets(trips.begin(), trips.end());
    mat.makeCompressed();
    return SparseDesign{std::move(mat)};
}

} // namespace

SparseDesign evaluate_design(const Dictionary& d, const std::vector<Point>& pts) {
    return evaluate_impl(d, pts, nullptr);
}

SparseDesign evaluate_design(const Dictionary& d, const std::vector<Point>& pts,
                             const std::vector<long>& subset) {
    for (const long j : subset)
        if (j < 0 || j >= d.p()) throw ConfigError("design subset index out of range");
    return evaluate_impl(d, pts, &subset);
}

} // namespace mskrig
