#pragma once

#include <vector>

#include "mskrig/common.hpp"
#include "mskrig/kernels.hpp"
#include "mskrig/sparse.hpp"

namespace mskrig {

// Candidate dictionary configuration: compactly supported correlation shapes
// on rotated anisotropic knot lattices, one lattice per (range, angle) pair.
// spacing_factors runs parallel to ranges; knot spacing along the major axis
// is factor * range and the minor axis shrinks by the anisotropy ratio.
struct BasisSpec {
    std::vector<KernelFamily> families{KernelFamily::cubic, KernelFamily::spherical};
    std::vector<double> ranges{0.5, 0.2};
    std::vector<double> spacing_factors{0.464, 0.56};
    std::vector<double> angles{0.0, 0.25 * 3.14159265358979323846,
                               0.5 * 3.14159265358979323846, 0.75 * 3.14159265358979323846};
    double ratio = 2.0;    // major/minor axis ratio
    double margin = 1.0;   // knot coverage margin, in spacing units
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0; // domain bounds

    // The stock configuration above yields 2658 atoms on the unit square.
    static BasisSpec standard() { return BasisSpec{}; }
};

struct BasisAtom {
    KernelFamily family;
    double range;
    double angle;
    double ratio;
    Point knot;

    // Correlation at x: base_correlation(family, q) with q the elliptic
    // distance (1 at the support boundary). Exactly zero outside.
    double operator()(const Point& x) const;
};

// Knot lattice bookkeeping for run manifests.
struct KnotGridInfo {
    double range = 0.0, angle = 0.0, spacing_major = 0.0, spacing_minor = 0.0;
    long i0 = 0, i1 = 0, j0 = 0, j1 = 0; // lattice index bounds before trimming
    long kept = 0;                       // knots whose support touches the domain
};

struct Dictionary {
    std::vector<BasisAtom> atoms;
    std::vector<KnotGridInfo> grids;
    long p() const { return static_cast<long>(atoms.size()); }
};

// Deterministic product families x ranges x angles, each on its own rotated
// lattice; knots are trimmed unless the support ellipse's bounding box
// touches the domain. Atom order: family, then range, then angle, then
// lattice position (major index outer, minor inner, both ascending).
Dictionary build_dictionary(const BasisSpec& spec);

// Design matrix: entry (i, j) = atom_j(points[i]), structural zero outside
// the support ellipse. Columns follow dictionary order.
SparseDesign evaluate_design(const Dictionary& d, const std::vector<Point>& pts);

// Design restricted to the atom indices in `subset` (column k of the result
// is atom subset[k]).
SparseDesign evaluate_design(const Dictionary& d, const std::vector<Point>& pts,
                             const std::vector<long>& subset);

} // namespace mskrig
