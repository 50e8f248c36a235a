#pragma once

#include <vector>

#include "mskrig/common.hpp"

namespace mskrig {

// Uniform-grid spatial index with cell size equal to the query radius.
// Neighbor enumeration touches only the 3x3 cell block around a point, so
// radius queries cost O(neighbors) and all iteration orders are deterministic.
class NeighborGrid {
public:
    NeighborGrid(const std::vector<Point>& pts, double cell);

    // Indices of points with dist(q, p) < radius, ascending. radius must not
    // exceed the cell size the index was built with.
    void neighbors(const Point& q, double radius, std::vector<int>& out) const;

    // Visits each unordered pair (i, j), i < j, dist < radius, in ascending
    // (i, j) order. f(i, j, d).
    template <class F>
    void for_each_pair(double radius, F&& f) const {
        std::vector<int> buf;
        for (int i = 0; i < static_cast<int>(pts_->size()); ++i) {
            neighbors((*pts_)[i], radius, buf);
            for (const int j : buf) {
                if (j > i) f(i, j, dist((*pts_)[i], (*pts_)[j]));
            }
        }
    }

private:
    long cell_of(const Point& p) const;

    const std::vector<Point>* pts_;
    double cell_;
    double x0_ = 0.0, y0_ = 0.0;
    long ncx_ = 1, ncy_ = 1;
    // points bucketed by cell: sorted (cell, index) pairs + offsets per cell id
    std::vector<long> cell_start_;
    std::vector<int> order_;
};

} // namespace mskrig
