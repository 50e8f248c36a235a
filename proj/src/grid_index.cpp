#include "mskrig/grid_index.hpp"

#include <algorithm>
#include <cmath>

namespace mskrig {

NeighborGrid::NeighborGrid(const std::vector<Point>& pts, double cell)
    : pts_(&pts), cell_(cell) {
    if (cell <= 0.0) throw ConfigError("neighbor grid cell size must be positive");
    double x1 = 0.0, y1 = 0.0;
    if (!pts.empty()) {
        x0_ = x1 = pts[0].x;
        y0_ = y1 = pts[0].y;
        for (const Point& p : pts) {
            x0_ = std::min(x0_, p.x);
            x1 = std::max(x1, p.x);
            y0_ = std::min(y0_, p.y);
            y1 = std::max(y1, p.y);
        }
    }
    ncx_ = std::max<long>(1, static_cast<long>(std::floor((x1 - x0_) / cell_)) + 1);
    ncy_ = std::max<long>(1, static_cast<long>(std::floor((y1 - y0_) / cell_)) + 1);

    const long ncells = ncx_ * ncy_;
    std::vector<long> count(ncells + 1, 0);
    std::vector<long> cell_id(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        cell_id[i] = cell_of(pts[i]);
        ++count[cell_id[i] + 1];
    }
    for (long c = 0; c < ncells; ++c) count[c + 1] += count[c];
    cell_start_ = count;
    order_.resize(pts.size());
    std::vector<long> cursor(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < pts.size(); ++i) order_[cursor[cell_id[i]]++] = static_cast<int>(i);
    // counting sort preserves index order within each cell
}

long NeighborGrid::cell_of(const Point& p) const {
    long cx = static_cast<long>(std::floor((p.x - x0_) / cell_));
    long cy = static_cast<long>(std::floor((p.y - y0_) / cell_));
    cx = std::clamp(cx, 0L, ncx_ - 1);
    cy = std::clamp(cy, 0L, ncy_ - 1);
    return cy * ncx_ + cx;
}

void NeighborGrid::neighbors(const Point& q, double radius, std::vector<int>& out) const {
    out.clear();
    if (pts_->empty()) return;
    if (radius > cell_ * (1.0 + 1e-12))
        throw ConfigError("neighbor query radius exceeds index cell size");
    const double r2 = radius * radius;
    const long cx = std::clamp(static_cast<long>(std::floor((q.x - x0_) / cell_)), 0L, ncx_ - 1);
    const long cy = std::clamp(static_cast<long>(std::floor((q.y - y0_) / cell_)), 0L, ncy_ - 1);
    for (long dy = -1; dy <= 1; ++dy) {
        const long yy = cy + dy;
        if (yy < 0 || yy >= ncy_) continue;
        for (long dx = -1; dx <= 1; ++dx) {
            const long xx = cx + dx;
            if (xx < 0 || xx >= ncx_) continue;
            const long c = yy * ncx_ + xx;
            for (long k = cell_start_[c]; k < cell_start_[c + 1]; ++k) {
                const int i = order_[k];
                const Point& p = (*pts_)[i];
                const double ddx = p.x - q.x, ddy = p.y - q.y;
                if (ddx * ddx + ddy * ddy < r2) out.push_back(i);
            }
        }
    }
    std::sort(out.begin(), out.end());
}

} // namespace mskrig
