// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/spatial_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deformtrack {

SpatialGrid::SpatialGrid(const std::vector<Vec3>& points, double cell_size)
    : points_(points), cell_(cell_size) {
    require(cell_size > 0.0, "spatial grid: cell size must be positive");
    for (int i = 0; i < static_cast<int>(points_.size()); ++i) {
        int ix, iy, iz;
        cell_of(points_[i], ix, iy, iz);
        cells_[key(ix, iy, iz)].push_back(i);
    }
}

int64_t SpatialGrid::key(int ix, int iy, int iz) const {
    // 21 bits per axis, offset to keep coordinates non-negative
    const int64_t off = 1 << 20;
    return ((int64_t(ix) + off) << 42) | ((int64_t(iy) + off) << 21) | (int64_t(iz) + off);
}

void SpatialGrid::cell_of(const Vec3& p, int& ix, int& iy, int& iz) const {
    ix = static_cast<int>(std::floor(p.x() / cell_));
    iy = static_cast<int>(std::floor(p.y() / cell_));
    iz = static_cast<int>(std::floor(p.z() / cell_));
}

std::vector<int> SpatialGrid::radius_search(const Vec3& q, double radius) const {
    std::vector<int> out;
    int cx, cy, cz;
    cell_of(q, cx, cy, cz);
    int reach = static_cast<int>(std::ceil(radius / cell_));
    double r2 = radius * radius;
    for (int ix = cx - reach; ix <= cx + reach; ++ix)
        for (int iy = cy - reach; iy <= cy + reach; ++iy)
            for (int iz = cz - reach; iz <= cz + reach; ++iz) {
                auto it = cells_.find(key(ix, iy, iz));
                if (it == cells_.end()) continue;
                for (int i : it->second)
                    if ((points_[i] - q).squaredNorm() <= r2) out.push_back(i);
            }
    std::sort(out.begin(), out.end());
    return out;
}

int SpatialGrid::nearest(const Vec3& q) const {
    if (points_.empty()) return -1;
    int cx, cy, cz;
    cell_of(q, cx, cy, cz);
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int reach = 0;; ++reach) {
        for (int ix = cx - reach; ix <= cx + reach; ++ix)
            for (int iy = cy - reach; iy <= cy + reach; ++iy)
                for (int iz = cz - reach; iz <= cz + reach; ++iz) {
                    // only the new shell
                    if (std::max({std::abs(ix - cx), std::abs(iy - cy), std::abs(iz - cz)}) !=
                        reach)
                        continue;
                    auto it = cells_.find(key(ix, iy, iz));
                    if (it == cells_.end()) continue;
                    for (int i : it->second) {
                        double d2 = (points_[i] - q).squaredNorm();
                        if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                            best_d2 = d2;
                            best = i;
                        }
                    }
                }
        if (best >= 0) {
            // a hit within `reach` shells is final once the shell distance
            // exceeds the best distance found
            double shell = reach * cell_;
            if (best_d2 <= shell * shell) return best;
        }
        if (reach > (1 << 12)) return best;  // degenerate fallback
    }
}

}  // namespace deformtrack
