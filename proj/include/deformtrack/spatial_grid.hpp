// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/types.hpp"

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace deformtrack {

/// Uniform hash grid over a fixed point set for radius and nearest-neighbor
/// queries. Cell size should be on the order of the query radius.
class SpatialGrid {
public:
    SpatialGrid(const std::vector<Vec3>& points, double cell_size);

    /// Indices of points within `radius` of q, in ascending index order.
    std::vector<int> radius_search(const Vec3& q, double radius) const;

    /// Index of the nearest point to q, or -1 if the set is empty. Expands the
    /// ring search until a hit is guaranteed nearest.
    int nearest(const Vec3& q) const;

    size_t size() const { return points_.size(); }

private:
    int64_t key(int ix, int iy, int iz) const;
    void cell_of(const Vec3& p, int& ix, int& iy, int& iz) const;

    std::vector<Vec3> points_;
    double cell_;
    std::unordered_map<int64_t, std::vector<int>> cells_;
};

}  // namespace deformtrack
