// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/camera.hpp"
#include "deformtrack/types.hpp"

#include <vector>

namespace deformtrack {

/// Organized point cloud in the camera frame. Retains the pixel lattice of the
/// source depth frame so model points can be associated projectively. A pixel
/// may have a point without a normal (missing neighbors) but never the
/// reverse. Normals are unit length and oriented toward the camera; the view
/// direction convention is -z.
struct Observation {
    int width = 0, height = 0;
    CameraIntrinsics intrinsics;
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<uint8_t> flags;  // bit 0: has point, bit 1: has normal
    int valid_count = 0;

    bool has_point(int u, int v) const { return flags[size_t(v) * width + u] & 1; }
    bool has_normal(int u, int v) const { return flags[size_t(v) * width + u] & 2; }
    const Vec3& point(int u, int v) const { return points[size_t(v) * width + u]; }
    const Vec3& normal(int u, int v) const { return normals[size_t(v) * width + u]; }
};

/// Back-projects valid depth pixels and estimates per-pixel normals from
/// central differences over the organized grid.
Observation make_observation(const DepthImage& depth, const CameraIntrinsics& intr);

}  // namespace deformtrack
