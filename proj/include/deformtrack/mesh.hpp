// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace deformtrack {

/// Triangle surface mesh with per-vertex unit normals.
/// Construction validates indices and drops zero-area triangles; an empty
/// vertex or triangle list is rejected.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Vec3> normals;
    std::vector<std::array<int, 3>> triangles;

    TriangleMesh() = default;

    /// Builds a mesh. If `normals` is empty they are computed as area-weighted
    /// averages of incident triangle normals.
    TriangleMesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles,
                 std::vector<Vec3> normals = {});

    bool empty() const { return vertices.empty() || triangles.empty(); }

    void bounding_box(Vec3& lo, Vec3& hi) const;
};

/// ASCII Stanford polygon format. Vertices carry x y z nx ny nz; faces are
/// index lists. Files without normal properties are accepted on read (normals
/// recomputed from faces).
TriangleMesh load_ply(const std::string& path);
void save_ply(const TriangleMesh& mesh, const std::string& path);

}  // namespace deformtrack
