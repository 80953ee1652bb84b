// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/mesh.hpp"
#include "deformtrack/types.hpp"

#include <array>
#include <vector>

namespace deformtrack {

/// Equally spaced lattice enclosing the reference surface. Gridpoint i lives
/// at origin + spacing * (ix, iy, iz) with linear index ix + nx*(iy + ny*iz).
struct StaticGrid {
    Vec3 origin = Vec3::Zero();
    double spacing = 0.0;
    int nx = 0, ny = 0, nz = 0;

    int size() const { return nx * ny * nz; }

    int linear_index(int ix, int iy, int iz) const { return ix + nx * (iy + ny * iz); }

    std::array<int, 3> coords(int i) const {
        return {i % nx, (i / nx) % ny, i / (nx * ny)};
    }

    Vec3 position(int i) const {
        auto c = coords(i);
        return origin + spacing * Vec3(c[0], c[1], c[2]);
    }

    Vec3 box_min() const { return origin; }
    Vec3 box_max() const { return origin + spacing * Vec3(nx - 1, ny - 1, nz - 1); }

    bool contains(const Vec3& p) const {
        Vec3 lo = box_min(), hi = box_max();
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }
};

/// Trilinear binding of a point to the 8 corners of one grid cell.
/// Corner k of cell (cx,cy,cz) is (cx + k&1, cy + (k>>1)&1, cz + (k>>2)&1).
struct TrilinearAnchor {
    std::array<int, 3> cell = {0, 0, 0};
    std::array<double, 8> weights = {};

    std::array<int, 8> corner_indices(const StaticGrid& grid) const {
        std::array<int, 8> out;
        for (int k = 0; k < 8; ++k)
            out[k] = grid.linear_index(cell[0] + (k & 1), cell[1] + ((k >> 1) & 1),
                                       cell[2] + ((k >> 2) & 1));
        return out;
    }
};

/// Full unknown vector of the deformation model: one global rigid transform
/// plus a translation and rotation per gridpoint. At rest translations equal
/// the static gridpoint positions and rotations are identity.
struct DeformationState {
    RigidTransform global;
    std::vector<Vec3> translations;
    std::vector<Mat3> rotations;

    static DeformationState rest(const StaticGrid& grid);

    /// The deformation field entry for gridpoint i (static minus deformed).
    Vec3 field(const StaticGrid& grid, int i) const { return grid.position(i) - translations[i]; }
};

StaticGrid build_static_grid(const TriangleMesh& mesh, double spacing, int margin_cells);

TrilinearAnchor anchor_point(const Vec3& p, const StaticGrid& grid);

/// Reconstruction of the anchored point on the undeformed lattice.
Vec3 anchor_rest_position(const TrilinearAnchor& anchor, const StaticGrid& grid);

/// Deformed world position: global(sum_k alpha_k * t_k).
Vec3 deform_point(const TrilinearAnchor& anchor, const StaticGrid& grid,
                  const DeformationState& state);

/// Weighted sum of deformed gridpoint translations, before the global transform.
Vec3 blend_translations(const TrilinearAnchor& anchor, const StaticGrid& grid,
                        const DeformationState& state);

std::vector<TrilinearAnchor> bind_mesh(const TriangleMesh& mesh, const StaticGrid& grid);

/// Axis-adjacent gridpoints of i; 6 in the interior, fewer on the boundary.
std::vector<int> grid_neighborhood(int i, const StaticGrid& grid);

}  // namespace deformtrack
