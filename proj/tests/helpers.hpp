// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/grid.hpp"
#include "deformtrack/mesh.hpp"
#include "deformtrack/types.hpp"

#include <random>
#include <vector>

namespace deformtrack::test {

/// Axis-aligned cube mesh (12 triangles) with the given half-extent.
inline TriangleMesh cube_mesh(double half = 0.5, const Vec3& center = Vec3::Zero()) {
    std::vector<Vec3> v;
    for (int k = 0; k < 8; ++k)
        v.push_back(center + half * Vec3(k & 1 ? 1 : -1, k & 2 ? 1 : -1, k & 4 ? 1 : -1));
    std::vector<std::array<int, 3>> t = {
        {0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
        {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5},
    };
    return TriangleMesh(std::move(v), std::move(t));
}

/// Triangulated UV sphere.
inline TriangleMesh sphere_mesh(double radius, const Vec3& center, int rings = 24,
                                int segments = 48) {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> tris;
    for (int r = 0; r <= rings; ++r) {
        double phi = M_PI * r / rings;
        for (int s = 0; s < segments; ++s) {
            double theta = 2.0 * M_PI * s / segments;
            verts.push_back(center + radius * Vec3(std::sin(phi) * std::cos(theta),
                                                   std::sin(phi) * std::sin(theta),
                                                   std::cos(phi)));
        }
    }
    auto at = [&](int r, int s) { return r * segments + (s % segments); };
    for (int r = 0; r < rings; ++r)
        for (int s = 0; s < segments; ++s) {
            tris.push_back({at(r, s), at(r + 1, s), at(r + 1, s + 1)});
            tris.push_back({at(r, s), at(r + 1, s + 1), at(r, s + 1)});
        }
    return TriangleMesh(std::move(verts), std::move(tris));
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec3 axis;
    do {
        axis = Vec3(unit(rng), unit(rng), unit(rng));
    } while (axis.norm() < 1e-3);
    std::uniform_real_distribution<double> angle(0.0, M_PI);
    return axis_angle(axis.normalized(), angle(rng));
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    return {u(rng), u(rng), u(rng)};
}

/// Random state on the grid: rest plus bounded noise on translations and
/// random rotations.
inline DeformationState random_state(const StaticGrid& grid, std::mt19937_64& rng,
                                     double translation_noise, bool random_rotations = true) {
    DeformationState s = DeformationState::rest(grid);
    for (int i = 0; i < grid.size(); ++i) {
        s.translations[i] += random_vec(rng, translation_noise);
        if (random_rotations) s.rotations[i] = random_rotation(rng);
    }
    return s;
}

}  // namespace deformtrack::test
