// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/grid.hpp"

#include <cmath>
#include <string>

namespace deformtrack {

DeformationState DeformationState::rest(const StaticGrid& grid) {
    DeformationState s;
    s.translations.resize(grid.size());
    s.rotations.assign(grid.size(), Mat3::Identity());
    for (int i = 0; i < grid.size(); ++i) s.translations[i] = grid.position(i);
    return s;
}

StaticGrid build_static_grid(const TriangleMesh& mesh, double spacing, int margin_cells) {
    require(spacing > 0.0, "grid: spacing must be positive");
    require(margin_cells >= 0, "grid: negative margin");
    require(!mesh.empty(), "grid: empty mesh");

    Vec3 lo, hi;
    mesh.bounding_box(lo, hi);
    Vec3 need_lo = lo.array() - margin_cells * spacing;
    Vec3 need_hi = hi.array() + margin_cells * spacing;

    StaticGrid g;
    g.spacing = spacing;
    for (int a = 0; a < 3; ++a) {
        double extent = need_hi[a] - need_lo[a];
        int n = static_cast<int>(std::ceil(extent / spacing - 1e-12)) + 1;
        n = std::max(n, 2);
        double slack = (n - 1) * spacing - extent;
        g.origin[a] = need_lo[a] - 0.5 * slack;  // center the leftover
        (a == 0 ? g.nx : a == 1 ? g.ny : g.nz) = n;
    }
    return g;
}

TrilinearAnchor anchor_point(const Vec3& p, const StaticGrid& grid) {
    require(grid.contains(p), "anchor: point outside grid box");
    TrilinearAnchor a;
    Vec3 u = (p - grid.origin) / grid.spacing;
    const int dims[3] = {grid.nx, grid.ny, grid.nz};
    Vec3 local;
    for (int k = 0; k < 3; ++k) {
        double f = std::floor(u[k]);
        int c = static_cast<int>(f);
        // points on a cell boundary belong to the lower-index cell
        if (c > 0 && f == u[k]) --c;
        c = std::min(std::max(c, 0), dims[k] - 2);
        a.cell[k] = c;
        local[k] = u[k] - c;
    }
    for (int k = 0; k < 8; ++k) {
        double w = 1.0;
        for (int d = 0; d < 3; ++d) w *= ((k >> d) & 1) ? local[d] : 1.0 - local[d];
        a.weights[k] = w;
    }
    return a;
}

Vec3 anchor_rest_position(const TrilinearAnchor& anchor, const StaticGrid& grid) {
    auto idx = anchor.corner_indices(grid);
    Vec3 p = Vec3::Zero();
    for (int k = 0; k < 8; ++k) p += anchor.weights[k] * grid.position(idx[k]);
    return p;
}

Vec3 blend_translations(const TrilinearAnchor& anchor, const StaticGrid& grid,
                        const DeformationState& state) {
    auto idx = anchor.corner_indices(grid);
    require(static_cast<int>(state.translations.size()) == grid.size(),
            "deform: state size mismatch");
    Vec3 p = Vec3::Zero();
    for (int k = 0; k < 8; ++k) p += anchor.weights[k] * state.translations[idx[k]];
    return p;
}

Vec3 deform_point(const TrilinearAnchor& anchor, const StaticGrid& grid,
                  const DeformationState& state) {
    return state.global(blend_translations(anchor, grid, state));
}

std::vector<TrilinearAnchor> bind_mesh(const TriangleMesh& mesh, const StaticGrid& grid) {
    std::vector<TrilinearAnchor> anchors(mesh.vertices.size());
    for (size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (!grid.contains(mesh.vertices[v]))
            throw std::invalid_argument("bind_mesh: vertex " + std::to_string(v) +
                                        " outside grid box");
        anchors[v] = anchor_point(mesh.vertices[v], grid);
    }
    return anchors;
}

std::vector<int> grid_neighborhood(int i, const StaticGrid& grid) {
    require(i >= 0 && i < grid.size(), "neighborhood: index out of range");
    auto c = grid.coords(i);
    std::vector<int> out;
    out.reserve(6);
    const int dims[3] = {grid.nx, grid.ny, grid.nz};
    for (int d = 0; d < 3; ++d) {
        for (int s : {-1, 1}) {
            int v = c[d] + s;
            if (v < 0 || v >= dims[d]) continue;
            std::array<int, 3> n = c;
            n[d] = v;
            out.push_back(grid.linear_index(n[0], n[1], n[2]));
        }
    }
    return out;
}

}  // namespace deformtrack
