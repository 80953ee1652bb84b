// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/tsdf.hpp"

#include "deformtrack/mc_tables.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace deformtrack {

TsdfVolume::TsdfVolume(const Vec3& origin, double voxel_size, int nx, int ny, int nz,
                       double truncation, double max_weight)
    : origin_(origin), voxel_(voxel_size), nx_(nx), ny_(ny), nz_(nz), truncation_(truncation),
      max_weight_(max_weight) {
    require(voxel_size > 0.0, "tsdf: voxel size must be positive");
    require(nx >= 2 && ny >= 2 && nz >= 2, "tsdf: dims too small");
    require(truncation >= voxel_size, "tsdf: truncation below voxel size");
    require(max_weight > 0.0, "tsdf: bad weight cap");
    values_.assign(size_t(nx) * ny * nz, 0.0f);
    weights_.assign(size_t(nx) * ny * nz, 0.0f);
}

void TsdfVolume::set(int i, int j, int k, float value, float weight) {
    require(std::abs(value) <= truncation_ + 1e-9 && weight >= 0.0f, "tsdf: bad sample");
    values_[index(i, j, k)] = value;
    weights_[index(i, j, k)] = weight;
}

void TsdfVolume::integrate(const DepthImage& depth, const RigidTransform& pose,
                           const CameraIntrinsics& intr) {
    intr.validate();
    require(depth.width == intr.width && depth.height == intr.height,
            "tsdf: frame size does not match intrinsics");
    require(pose.is_valid(), "tsdf: non-finite or non-rigid pose");

    const RigidTransform world_to_cam = pose.inverse();

#pragma omp parallel for schedule(static)
    for (int k = 0; k < nz_; ++k) {
        for (int j = 0; j < ny_; ++j) {
            for (int i = 0; i < nx_; ++i) {
                Vec3 pc = world_to_cam(sample_position(i, j, k));
                auto px = project(pc, intr);
                if (!px) continue;
                uint16_t raw = depth.raw(px->u, px->v);
                if (raw == 0) continue;  // invalid measurement
                double d = raw * intr.depth_scale;
                double sdf = d - pc.z();
                if (sdf < -truncation_) continue;  // far behind the surface
                float v = static_cast<float>(std::min(sdf, truncation_));
                size_t idx = index(i, j, k);
                float w = weights_[idx];
                values_[idx] = (values_[idx] * w + v) / (w + 1.0f);
                weights_[idx] = std::min(w + 1.0f, static_cast<float>(max_weight_));
            }
        }
    }
}

namespace {

// Corner layout matching the case tables: bit c set when the value at the
// corner is positive. Edges are identified for vertex sharing by the lattice
// point at their lower end plus an axis.
constexpr int kCorner[8][3] = {{1, 1, 0}, {1, 0, 0}, {0, 0, 0}, {0, 1, 0},
                               {1, 1, 1}, {1, 0, 1}, {0, 0, 1}, {0, 1, 1}};
constexpr int kEdgeLower[12][3] = {{1, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 1, 0},
                                   {1, 0, 1}, {0, 0, 1}, {0, 0, 1}, {0, 1, 1},
                                   {1, 1, 0}, {1, 0, 0}, {0, 0, 0}, {0, 1, 0}};
constexpr int kEdgeAxis[12] = {1, 0, 1, 0, 1, 0, 1, 0, 2, 2, 2, 2};

// crossings this close to a lattice sample snap onto it, so every incident
// edge emits the bit-identical position and deduplication closes the surface
constexpr double kSnapEps = 1e-7;

}  // namespace

TriangleMesh extract_mesh(const TsdfVolume& vol) {
    const int nx = vol.nx(), ny = vol.ny(), nz = vol.nz();

    auto gradient = [&](int i, int j, int k) -> Vec3 {
        Vec3 g;
        auto axis_diff = [&](int axis) {
            int c[3] = {i, j, k};
            int lo[3] = {i, j, k}, hi[3] = {i, j, k};
            const int dims[3] = {nx, ny, nz};
            hi[axis] = std::min(c[axis] + 1, dims[axis] - 1);
            lo[axis] = std::max(c[axis] - 1, 0);
            double span = (hi[axis] - lo[axis]) * vol.voxel_size();
            if (span <= 0.0) return 0.0;
            return (vol.value(hi[0], hi[1], hi[2]) - vol.value(lo[0], lo[1], lo[2])) / span;
        };
        g.x() = axis_diff(0);
        g.y() = axis_diff(1);
        g.z() = axis_diff(2);
        return g;
    };

    std::vector<Vec3> verts;
    std::vector<Vec3> norms;
    std::vector<std::array<int, 3>> tris;
    std::map<std::array<double, 3>, int> vertex_at;

    bool any_observed_cell = false;

    auto edge_vertex_index = [&](int ci, int cj, int ck, int edge) {
        int axis = kEdgeAxis[edge];
        int i0 = ci + kEdgeLower[edge][0];
        int j0 = cj + kEdgeLower[edge][1];
        int k0 = ck + kEdgeLower[edge][2];
        int i1 = i0 + (axis == 0), j1 = j0 + (axis == 1), k1 = k0 + (axis == 2);

        double a = vol.value(i0, j0, k0);
        double b = vol.value(i1, j1, k1);
        double t;
        if (std::abs(a) < kSnapEps) t = 0.0;
        else if (std::abs(b) < kSnapEps || std::abs(a - b) < kSnapEps) t = 1.0;
        else t = std::clamp(a / (a - b), 0.0, 1.0);

        Vec3 p0 = vol.sample_position(i0, j0, k0);
        Vec3 p1 = vol.sample_position(i1, j1, k1);
        Vec3 p = t == 0.0 ? p0 : (t == 1.0 ? p1 : Vec3(p0 + t * (p1 - p0)));

        auto [it, inserted] = vertex_at.try_emplace({p.x(), p.y(), p.z()},
                                                    static_cast<int>(verts.size()));
        if (!inserted) return it->second;

        Vec3 g = (1.0 - t) * gradient(i0, j0, k0) + t * gradient(i1, j1, k1);
        double len = g.norm();
        verts.push_back(p);
        norms.push_back(len > 1e-20 ? Vec3(g / len) : Vec3(0, 0, 1));
        return it->second;
    };

    for (int ck = 0; ck + 1 < nz; ++ck) {
        for (int cj = 0; cj + 1 < ny; ++cj) {
            for (int ci = 0; ci + 1 < nx; ++ci) {
                int cube = 0;
                bool observed = true;
                for (int c = 0; c < 8; ++c) {
                    int i = ci + kCorner[c][0], j = cj + kCorner[c][1], k = ck + kCorner[c][2];
                    if (!(vol.weight(i, j, k) > 0.0f)) {
                        observed = false;
                        break;
                    }
                    if (vol.value(i, j, k) > 0.0f) cube |= 1 << c;
                }
                if (!observed) continue;
                any_observed_cell = true;
                if (mc::kEdgeTable[cube] == 0) continue;

                int ev[12];
                for (int e = 0; e < 12; ++e)
                    if (mc::kEdgeTable[cube] & (1 << e)) ev[e] = edge_vertex_index(ci, cj, ck, e);

                for (int t = 0; mc::kTriTable[cube][t] != -1; t += 3) {
                    // table winding faces the interior; flip so triangles
                    // agree with the outward gradient normals
                    tris.push_back({ev[mc::kTriTable[cube][t]], ev[mc::kTriTable[cube][t + 2]],
                                    ev[mc::kTriTable[cube][t + 1]]});
                }
            }
        }
    }

    if (tris.empty())
        throw std::runtime_error(any_observed_cell
                                     ? "extract_mesh: observed volume has no iso-surface"
                                     : "extract_mesh: volume has no fully observed cell");
    return TriangleMesh(std::move(verts), std::move(tris), std::move(norms));
}

}  // namespace deformtrack
