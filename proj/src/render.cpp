// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace deformtrack {

namespace {

struct ScreenTri {
    double ax, ay, bx, by, cx, cy;
    double inv_za, inv_zb, inv_zc;
    double area;
    int u0, u1;
};

}  // namespace

DepthImage render_depth(const TriangleMesh& mesh, const RigidTransform& pose,
                        const CameraIntrinsics& intr, double noise_sigma, uint64_t noise_seed) {
    require(!mesh.empty(), "render: empty mesh");
    intr.validate();
    require(noise_sigma >= 0.0, "render: negative noise sigma");

    const int w = intr.width, h = intr.height;
    const double znear = 1e-4;

    std::vector<Vec3> cam(mesh.vertices.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i) cam[i] = pose(mesh.vertices[i]);

    // project triangles and bin them by the pixel rows they cover
    std::vector<ScreenTri> tris;
    tris.reserve(mesh.triangles.size());
    std::vector<std::vector<int>> rows(h);
    for (const auto& tri : mesh.triangles) {
        const Vec3& a = cam[tri[0]];
        const Vec3& b = cam[tri[1]];
        const Vec3& c = cam[tri[2]];
        if (a.z() <= znear || b.z() <= znear || c.z() <= znear) continue;

        ScreenTri s;
        s.ax = intr.fx * a.x() / a.z() + intr.cx;
        s.ay = intr.fy * a.y() / a.z() + intr.cy;
        s.bx = intr.fx * b.x() / b.z() + intr.cx;
        s.by = intr.fy * b.y() / b.z() + intr.cy;
        s.cx = intr.fx * c.x() / c.z() + intr.cx;
        s.cy = intr.fy * c.y() / c.z() + intr.cy;
        s.area = (s.bx - s.ax) * (s.cy - s.ay) - (s.by - s.ay) * (s.cx - s.ax);
        if (s.area == 0.0) continue;
        s.inv_za = 1.0 / a.z();
        s.inv_zb = 1.0 / b.z();
        s.inv_zc = 1.0 / c.z();

        int u0 = std::max(0, static_cast<int>(std::ceil(std::min({s.ax, s.bx, s.cx}))));
        int u1 = std::min(w - 1, static_cast<int>(std::floor(std::max({s.ax, s.bx, s.cx}))));
        int v0 = std::max(0, static_cast<int>(std::ceil(std::min({s.ay, s.by, s.cy}))));
        int v1 = std::min(h - 1, static_cast<int>(std::floor(std::max({s.ay, s.by, s.cy}))));
        if (u0 > u1 || v0 > v1) continue;
        s.u0 = u0;
        s.u1 = u1;

        int id = static_cast<int>(tris.size());
        tris.push_back(s);
        for (int v = v0; v <= v1; ++v) rows[v].push_back(id);
    }

    std::vector<double> zbuf(size_t(w) * h, std::numeric_limits<double>::infinity());
#pragma omp parallel for schedule(dynamic, 8)
    for (int v = 0; v < h; ++v) {
        double* zrow = zbuf.data() + size_t(v) * w;
        for (int id : rows[v]) {
            const ScreenTri& s = tris[id];
            for (int u = s.u0; u <= s.u1; ++u) {
                double l0 = ((s.bx - u) * (s.cy - v) - (s.by - v) * (s.cx - u)) / s.area;
                double l1 = ((s.cx - u) * (s.ay - v) - (s.cy - v) * (s.ax - u)) / s.area;
                double l2 = 1.0 - l0 - l1;
                if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
                // 1/z interpolates linearly in screen space
                double z = 1.0 / (l0 * s.inv_za + l1 * s.inv_zb + l2 * s.inv_zc);
                if (z < zrow[u]) zrow[u] = z;
            }
        }
    }

    DepthImage img(w, h);
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            double z = zbuf[size_t(v) * w + u];
            if (!std::isfinite(z)) continue;
            if (noise_sigma > 0.0) z += noise_sigma * gauss(rng);
            img.set_meters(u, v, z, intr.depth_scale);
        }
    }
    return img;
}

}  // namespace deformtrack
