// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/scripts.hpp"

#include "deformtrack/tsdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deformtrack {

void DeformationScript::validate() const {
    require(frames >= 1, "script: frames must be >= 1");
    require(std::isfinite(amplitude), "script: non-finite amplitude");
    require(axis.norm() > 1e-12, "script: zero axis");
    require(profile.empty() || static_cast<int>(profile.size()) == frames,
            "script: profile size must match frames");
    require(reference_length > 0.0, "script: bad reference length");
    require(sigma > 0.0, "script: bad sigma");
}

double DeformationScript::factor(int frame_index) const {
    require(frame_index >= 0 && frame_index < frames, "script: frame index out of range");
    if (!profile.empty()) return profile[frame_index];
    return frames == 1 ? 1.0 : static_cast<double>(frame_index) / (frames - 1);
}

DeformationMap script_map(const DeformationScript& script, int frame_index) {
    script.validate();
    const double f = script.amplitude * script.factor(frame_index);
    const Vec3 axis = script.axis.normalized();
    const Vec3 center = script.center;
    const double ref = script.reference_length;

    DeformationMap map;
    switch (script.kind) {
        case DeformationScript::Kind::Twist: {
            // angle grows along the axis coordinate, which the motion preserves
            auto rotate = [axis, center, ref](const Vec3& p, double scale) {
                double s = (p - center).dot(axis);
                Mat3 r = axis_angle(axis, scale * s / ref);
                return Vec3(center + r * (p - center));
            };
            map.forward = [rotate, f](const Vec3& p) { return rotate(p, f); };
            map.inverse = [rotate, f](const Vec3& p) { return rotate(p, -f); };
            break;
        }
        case DeformationScript::Kind::Bend: {
            // angle grows with the radial distance to the axis line
            auto rotate = [axis, center, ref](const Vec3& p, double scale) {
                Vec3 d = p - center;
                Vec3 radial = d - d.dot(axis) * axis;
                Mat3 r = axis_angle(axis, scale * radial.norm() / ref);
                return Vec3(center + r * d);
            };
            map.forward = [rotate, f](const Vec3& p) { return rotate(p, f); };
            map.inverse = [rotate, f](const Vec3& p) { return rotate(p, -f); };
            break;
        }
        case DeformationScript::Kind::Stretch: {
            double lambda = 1.0 + f;
            require(lambda > 1e-6, "script: stretch collapses the object");
            map.forward = [axis, center, lambda](const Vec3& p) {
                Vec3 d = p - center;
                return Vec3(center + d + (lambda - 1.0) * d.dot(axis) * axis);
            };
            map.inverse = [axis, center, lambda](const Vec3& p) {
                Vec3 d = p - center;
                return Vec3(center + d + (1.0 / lambda - 1.0) * d.dot(axis) * axis);
            };
            break;
        }
        case DeformationScript::Kind::Bump: {
            double sigma2 = 2.0 * script.sigma * script.sigma;
            map.forward = [axis, center, sigma2, f](const Vec3& p) {
                double g = std::exp(-(p - center).squaredNorm() / sigma2);
                return Vec3(p + f * g * axis);
            };
            // no closed-form inverse
            break;
        }
    }
    return map;
}

DeformationMap composed_map(const std::vector<DeformationScript>& scripts, int frame_index) {
    std::vector<DeformationMap> maps;
    maps.reserve(scripts.size());
    for (const auto& s : scripts) maps.push_back(script_map(s, frame_index));

    DeformationMap out;
    out.forward = [maps](const Vec3& p) {
        Vec3 q = p;
        for (const auto& m : maps) q = m.forward(q);
        return q;
    };
    bool invertible = std::all_of(maps.begin(), maps.end(),
                                  [](const DeformationMap& m) { return bool(m.inverse); });
    if (invertible) {
        out.inverse = [maps](const Vec3& p) {
            Vec3 q = p;
            for (auto it = maps.rbegin(); it != maps.rend(); ++it) q = it->inverse(q);
            return q;
        };
    }
    return out;
}

TriangleMesh apply_map(const TriangleMesh& mesh, const DeformationMap& map) {
    std::vector<Vec3> verts(mesh.vertices.size());
    for (size_t i = 0; i < verts.size(); ++i) verts[i] = map.forward(mesh.vertices[i]);
    return TriangleMesh(std::move(verts), mesh.triangles);  // normals from faces
}

std::pair<TriangleMesh, DeformationMap> apply_script(const TriangleMesh& mesh,
                                                     const DeformationScript& script,
                                                     int frame_index) {
    DeformationMap map = script_map(script, frame_index);
    return {apply_map(mesh, map), std::move(map)};
}

namespace {

double capsule_sdf(const Vec3& p, const Vec3& a, const Vec3& b, double radius) {
    Vec3 ab = b - a;
    double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    return (p - (a + t * ab)).norm() - radius;
}

}  // namespace

TriangleMesh make_tripod_mesh(double voxel_size, double arm_length) {
    require(voxel_size > 0.0 && arm_length > 0.0, "tripod: bad parameters");

    // distinct lengths and radii break the 3-fold symmetry
    const double lengths[3] = {arm_length, 0.84 * arm_length, 0.68 * arm_length};
    const double radii[3] = {0.015, 0.013, 0.017};
    const double hub_radius = 0.022;
    Vec3 dirs[3];
    for (int k = 0; k < 3; ++k) {
        double theta = M_PI / 2.0 + k * 2.0 * M_PI / 3.0;
        dirs[k] = Vec3(std::cos(theta), std::sin(theta), 0.0);
    }

    auto sdf = [&](const Vec3& p) {
        double d = p.norm() - hub_radius;
        for (int k = 0; k < 3; ++k)
            d = std::min(d, capsule_sdf(p, Vec3::Zero(), lengths[k] * dirs[k], radii[k]));
        return d;
    };

    double reach = arm_length + 0.02 + 4.0 * voxel_size;
    double zreach = hub_radius + 4.0 * voxel_size;
    Vec3 origin(-reach, -reach, -zreach);
    int nx = static_cast<int>(std::ceil(2.0 * reach / voxel_size)) + 1;
    int nz = static_cast<int>(std::ceil(2.0 * zreach / voxel_size)) + 1;

    TsdfVolume vol(origin, voxel_size, nx, nx, nz, std::max(4.0 * voxel_size, voxel_size));
    const float trunc = static_cast<float>(vol.truncation());
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < nx; ++j)
            for (int i = 0; i < nx; ++i) {
                float d = static_cast<float>(sdf(vol.sample_position(i, j, k)));
                vol.set(i, j, k, std::clamp(d, -trunc, trunc), 1.0f);
            }
    return extract_mesh(vol);
}

std::vector<int> spread_vertex_sample(const TriangleMesh& mesh, int count) {
    require(count > 0, "spread sample: bad count");
    const int n = static_cast<int>(mesh.vertices.size());
    require(n >= count, "spread sample: mesh too small");

    Vec3 centroid = Vec3::Zero();
    for (const Vec3& v : mesh.vertices) centroid += v;
    centroid /= n;

    std::vector<int> picked;
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    int current = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
        double d = (mesh.vertices[i] - centroid).squaredNorm();
        if (d > best) {
            best = d;
            current = i;
        }
    }
    picked.push_back(current);
    while (static_cast<int>(picked.size()) < count) {
        int far = -1;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], (mesh.vertices[i] - mesh.vertices[current]).squaredNorm());
            if (dist[i] > far_d) {
                far_d = dist[i];
                far = i;
            }
        }
        current = far;
        picked.push_back(current);
    }
    return picked;
}

}  // namespace deformtrack
