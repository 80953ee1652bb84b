// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/observation.hpp"

namespace deformtrack {

Observation make_observation(const DepthImage& depth, const CameraIntrinsics& intr) {
    intr.validate();
    require(depth.width == intr.width && depth.height == intr.height,
            "observation: frame size does not match intrinsics");

    Observation obs;
    obs.width = intr.width;
    obs.height = intr.height;
    obs.intrinsics = intr;
    size_t n = size_t(obs.width) * obs.height;
    obs.points.assign(n, Vec3::Zero());
    obs.normals.assign(n, Vec3::Zero());
    obs.flags.assign(n, 0);

    int count = 0;
#pragma omp parallel for schedule(static) reduction(+ : count)
    for (int v = 0; v < obs.height; ++v) {
        for (int u = 0; u < obs.width; ++u) {
            uint16_t raw = depth.raw(u, v);
            if (raw == 0) continue;
            size_t k = size_t(v) * obs.width + u;
            obs.points[k] = backproject(u, v, raw * intr.depth_scale, intr);
            obs.flags[k] = 1;
            ++count;
        }
    }
    obs.valid_count = count;

#pragma omp parallel for schedule(static)
    for (int v = 1; v < obs.height - 1; ++v) {
        for (int u = 1; u < obs.width - 1; ++u) {
            size_t k = size_t(v) * obs.width + u;
            if (!(obs.flags[k] & 1)) continue;
            if (!obs.has_point(u - 1, v) || !obs.has_point(u + 1, v) || !obs.has_point(u, v - 1) ||
                !obs.has_point(u, v + 1))
                continue;
            Vec3 du = obs.point(u + 1, v) - obs.point(u - 1, v);
            Vec3 dv = obs.point(u, v + 1) - obs.point(u, v - 1);
            Vec3 nrm = du.cross(dv);
            double len = nrm.norm();
            if (len < 1e-20) continue;
            nrm /= len;
            if (nrm.dot(obs.points[k]) > 0.0) nrm = -nrm;  // face the camera
            obs.normals[k] = nrm;
            obs.flags[k] |= 2;
        }
    }
    return obs;
}

}  // namespace deformtrack
