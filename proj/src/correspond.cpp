// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/correspond.hpp"

#include <cmath>

namespace deformtrack {

double correspondence_weight(double d_pos, double d_normal, double view_angle,
                             const WeightCaps& caps) {
    require(std::isfinite(d_pos) && std::isfinite(d_normal) && std::isfinite(view_angle),
            "correspondence_weight: non-finite input");
    require(d_pos >= 0.0, "correspondence_weight: negative distance");
    double w_d = std::max(0.0, 1.0 - d_pos / caps.d_max);
    double w_n = std::max(0.0, 1.0 - d_normal / caps.n_max);
    double w_v = std::max(0.0, std::cos(view_angle));
    double m = (w_d + w_n + w_v) / 3.0;
    return m * m;
}

std::vector<Correspondence> find_projective(const std::vector<TrilinearAnchor>& anchors,
                                            const std::vector<Vec3>& rest_normals,
                                            const StaticGrid& grid, const DeformationState& state,
                                            const Observation& obs, const WeightCaps& caps) {
    require(anchors.size() == rest_normals.size(), "find_projective: anchor/normal mismatch");
    const int n = static_cast<int>(anchors.size());
    std::vector<Correspondence> slots(n);
    std::vector<uint8_t> keep(n, 0);

#pragma omp parallel for schedule(static)
    for (int v = 0; v < n; ++v) {
        const TrilinearAnchor& a = anchors[v];
        Vec3 p = deform_point(a, grid, state);
        auto px = project(p, obs.intrinsics);
        if (!px) continue;
        if (!obs.has_point(px->u, px->v) || !obs.has_normal(px->u, px->v)) continue;

        // deformed normal: global rotation times the dominant corner rotation
        auto idx = a.corner_indices(grid);
        int dom = 0;
        for (int k = 1; k < 8; ++k)
            if (a.weights[k] > a.weights[dom]) dom = k;
        Vec3 nrm = state.global.rotation * (state.rotations[idx[dom]] * rest_normals[v]);

        const Vec3& pa = obs.point(px->u, px->v);
        const Vec3& na = obs.normal(px->u, px->v);
        // the observed surface in front of the model point hides it
        if (p.z() - pa.z() > caps.occlusion) continue;
        // view direction is -z in the camera frame
        double cos_view = std::clamp(-nrm.z(), -1.0, 1.0);
        double d_pos = (p - pa).norm();
        double d_normal = (nrm - na).norm();
        // an association is only admissible while every sub-weight is
        // positive; a single term at its cap marks an incompatible pairing
        // (occlusion, opposing normal, grazing view)
        if (d_pos >= caps.d_max || d_normal >= caps.n_max || cos_view <= 0.0) continue;
        double w = correspondence_weight(d_pos, d_normal, std::acos(cos_view), caps);
        if (w < caps.min_weight) continue;

        Correspondence& c = slots[v];
        c.anchor = a;
        c.model_point = p;
        c.model_normal = nrm;
        c.observed_point = pa;
        c.observed_normal = na;
        c.weight = w;
        keep[v] = 1;
    }

    std::vector<Correspondence> out;
    out.reserve(n);
    for (int v = 0; v < n; ++v)
        if (keep[v]) out.push_back(slots[v]);
    return out;
}

}  // namespace deformtrack
