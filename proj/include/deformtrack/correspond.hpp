// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/grid.hpp"
#include "deformtrack/mesh.hpp"
#include "deformtrack/observation.hpp"

#include <vector>

namespace deformtrack {

/// Caps for the correspondence quality sub-weights. Each sub-weight falls
/// linearly from 1 to 0 as its quantity approaches the cap, so the averaged
/// and squared combination stays in [0, 1].
struct WeightCaps {
    double d_max = 0.05;       // position distance (m) at which w_d reaches 0
    double n_max = 1.0;        // normal difference ||n - n'|| at which w_n reaches 0
    double min_weight = 0.01;  // correspondences below this w_c are dropped
    double occlusion = 0.02;   // model points deeper than the observed surface
                               // by more than this are treated as occluded
};

/// One projective association between a deformed model vertex and an observed
/// pixel. The record serves both the point residual (observed_point) and the
/// plane residual (observed_point, observed_normal).
struct Correspondence {
    TrilinearAnchor anchor;
    Vec3 model_point = Vec3::Zero();     // deformed model position, camera frame
    Vec3 model_normal = Vec3::Zero();    // deformed model normal, camera frame
    Vec3 observed_point = Vec3::Zero();
    Vec3 observed_normal = Vec3::Zero();
    double weight = 0.0;
};

/// Quality weight w = ((w_d + w_n + w_v) / 3)^2 with linear falloffs for the
/// position and normal distances and the cosine of the view angle.
double correspondence_weight(double d_pos, double d_normal, double view_angle,
                             const WeightCaps& caps);

/// Projective correspondence search: deform each model vertex, project it into
/// the observation, associate it with the point and plane at that pixel, and
/// keep associations whose quality weight clears the rejection floor.
std::vector<Correspondence> find_projective(const std::vector<TrilinearAnchor>& anchors,
                                            const std::vector<Vec3>& rest_normals,
                                            const StaticGrid& grid, const DeformationState& state,
                                            const Observation& obs, const WeightCaps& caps);

}  // namespace deformtrack
