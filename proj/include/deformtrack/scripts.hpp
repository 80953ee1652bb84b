// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/mesh.hpp"
#include "deformtrack/types.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace deformtrack {

/// Scripted analytic space deformation. The per-frame profile scales the
/// amplitude; kinds:
///   bend    - rotation about the axis line with angle growing linearly in
///             the radial distance to the line (invariant under the motion,
///             so the map inverts exactly)
///   twist   - rotation about the axis line with angle growing linearly in
///             the coordinate along the axis
///   stretch - scaling along the axis direction
///   bump    - Gaussian displacement along the axis around `center`
struct DeformationScript {
    enum class Kind { Bend, Twist, Stretch, Bump };

    Kind kind = Kind::Bend;
    double amplitude = 0.0;  // radians (bend/twist), relative (stretch), meters (bump)
    Vec3 axis = Vec3::UnitZ();
    Vec3 center = Vec3::Zero();
    double reference_length = 0.125;  // distance over which bend/twist angles build up
    double sigma = 0.03;              // bump falloff
    int frames = 1;
    std::vector<double> profile;      // size == frames, factors in [0, 1]

    void validate() const;
    double factor(int frame_index) const;
};

/// Exact point maps of a deformation at one frame. `inverse` is empty for
/// bump (no closed form); the others invert analytically.
struct DeformationMap {
    std::function<Vec3(const Vec3&)> forward;
    std::function<Vec3(const Vec3&)> inverse;
};

/// The analytic map of one script frame, applicable to any rest-frame point.
DeformationMap script_map(const DeformationScript& script, int frame_index);

/// Composition of several scripts at the same frame (applied in order).
DeformationMap composed_map(const std::vector<DeformationScript>& scripts, int frame_index);

/// Deforms every vertex by the script's frame map and returns both the mesh
/// (normals recomputed from faces) and the map itself, so ground truth for
/// any rest-frame point comes from the same analytic deformation.
std::pair<TriangleMesh, DeformationMap> apply_script(const TriangleMesh& mesh,
                                                     const DeformationScript& script,
                                                     int frame_index);

TriangleMesh apply_map(const TriangleMesh& mesh, const DeformationMap& map);

/// Procedural three-armed test object: capsule arms of distinct lengths and
/// radii joined at a hub sphere, meshed from its signed distance field. Arm
/// lengths break the rotational symmetry so registration is unambiguous.
TriangleMesh make_tripod_mesh(double voxel_size, double arm_length = 0.125);

/// Spread-out surface points for POI placement: farthest-point sampling over
/// the mesh vertices, seeded at the vertex farthest from the centroid.
std::vector<int> spread_vertex_sample(const TriangleMesh& mesh, int count);

}  // namespace deformtrack
