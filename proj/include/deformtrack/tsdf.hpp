// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/camera.hpp"
#include "deformtrack/mesh.hpp"
#include "deformtrack/types.hpp"

#include <vector>

namespace deformtrack {

/// Truncated signed distance volume. Samples live on a lattice at
/// origin + voxel_size * (i, j, k); distances are positive in front of the
/// observed surface (toward the camera) and clamped to +-truncation.
class TsdfVolume {
public:
    TsdfVolume(const Vec3& origin, double voxel_size, int nx, int ny, int nz, double truncation,
               double max_weight = 64.0);

    /// Fuses one depth frame by projective signed-distance update. `pose` is
    /// camera-to-world; each voxel within the truncation band of an observed
    /// surface is updated by a weighted running average, weights incremented
    /// by one per observation and capped.
    void integrate(const DepthImage& depth, const RigidTransform& pose,
                   const CameraIntrinsics& intr);

    int index(int i, int j, int k) const { return i + nx_ * (j + ny_ * k); }
    Vec3 sample_position(int i, int j, int k) const {
        return origin_ + voxel_ * Vec3(i, j, k);
    }

    float value(int i, int j, int k) const { return values_[index(i, j, k)]; }
    float weight(int i, int j, int k) const { return weights_[index(i, j, k)]; }
    void set(int i, int j, int k, float value, float weight);

    const Vec3& origin() const { return origin_; }
    double voxel_size() const { return voxel_; }
    double truncation() const { return truncation_; }
    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }

private:
    Vec3 origin_;
    double voxel_;
    int nx_, ny_, nz_;
    double truncation_;
    double max_weight_;
    std::vector<float> values_;
    std::vector<float> weights_;
};

/// Zero iso-surface of the volume via marching cubes. Only cells whose 8
/// corners all carry observation weight produce triangles; vertex normals
/// come from the interpolated distance gradient (pointing outward).
/// Throws if the observed region contains no sign change.
TriangleMesh extract_mesh(const TsdfVolume& volume);

}  // namespace deformtrack
