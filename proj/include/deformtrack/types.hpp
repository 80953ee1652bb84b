// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace deformtrack {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Rigid body transform: p' = rotation * p + translation.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

    RigidTransform inverse() const {
        RigidTransform inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }

    /// Composition: (a * b)(p) == a(b(p)).
    friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
        RigidTransform c;
        c.rotation = a.rotation * b.rotation;
        c.translation = a.rotation * b.translation + a.translation;
        return c;
    }

    bool is_valid(double tol = 1e-6) const {
        if (!translation.allFinite() || !rotation.allFinite()) return false;
        Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
        return err.cwiseAbs().maxCoeff() < tol && rotation.determinant() > 0.0;
    }
};

/// Nearest rotation to an arbitrary 3x3 matrix (polar decomposition via SVD).
Mat3 nearest_rotation(const Mat3& m);

/// Rotation about a unit axis by `angle` radians.
Mat3 axis_angle(const Vec3& axis, double angle);

/// Rotation angle in radians between two rotations.
double rotation_angle_between(const Mat3& a, const Mat3& b);

inline void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace deformtrack
