// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/camera.hpp"
#include "deformtrack/mesh.hpp"
#include "deformtrack/types.hpp"

#include <cstdint>

namespace deformtrack {

/// Rasterizes the mesh into a depth frame (nearest surface per pixel,
/// perspective-correct interpolation). `pose` places the mesh in the camera
/// frame. Gaussian noise of the given sigma is added to valid depths before
/// 16-bit quantization; pixels with no surface read 0.
DepthImage render_depth(const TriangleMesh& mesh, const RigidTransform& pose,
                        const CameraIntrinsics& intr, double noise_sigma, uint64_t noise_seed = 0);

}  // namespace deformtrack
