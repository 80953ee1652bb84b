// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/shot.hpp"
#include "deformtrack/types.hpp"

#include <cstdint>
#include <vector>

namespace deformtrack {

struct RansacConfig {
    double similarity_threshold = 0.9;  // polygonal edge-length prerejection
    double inlier_distance = 0.01;      // meters
    double min_inlier_fraction = 0.25;
    int max_iterations = 4096;
    double confidence = 0.999;  // adaptive early termination
    uint64_t seed = 0;
};

struct RegistrationResult {
    RigidTransform transform;
    std::vector<int> inliers;  // indices into the match list
    int iterations = 0;
};

/// Least-squares rigid alignment mapping `source` onto `target` (Kabsch).
RigidTransform fit_rigid(const std::vector<Vec3>& source, const std::vector<Vec3>& target);

/// Global rigid registration via RANSAC over feature matches with polygonal
/// prerejection: candidate 3-samples whose triangle side lengths disagree
/// between model and observation beyond the similarity threshold are skipped
/// before pose fitting. The best consensus pose is refined over its inliers.
/// Throws if fewer than 3 matches are given or no pose reaches the minimum
/// inlier fraction.
RegistrationResult fixed_registration(const std::vector<Vec3>& model_keypoints,
                                      const std::vector<Vec3>& observed_keypoints,
                                      const std::vector<FeatureMatch>& matches,
                                      const RansacConfig& config);

}  // namespace deformtrack
