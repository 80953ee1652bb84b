// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/grid.hpp"
#include "deformtrack/types.hpp"

#include <array>
#include <vector>

namespace deformtrack {

/// Signature of histograms of orientations: 32 spatial sectors (8 azimuth x
/// 2 elevation x 2 radial shells) times 11 bins over the cosine between
/// neighbor normals and the local z axis. Unit Euclidean norm when valid;
/// all-zero and flagged invalid when the support region is empty or
/// degenerate.
struct ShotDescriptor {
    static constexpr int kAzimuthBins = 8;
    static constexpr int kElevationBins = 2;
    static constexpr int kRadialBins = 2;
    static constexpr int kCosineBins = 11;
    static constexpr int kSize = kAzimuthBins * kElevationBins * kRadialBins * kCosineBins;

    std::array<double, kSize> bins{};
    double support_radius = 0.0;
    bool valid = false;

    double distance(const ShotDescriptor& other) const;
};

/// Uniform spatial subsample: one representative point per cell of the given
/// spacing (the point closest to its cell center; ties to the lowest index).
/// Returned indices ascend.
std::vector<int> subsample_keypoints(const std::vector<Vec3>& points, double spacing);

/// Descriptors for the given keypoints. Each uses the radius-weighted
/// covariance eigenframe of its support as a repeatable local reference frame
/// (axes sign-disambiguated toward the majority of neighbors) and soft
/// quadrilinear binning over the four histogram dimensions.
std::vector<ShotDescriptor> compute_shot(const std::vector<Vec3>& points,
                                         const std::vector<Vec3>& normals,
                                         const std::vector<int>& keypoints, double radius);

struct FeatureMatch {
    int model_index = 0;
    int obs_index = 0;
    double distance = 0.0;
};

/// Nearest-neighbor descriptor matching with Lowe ratio test and symmetric
/// cross-check. Invalid descriptors never match. Output ascends by
/// model_index.
std::vector<FeatureMatch> match_features(const std::vector<ShotDescriptor>& model,
                                         const std::vector<ShotDescriptor>& observed,
                                         double ratio);

/// Feature link consumed by the solver: a model anchor pulled toward a
/// matched observed position.
struct FeatureCorrespondence {
    TrilinearAnchor anchor;
    Vec3 model_point = Vec3::Zero();
    Vec3 observed_point = Vec3::Zero();
    double descriptor_distance = 0.0;
};

}  // namespace deformtrack
