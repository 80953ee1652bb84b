// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/correspond.hpp"
#include "deformtrack/library.hpp"
#include "deformtrack/observation.hpp"
#include "deformtrack/registration.hpp"
#include "deformtrack/shot.hpp"
#include "deformtrack/solver.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace deformtrack {

struct FeatureConfig {
    double radius = 0.0;            // 0: twice the grid spacing
    double keypoint_spacing = 0.0;  // 0: twice the grid spacing
    double match_ratio = 0.8;
};

struct PipelineConfig {
    uint64_t seed = 0;
    CameraIntrinsics intrinsics;
    double grid_spacing = 0.03;
    int grid_margin_cells = 1;

    double tsdf_voxel_size = 0.0025;
    double tsdf_truncation = 0.01;
    double tsdf_max_weight = 64.0;

    WeightCaps caps;                 // caps.d_max == 0: twice the grid spacing
    int min_valid_points = 100;

    FeatureConfig features;
    RansacConfig ransac;             // ransac.inlier_distance == 0: 1.5x grid spacing
    EnergyWeights weights;
    SolverConfig solver;

    double reregister_below_weight = 0.2;

    void validate() const;
    /// Fills the spacing-derived defaults (d_max, feature radius, ...).
    PipelineConfig with_derived_defaults() const;
};

/// Strict parser: unknown keys anywhere in the document are rejected.
PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::string& path);

struct Calibration {
    RigidTransform camera_to_ee;
};

Calibration load_calibration(const std::string& path);

struct PoiReport {
    int frame = -1;
    struct Entry {
        std::string name;
        Vec3 camera = Vec3::Zero();
        Vec3 ee = Vec3::Zero();
        double confidence = 0.0;
    };
    std::vector<Entry> pois;
};

/// One JSON-lines record per frame.
std::string poi_report_to_json_line(const PoiReport& report);

struct FrameDiagnostics {
    size_t projective_count = 0;
    size_t feature_count = 0;
    double mean_weight = 0.0;
    bool reregistered = false;
    bool skipped = false;  // no correspondences; state carried over
    int solver_steps = 0;
    double final_energy = 0.0;
    double max_final_step = 0.0;
};

struct TrackerState {
    TriangleMesh reference;
    std::vector<TrilinearAnchor> anchors;
    StaticGrid grid;
    DeformationState state;
    std::vector<PoiDefinition> pois;
    int frame_index = -1;

    std::vector<int> model_keypoints;               // vertex indices
    std::vector<ShotDescriptor> model_descriptors;  // computed on the rest mesh

    FrameDiagnostics last;
    std::vector<FrameDiagnostics> history;
    // per grid cell: correspondence weight sum and count, for POI confidence
    std::unordered_map<int64_t, std::pair<double, int>> cell_weights;

    /// Deformed mesh at the current state, for dumps and debugging.
    TriangleMesh deformed_mesh() const;
};

/// Selects the reference model, builds and binds the grid, registers the
/// global pose from feature matches, and anchors the POIs. The deformation
/// field starts at rest.
TrackerState initialize(const ModelLibrary& library, const Observation& first,
                        const PipelineConfig& config,
                        const std::vector<std::pair<std::string, Vec3>>& pois);

/// One tracking step: correspondences against the previously deformed model,
/// flip-flop refinement, POI localization. A frame without correspondences
/// carries the state over and reports zero confidence. Falls back to fixed
/// registration (resetting the field to rest) when the mean correspondence
/// weight drops below the configured threshold.
PoiReport track_frame(TrackerState& tracker, const Observation& obs,
                      const PipelineConfig& config, const Calibration& calibration = {});

/// POI positions in the camera and end-effector frames from the current
/// state; does not mutate the tracker.
PoiReport localize_pois(const TrackerState& tracker, const Calibration& calibration);

}  // namespace deformtrack
