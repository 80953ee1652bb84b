// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/pipeline.hpp"
#include "deformtrack/scripts.hpp"

#include <functional>
#include <string>
#include <vector>

namespace deformtrack {

/// Synthetic ground-truth scenario: a procedural object, a scripted
/// deformation, a camera, and POIs. Ground truth for every POI comes from the
/// scripts' analytic point maps, never from the tracker.
struct Scenario {
    std::string name = "tripod";
    std::string resolution = "coarse";  // "coarse" (~15k vertices / ~700 gridpoints)
                                        // or "fine" (~30k / ~3250)
    uint64_t seed = 0;

    int frames = 30;
    double noise_sigma = 0.0005;  // meters
    int poi_count = 10;
    double pose_offset_deg = 8.0;       // random initial rigid offset bounds
    double pose_offset_translation = 0.015;
    std::vector<DeformationScript> scripts;  // composed per frame

    bool fuse_library = false;  // demonstrate the library through TSDF fusion

    /// Optional camera-frame visibility mask applied to rendered depth
    /// (hidden-surface experiments). Empty: everything visible.
    std::function<bool(const Vec3&)> visible_camera;

    RigidTransform base_pose;  // object-to-camera before the random offset
};

/// The standard benchmark scenario: a bend plus twist cycle peaking at about
/// 2.5 cm of surface displacement.
Scenario tripod_scenario(const std::string& resolution, uint64_t seed);

/// Scenario from a JSON file; unknown keys rejected.
Scenario load_scenario(const std::string& path);

/// Pipeline configuration matched to a scenario resolution.
PipelineConfig bench_config(const std::string& resolution, uint64_t seed);

struct BenchMetrics {
    std::string scenario;
    std::string resolution;
    uint64_t seed = 0;
    int frames = 0;
    size_t mesh_vertices = 0;
    size_t grid_points = 0;

    std::vector<std::string> poi_names;
    std::vector<double> localization_errors;            // per POI, frame 0 (m)
    std::vector<std::vector<double>> tracking_errors;   // [frame-1][poi], frames >= 1 (m)
    std::vector<double> per_poi_rms;
    std::vector<double> per_poi_max;
    double median_localization = 0.0;

    std::vector<size_t> per_frame_projective;
    std::vector<size_t> per_frame_features;
    std::vector<double> per_frame_mean_weight;
    double init_inlier_fraction = 0.0;

    // wall-clock; reported separately so the metrics document stays
    // bit-identical across runs
    std::vector<double> per_frame_seconds;
    double setup_seconds = 0.0;
};

/// Renders the scenario's frames, runs the full pipeline on them, and
/// compares the reported POI positions with the analytic ground truth.
BenchMetrics run_benchmark(const PipelineConfig& config, const Scenario& scenario);

/// Deterministic document (no wall-clock content).
std::string metrics_to_json(const BenchMetrics& metrics);
/// Timing sidecar document.
std::string timing_to_json(const BenchMetrics& metrics);
/// Per-frame error curves as CSV (frame, poi, error_m).
void write_error_curves(const BenchMetrics& metrics, const std::string& path);

double median(std::vector<double> values);

}  // namespace deformtrack
