// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/bench.hpp"

#include "deformtrack/render.hpp"
#include "deformtrack/tsdf.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace deformtrack {

using nlohmann::json;

namespace {

struct ResolutionPreset {
    double mesh_voxel;
    double grid_spacing;
};

ResolutionPreset preset(const std::string& resolution) {
    if (resolution == "coarse") return {0.0028, 0.035};
    if (resolution == "fine") return {0.00205, 0.0155};
    throw std::runtime_error("unknown resolution: " + resolution + " (coarse|fine)");
}

std::vector<double> cycle_profile(int frames) {
    std::vector<double> p(frames);
    for (int k = 0; k < frames; ++k) {
        double s = std::sin(M_PI * k / std::max(1, frames - 1));
        p[k] = s * s;
    }
    return p;
}

}  // namespace

Scenario tripod_scenario(const std::string& resolution, uint64_t seed) {
    Scenario s;
    s.name = "tripod";
    s.resolution = resolution;
    s.seed = seed;
    s.frames = 30;

    DeformationScript bend;
    bend.kind = DeformationScript::Kind::Bend;
    bend.amplitude = 0.17;  // radians at the reference length
    bend.axis = Vec3::UnitZ();
    bend.reference_length = 0.125;
    bend.frames = s.frames;
    bend.profile = cycle_profile(s.frames);

    DeformationScript twist;
    twist.kind = DeformationScript::Kind::Twist;
    twist.amplitude = 0.28;
    twist.axis = Vec3::UnitX();
    twist.reference_length = 0.125;
    twist.frames = s.frames;
    twist.profile = bend.profile;

    s.scripts = {bend, twist};

    // camera looks down +z; tilt the object so the arms show depth variation
    s.base_pose.rotation = axis_angle(Vec3::UnitX(), 25.0 * M_PI / 180.0);
    s.base_pose.translation = Vec3(0.0, 0.02, 0.55);
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("scenario parse error: " + std::string(e.what()));
    }
    static const std::set<std::string> allowed = {
        "name",      "resolution",  "seed",        "frames",
        "noise_sigma", "poi_count", "pose_offset_deg", "pose_offset_translation",
        "fuse_library", "scripts"};
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::runtime_error("scenario: unknown key \"" + it.key() + "\"");

    Scenario s = tripod_scenario("coarse", 0);
    if (doc.contains("name")) s.name = doc["name"].get<std::string>();
    if (doc.contains("resolution")) s.resolution = doc["resolution"].get<std::string>();
    if (doc.contains("seed")) s.seed = doc["seed"].get<uint64_t>();
    if (doc.contains("frames")) s.frames = doc["frames"].get<int>();
    if (doc.contains("noise_sigma")) s.noise_sigma = doc["noise_sigma"].get<double>();
    if (doc.contains("poi_count")) s.poi_count = doc["poi_count"].get<int>();
    if (doc.contains("pose_offset_deg")) s.pose_offset_deg = doc["pose_offset_deg"].get<double>();
    if (doc.contains("pose_offset_translation"))
        s.pose_offset_translation = doc["pose_offset_translation"].get<double>();
    if (doc.contains("fuse_library")) s.fuse_library = doc["fuse_library"].get<bool>();

    if (doc.contains("scripts")) {
        s.scripts.clear();
        for (const auto& js : doc["scripts"]) {
            static const std::set<std::string> skeys = {"kind", "amplitude", "axis", "center",
                                                        "reference_length", "sigma"};
            for (auto it = js.begin(); it != js.end(); ++it)
                if (!skeys.count(it.key()))
                    throw std::runtime_error("scenario script: unknown key \"" + it.key() + "\"");
            DeformationScript d;
            std::string kind = js.at("kind").get<std::string>();
            if (kind == "bend") d.kind = DeformationScript::Kind::Bend;
            else if (kind == "twist") d.kind = DeformationScript::Kind::Twist;
            else if (kind == "stretch") d.kind = DeformationScript::Kind::Stretch;
            else if (kind == "bump") d.kind = DeformationScript::Kind::Bump;
            else throw std::runtime_error("scenario script: unknown kind " + kind);
            d.amplitude = js.at("amplitude").get<double>();
            if (js.contains("axis"))
                d.axis = Vec3(js["axis"][0].get<double>(), js["axis"][1].get<double>(),
                              js["axis"][2].get<double>());
            if (js.contains("center"))
                d.center = Vec3(js["center"][0].get<double>(), js["center"][1].get<double>(),
                                js["center"][2].get<double>());
            if (js.contains("reference_length"))
                d.reference_length = js["reference_length"].get<double>();
            if (js.contains("sigma")) d.sigma = js["sigma"].get<double>();
            d.frames = s.frames;
            d.profile = cycle_profile(s.frames);
            s.scripts.push_back(std::move(d));
        }
    } else {
        for (auto& sc : s.scripts) {
            sc.frames = s.frames;
            sc.profile = cycle_profile(s.frames);
        }
    }
    return s;
}

PipelineConfig bench_config(const std::string& resolution, uint64_t seed) {
    ResolutionPreset p = preset(resolution);
    PipelineConfig c;
    c.seed = seed;
    c.intrinsics.fx = c.intrinsics.fy = 525.0;
    c.intrinsics.cx = 319.5;
    c.intrinsics.cy = 239.5;
    c.intrinsics.width = 640;
    c.intrinsics.height = 480;
    c.intrinsics.depth_scale = 0.00025;  // quarter-millimeter quantization
    c.grid_spacing = p.grid_spacing;
    c.grid_margin_cells = 1;
    c.tsdf_voxel_size = p.mesh_voxel;
    c.tsdf_truncation = 4.0 * p.mesh_voxel;
    c.features.keypoint_spacing = 0.02;
    c.features.radius = 0.04;
    c = c.with_derived_defaults();
    c.validate();
    return c;
}

namespace {

RigidTransform random_offset(std::mt19937_64& rng, double max_deg, double max_translation) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec3 axis;
    do {
        axis = Vec3(unit(rng), unit(rng), unit(rng));
    } while (axis.norm() < 1e-3);
    std::uniform_real_distribution<double> angle(0.0, max_deg * M_PI / 180.0);
    std::uniform_real_distribution<double> shift(-max_translation, max_translation);
    RigidTransform t;
    t.rotation = axis_angle(axis.normalized(), angle(rng));
    t.translation = Vec3(shift(rng), shift(rng), shift(rng));
    return t;
}

void apply_visibility_mask(DepthImage& depth, const CameraIntrinsics& intr,
                           const std::function<bool(const Vec3&)>& visible) {
    if (!visible) return;
    for (int v = 0; v < depth.height; ++v)
        for (int u = 0; u < depth.width; ++u) {
            uint16_t raw = depth.raw(u, v);
            if (raw == 0) continue;
            if (!visible(backproject(u, v, raw * intr.depth_scale, intr))) depth.raw(u, v) = 0;
        }
}

TriangleMesh demonstrate_library_mesh(const TriangleMesh& object, const Scenario& scenario,
                                      const PipelineConfig& config) {
    // fuse rendered views of the rest object into a TSDF and re-mesh it
    Vec3 lo, hi;
    object.bounding_box(lo, hi);
    double margin = 4.0 * config.tsdf_voxel_size;
    Vec3 origin = lo.array() - margin;
    Vec3 extent = (hi - lo).array() + 2.0 * margin;
    int nx = static_cast<int>(std::ceil(extent.x() / config.tsdf_voxel_size)) + 1;
    int ny = static_cast<int>(std::ceil(extent.y() / config.tsdf_voxel_size)) + 1;
    int nz = static_cast<int>(std::ceil(extent.z() / config.tsdf_voxel_size)) + 1;
    TsdfVolume vol(origin, config.tsdf_voxel_size, nx, ny, nz, config.tsdf_truncation,
                   config.tsdf_max_weight);

    // orbit poses looking at the object from above and below
    for (int k = 0; k < 8; ++k) {
        double yaw = 2.0 * M_PI * k / 8.0;
        double pitch = (k % 2 == 0 ? 35.0 : -35.0) * M_PI / 180.0;
        Mat3 r = axis_angle(Vec3::UnitZ(), yaw) * axis_angle(Vec3::UnitX(), pitch);
        // camera looks down +z at the object centered ~0.5 m away
        RigidTransform object_to_cam;
        object_to_cam.rotation = r;
        object_to_cam.translation = Vec3(0, 0, 0.5);
        DepthImage depth =
            render_depth(object, object_to_cam, config.intrinsics, 0.0, scenario.seed + k);
        vol.integrate(depth, object_to_cam.inverse(), config.intrinsics);
    }
    return extract_mesh(vol);
}

}  // namespace

BenchMetrics run_benchmark(const PipelineConfig& config, const Scenario& scenario) {
    using clock = std::chrono::steady_clock;
    auto seconds_since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    BenchMetrics m;
    m.scenario = scenario.name;
    m.resolution = scenario.resolution;
    m.seed = scenario.seed;
    m.frames = scenario.frames;

    auto t_setup = clock::now();
    ResolutionPreset p = preset(scenario.resolution);
    TriangleMesh object = make_tripod_mesh(p.mesh_voxel);
    TriangleMesh library_mesh =
        scenario.fuse_library ? demonstrate_library_mesh(object, scenario, config) : object;
    if (scenario.fuse_library) object = library_mesh;  // track the demonstrated surface

    ModelLibrary library;
    library.add("tripod_rest", library_mesh);

    std::vector<std::pair<std::string, Vec3>> pois;
    {
        auto picks = spread_vertex_sample(library_mesh, scenario.poi_count);
        for (size_t i = 0; i < picks.size(); ++i) {
            pois.emplace_back("poi_" + std::to_string(i), library_mesh.vertices[picks[i]]);
            m.poi_names.push_back(pois.back().first);
        }
    }

    std::mt19937_64 rng(scenario.seed);
    RigidTransform pose = random_offset(rng, scenario.pose_offset_deg,
                                        scenario.pose_offset_translation) *
                          scenario.base_pose;

    m.mesh_vertices = library_mesh.vertices.size();
    m.setup_seconds = seconds_since(t_setup);

    TrackerState tracker;
    Calibration calib;

    for (int frame = 0; frame < scenario.frames; ++frame) {
        DeformationMap map = composed_map(scenario.scripts, frame);
        TriangleMesh deformed = apply_map(object, map);
        DepthImage depth = render_depth(deformed, pose, config.intrinsics, scenario.noise_sigma,
                                        scenario.seed * 7919 + frame);
        apply_visibility_mask(depth, config.intrinsics, scenario.visible_camera);

        auto t0 = clock::now();
        Observation obs = make_observation(depth, config.intrinsics);
        PoiReport report;
        if (frame == 0) {
            tracker = initialize(library, obs, config, pois);
            report = track_frame(tracker, obs, config, calib);
            m.grid_points = tracker.grid.size();
        } else {
            report = track_frame(tracker, obs, config, calib);
        }
        m.per_frame_seconds.push_back(seconds_since(t0));

        std::vector<double> errors(report.pois.size());
        for (size_t i = 0; i < report.pois.size(); ++i) {
            Vec3 truth = pose(map.forward(tracker.pois[i].rest_position));
            errors[i] = (report.pois[i].camera - truth).norm();
        }
        if (frame == 0) m.localization_errors = errors;
        else m.tracking_errors.push_back(errors);

        m.per_frame_projective.push_back(tracker.last.projective_count);
        m.per_frame_features.push_back(tracker.last.feature_count);
        m.per_frame_mean_weight.push_back(tracker.last.mean_weight);
    }

    const size_t n_pois = m.poi_names.size();
    m.per_poi_rms.assign(n_pois, 0.0);
    m.per_poi_max.assign(n_pois, 0.0);
    for (const auto& frame_errors : m.tracking_errors)
        for (size_t i = 0; i < n_pois; ++i) {
            m.per_poi_rms[i] += frame_errors[i] * frame_errors[i];
            m.per_poi_max[i] = std::max(m.per_poi_max[i], frame_errors[i]);
        }
    if (!m.tracking_errors.empty())
        for (double& r : m.per_poi_rms) r = std::sqrt(r / m.tracking_errors.size());
    m.median_localization = median(m.localization_errors);
    return m;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

std::string metrics_to_json(const BenchMetrics& m) {
    json doc;
    doc["scenario"] = m.scenario;
    doc["resolution"] = m.resolution;
    doc["seed"] = m.seed;
    doc["frames"] = m.frames;
    doc["mesh_vertices"] = m.mesh_vertices;
    doc["grid_points"] = m.grid_points;
    doc["poi_names"] = m.poi_names;
    doc["localization_errors_m"] = m.localization_errors;
    doc["median_localization_m"] = m.median_localization;
    doc["tracking_errors_m"] = m.tracking_errors;
    doc["per_poi_rms_m"] = m.per_poi_rms;
    doc["per_poi_max_m"] = m.per_poi_max;
    doc["per_frame_projective"] = m.per_frame_projective;
    doc["per_frame_features"] = m.per_frame_features;
    doc["per_frame_mean_weight"] = m.per_frame_mean_weight;
    return doc.dump(2);
}

std::string timing_to_json(const BenchMetrics& m) {
    json doc;
    doc["setup_seconds"] = m.setup_seconds;
    doc["per_frame_seconds"] = m.per_frame_seconds;
    doc["median_frame_seconds"] = median(m.per_frame_seconds);
    return doc.dump(2);
}

void write_error_curves(const BenchMetrics& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write curves: " + path);
    out << "frame,poi,error_m\n";
    for (size_t i = 0; i < m.localization_errors.size(); ++i)
        out << "0," << m.poi_names[i] << "," << m.localization_errors[i] << "\n";
    for (size_t f = 0; f < m.tracking_errors.size(); ++f)
        for (size_t i = 0; i < m.tracking_errors[f].size(); ++i)
            out << (f + 1) << "," << m.poi_names[i] << "," << m.tracking_errors[f][i] << "\n";
}

}  // namespace deformtrack
