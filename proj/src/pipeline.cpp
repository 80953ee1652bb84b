// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace deformtrack {

using nlohmann::json;

void PipelineConfig::validate() const {
    intrinsics.validate();
    require(grid_spacing > 0.0, "config: grid spacing must be positive");
    require(grid_margin_cells >= 0, "config: negative grid margin");
    require(tsdf_voxel_size > 0.0 && tsdf_truncation >= tsdf_voxel_size,
            "config: tsdf truncation must be >= voxel size");
    require(caps.d_max > 0.0 && caps.n_max > 0.0, "config: bad correspondence caps");
    require(caps.min_weight >= 0.0 && caps.min_weight < 1.0, "config: bad weight floor");
    require(min_valid_points > 0, "config: bad min_valid_points");
    require(features.radius > 0.0 && features.keypoint_spacing > 0.0,
            "config: bad feature parameters");
    require(features.match_ratio > 0.0 && features.match_ratio <= 1.0,
            "config: bad match ratio");
    require(ransac.inlier_distance > 0.0, "config: bad ransac inlier distance");
    weights.validate();
    solver.validate();
    require(reregister_below_weight >= 0.0 && reregister_below_weight < 1.0,
            "config: bad re-registration threshold");
}

PipelineConfig PipelineConfig::with_derived_defaults() const {
    PipelineConfig c = *this;
    if (c.caps.d_max <= 0.0) c.caps.d_max = 2.0 * c.grid_spacing;
    if (c.features.radius <= 0.0) c.features.radius = 2.0 * c.grid_spacing;
    if (c.features.keypoint_spacing <= 0.0) c.features.keypoint_spacing = 2.0 * c.grid_spacing;
    if (c.ransac.inlier_distance <= 0.0) c.ransac.inlier_distance = 1.5 * c.grid_spacing;
    if (c.ransac.seed == 0) c.ransac.seed = c.seed + 1;
    return c;
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::runtime_error("config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj[key].get<T>();
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error("config parse error: " + std::string(e.what()));
    }
    check_keys(doc,
               {"seed", "intrinsics", "grid", "tsdf", "correspondence", "features", "ransac",
                "weights", "solver", "tracking"},
               "config root");

    PipelineConfig c;
    get_if(doc, "seed", c.seed);

    if (doc.contains("intrinsics")) {
        const json& j = doc["intrinsics"];
        check_keys(j, {"fx", "fy", "cx", "cy", "width", "height", "depth_scale"}, "intrinsics");
        get_if(j, "fx", c.intrinsics.fx);
        get_if(j, "fy", c.intrinsics.fy);
        get_if(j, "cx", c.intrinsics.cx);
        get_if(j, "cy", c.intrinsics.cy);
        get_if(j, "width", c.intrinsics.width);
        get_if(j, "height", c.intrinsics.height);
        get_if(j, "depth_scale", c.intrinsics.depth_scale);
    }
    if (doc.contains("grid")) {
        const json& j = doc["grid"];
        check_keys(j, {"spacing", "margin_cells"}, "grid");
        get_if(j, "spacing", c.grid_spacing);
        get_if(j, "margin_cells", c.grid_margin_cells);
    }
    if (doc.contains("tsdf")) {
        const json& j = doc["tsdf"];
        check_keys(j, {"voxel_size", "truncation", "max_weight"}, "tsdf");
        get_if(j, "voxel_size", c.tsdf_voxel_size);
        get_if(j, "truncation", c.tsdf_truncation);
        get_if(j, "max_weight", c.tsdf_max_weight);
    }
    if (doc.contains("correspondence")) {
        const json& j = doc["correspondence"];
        check_keys(j, {"d_max", "n_max", "min_weight", "occlusion", "min_valid_points"},
                   "correspondence");
        get_if(j, "d_max", c.caps.d_max);
        get_if(j, "n_max", c.caps.n_max);
        get_if(j, "min_weight", c.caps.min_weight);
        get_if(j, "occlusion", c.caps.occlusion);
        get_if(j, "min_valid_points", c.min_valid_points);
    }
    if (doc.contains("features")) {
        const json& j = doc["features"];
        check_keys(j, {"radius", "keypoint_spacing", "match_ratio"}, "features");
        get_if(j, "radius", c.features.radius);
        get_if(j, "keypoint_spacing", c.features.keypoint_spacing);
        get_if(j, "match_ratio", c.features.match_ratio);
    }
    if (doc.contains("ransac")) {
        const json& j = doc["ransac"];
        check_keys(j,
                   {"similarity_threshold", "inlier_distance", "min_inlier_fraction",
                    "max_iterations"},
                   "ransac");
        get_if(j, "similarity_threshold", c.ransac.similarity_threshold);
        get_if(j, "inlier_distance", c.ransac.inlier_distance);
        get_if(j, "min_inlier_fraction", c.ransac.min_inlier_fraction);
        get_if(j, "max_iterations", c.ransac.max_iterations);
    }
    if (doc.contains("weights")) {
        const json& j = doc["weights"];
        check_keys(j, {"omega_p", "omega_s", "omega_f", "omega_r", "omega_r_scale"}, "weights");
        get_if(j, "omega_p", c.weights.omega_p);
        get_if(j, "omega_s", c.weights.omega_s);
        get_if(j, "omega_f", c.weights.omega_f);
        get_if(j, "omega_r", c.weights.omega_r);
        get_if(j, "omega_r_scale", c.weights.omega_r_scale);
    }
    if (doc.contains("solver")) {
        const json& j = doc["solver"];
        check_keys(j,
                   {"flip_flop_iters", "gn_iters_per_flip", "pcg_max_iters", "pcg_rel_tol",
                    "step_damping", "convergence_eps", "research_correspondences"},
                   "solver");
        get_if(j, "flip_flop_iters", c.solver.flip_flop_iters);
        get_if(j, "gn_iters_per_flip", c.solver.gn_iters_per_flip);
        get_if(j, "pcg_max_iters", c.solver.pcg_max_iters);
        get_if(j, "pcg_rel_tol", c.solver.pcg_rel_tol);
        get_if(j, "step_damping", c.solver.step_damping);
        get_if(j, "convergence_eps", c.solver.convergence_eps);
        get_if(j, "research_correspondences", c.solver.research_correspondences);
    }
    if (doc.contains("tracking")) {
        const json& j = doc["tracking"];
        check_keys(j, {"reregister_below_weight"}, "tracking");
        get_if(j, "reregister_below_weight", c.reregister_below_weight);
    }

    c = c.with_derived_defaults();
    c.validate();
    return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_pipeline_config(ss.str());
}

Calibration load_calibration(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open calibration: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("calibration parse error: " + std::string(e.what()));
    }
    if (!doc.contains("rotation") || !doc.contains("translation") ||
        doc["rotation"].size() != 9 || doc["translation"].size() != 3)
        throw std::runtime_error("calibration needs rotation[9] (row-major) and translation[3]");
    Calibration c;
    for (int r = 0; r < 3; ++r)
        for (int col = 0; col < 3; ++col)
            c.camera_to_ee.rotation(r, col) = doc["rotation"][3 * r + col].get<double>();
    for (int k = 0; k < 3; ++k)
        c.camera_to_ee.translation[k] = doc["translation"][k].get<double>();
    require(c.camera_to_ee.is_valid(), "calibration: rotation is not orthonormal");
    return c;
}

std::string poi_report_to_json_line(const PoiReport& report) {
    json rec;
    rec["frame"] = report.frame;
    json pois = json::array();
    for (const auto& p : report.pois) {
        pois.push_back({{"name", p.name},
                        {"camera", {p.camera.x(), p.camera.y(), p.camera.z()}},
                        {"ee", {p.ee.x(), p.ee.y(), p.ee.z()}},
                        {"confidence", p.confidence}});
    }
    rec["pois"] = std::move(pois);
    return rec.dump();
}

TriangleMesh TrackerState::deformed_mesh() const {
    std::vector<Vec3> verts(anchors.size());
    for (size_t i = 0; i < anchors.size(); ++i) verts[i] = deform_point(anchors[i], grid, state);
    return TriangleMesh(std::move(verts), reference.triangles);
}

namespace {

int64_t cell_key(const TrilinearAnchor& a) {
    return a.cell[0] + (int64_t(a.cell[1]) << 20) + (int64_t(a.cell[2]) << 40);
}

struct ObservedFeatures {
    std::vector<Vec3> keypoints;
    std::vector<ShotDescriptor> descriptors;
};

ObservedFeatures observed_features(const Observation& obs, const PipelineConfig& config) {
    std::vector<Vec3> pts;
    std::vector<Vec3> nrms;
    pts.reserve(obs.valid_count);
    for (int v = 0; v < obs.height; ++v)
        for (int u = 0; u < obs.width; ++u)
            if (obs.has_normal(u, v)) {
                pts.push_back(obs.point(u, v));
                nrms.push_back(obs.normal(u, v));
            }
    ObservedFeatures out;
    if (pts.empty()) return out;
    std::vector<int> keys = subsample_keypoints(pts, config.features.keypoint_spacing);
    out.descriptors = compute_shot(pts, nrms, keys, config.features.radius);
    out.keypoints.reserve(keys.size());
    for (int k : keys) out.keypoints.push_back(pts[k]);
    return out;
}

RegistrationResult register_against(const TrackerState& tracker, const ObservedFeatures& feats,
                                    const PipelineConfig& config, uint64_t salt) {
    std::vector<Vec3> model_kp;
    model_kp.reserve(tracker.model_keypoints.size());
    for (int k : tracker.model_keypoints) model_kp.push_back(tracker.reference.vertices[k]);

    auto matches =
        match_features(tracker.model_descriptors, feats.descriptors, config.features.match_ratio);
    RansacConfig rc = config.ransac;
    rc.seed = config.ransac.seed + salt;
    return fixed_registration(model_kp, feats.keypoints, matches, rc);
}

std::vector<FeatureCorrespondence> feature_correspondences(const TrackerState& tracker,
                                                           const ObservedFeatures& feats,
                                                           const PipelineConfig& config) {
    auto matches =
        match_features(tracker.model_descriptors, feats.descriptors, config.features.match_ratio);
    std::vector<FeatureCorrespondence> out;
    out.reserve(matches.size());
    for (const auto& m : matches) {
        FeatureCorrespondence f;
        int vertex = tracker.model_keypoints[m.model_index];
        f.anchor = tracker.anchors[vertex];
        f.model_point = deform_point(f.anchor, tracker.grid, tracker.state);
        f.observed_point = feats.keypoints[m.obs_index];
        f.descriptor_distance = m.distance;
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace

TrackerState initialize(const ModelLibrary& library, const Observation& first,
                        const PipelineConfig& config,
                        const std::vector<std::pair<std::string, Vec3>>& pois) {
    config.validate();
    require(!library.entries.empty(), "initialize: empty library");

    TrackerState t;
    int ref = select_reference(library, first, config.min_valid_points);
    t.reference = library.entries[ref].mesh;
    t.grid = build_static_grid(t.reference, config.grid_spacing, config.grid_margin_cells);
    t.anchors = bind_mesh(t.reference, t.grid);
    t.state = DeformationState::rest(t.grid);

    t.model_keypoints =
        subsample_keypoints(t.reference.vertices, config.features.keypoint_spacing);
    t.model_descriptors = compute_shot(t.reference.vertices, t.reference.normals,
                                       t.model_keypoints, config.features.radius);

    ObservedFeatures feats = observed_features(first, config);
    if (feats.keypoints.empty())
        throw std::runtime_error("initialize: observation yields no feature keypoints");
    RegistrationResult reg;
    try {
        reg = register_against(t, feats, config, 0);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("initialize: registration failed: ") + e.what() +
                                 " (model keypoints: " + std::to_string(t.model_keypoints.size()) +
                                 ", observed keypoints: " + std::to_string(feats.keypoints.size()) +
                                 ")");
    }
    t.state.global = reg.transform;

    for (const auto& [name, pos] : pois) t.pois.push_back(define_poi(name, pos, t.grid, t.pois));
    return t;
}

PoiReport localize_pois(const TrackerState& tracker, const Calibration& calibration) {
    PoiReport report;
    report.frame = tracker.frame_index;
    for (const auto& poi : tracker.pois) {
        PoiReport::Entry e;
        e.name = poi.name;
        e.camera = deform_point(poi.anchor, tracker.grid, tracker.state);
        e.ee = calibration.camera_to_ee(e.camera);
        auto it = tracker.cell_weights.find(cell_key(poi.anchor));
        if (it != tracker.cell_weights.end() && it->second.second > 0)
            e.confidence = it->second.first / it->second.second;
        report.pois.push_back(std::move(e));
    }
    return report;
}

PoiReport track_frame(TrackerState& tracker, const Observation& obs, const PipelineConfig& config,
                      const Calibration& calibration) {
    config.validate();
    require(!tracker.anchors.empty(), "track_frame: tracker not initialized");

    std::vector<Vec3> rest_normals = tracker.reference.normals;

    FrameDiagnostics diag;
    ObservedFeatures feats = observed_features(obs, config);
    std::vector<FeatureCorrespondence> feature_links =
        feature_correspondences(tracker, feats, config);

    auto projective = [&](const DeformationState& s) {
        return find_projective(tracker.anchors, rest_normals, tracker.grid, s, obs, config.caps);
    };

    std::vector<Correspondence> probe = projective(tracker.state);
    double mean_w = 0.0;
    for (const auto& c : probe) mean_w += c.weight;
    mean_w = probe.empty() ? 0.0 : mean_w / probe.size();

    if (probe.empty() && feature_links.empty()) {
        // nothing to work with; carry the state over
        tracker.frame_index += 1;
        diag.skipped = true;
        tracker.last = diag;
        tracker.history.push_back(diag);
        tracker.cell_weights.clear();
        PoiReport report = localize_pois(tracker, calibration);
        return report;
    }

    if (mean_w < config.reregister_below_weight) {
        // tracking lost; re-estimate the global pose and restart from rest
        try {
            RegistrationResult reg =
                register_against(tracker, feats, config, uint64_t(tracker.frame_index) + 2);
            tracker.state = DeformationState::rest(tracker.grid);
            tracker.state.global = reg.transform;
            diag.reregistered = true;
            feature_links = feature_correspondences(tracker, feats, config);
        } catch (const std::exception&) {
            // keep tracking with what we have
        }
    }

    CorrespondenceProvider provider = [&](const DeformationState& s) {
        CorrespondenceBatch batch;
        batch.projective = projective(s);
        batch.features = feature_links;
        // feature links pull toward fixed observed points; refresh their
        // model-side positions for diagnostics only
        return batch;
    };

    SolveResult solved =
        flip_flop_solve(provider, tracker.state, tracker.grid, config.weights, config.solver);
    tracker.state = solved.state;
    tracker.frame_index += 1;

    // final correspondences at the solved state drive the confidence report
    std::vector<Correspondence> final_corrs = projective(tracker.state);
    tracker.cell_weights.clear();
    double wsum = 0.0;
    for (const auto& c : final_corrs) {
        auto& slot = tracker.cell_weights[cell_key(c.anchor)];
        slot.first += c.weight;
        slot.second += 1;
        wsum += c.weight;
    }

    diag.projective_count = final_corrs.size();
    diag.feature_count = feature_links.size();
    diag.mean_weight = final_corrs.empty() ? 0.0 : wsum / final_corrs.size();
    diag.solver_steps = static_cast<int>(solved.history.size());
    if (!solved.history.empty()) {
        diag.final_energy = solved.history.back().energy_total;
        diag.max_final_step = solved.history.back().max_step;
    }
    tracker.last = diag;
    tracker.history.push_back(diag);

    return localize_pois(tracker, calibration);
}

}  // namespace deformtrack
