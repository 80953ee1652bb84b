// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/cli.hpp"

#include "deformtrack/bench.hpp"
#include "deformtrack/pipeline.hpp"
#include "deformtrack/render.hpp"
#include "deformtrack/tsdf.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace deformtrack {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int log_level() {
    const char* env = std::getenv("DEFORMTRACK_LOG");
    return env ? std::atoi(env) : 0;
}

std::vector<std::string> list_frames(const std::string& dir) {
    std::vector<std::string> frames;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".pgm")
            frames.push_back(e.path().string());
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw std::runtime_error("no .pgm frames in " + dir);
    return frames;
}

std::vector<RigidTransform> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open poses: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("poses parse error: " + std::string(e.what()));
    }
    if (!doc.is_array()) throw std::runtime_error("poses must be a JSON list");
    std::vector<RigidTransform> poses;
    for (const auto& jp : doc) {
        if (!jp.contains("rotation") || !jp.contains("translation") ||
            jp["rotation"].size() != 9 || jp["translation"].size() != 3)
            throw std::runtime_error("each pose needs rotation[9] and translation[3]");
        RigidTransform t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t.rotation(r, c) = jp["rotation"][3 * r + c].get<double>();
        for (int k = 0; k < 3; ++k) t.translation[k] = jp["translation"][k].get<double>();
        if (!t.is_valid()) throw std::runtime_error("pose rotation is not orthonormal");
        poses.push_back(t);
    }
    return poses;
}

int cmd_demonstrate(const std::string& config_path, const std::string& frames_dir,
                    const std::string& poses_path, const std::string& out_path) {
    PipelineConfig config = load_pipeline_config(config_path);
    auto frames = list_frames(frames_dir);
    auto poses = load_poses(poses_path);
    if (frames.size() != poses.size())
        throw std::runtime_error("frame count (" + std::to_string(frames.size()) +
                                 ") does not match pose count (" + std::to_string(poses.size()) +
                                 ")");

    // volume box from the back-projected extent of all frames
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    std::vector<DepthImage> depths;
    for (size_t f = 0; f < frames.size(); ++f) {
        depths.push_back(load_pgm16(frames[f]));
        const DepthImage& d = depths.back();
        for (int v = 0; v < d.height; v += 4)
            for (int u = 0; u < d.width; u += 4) {
                uint16_t raw = d.raw(u, v);
                if (raw == 0) continue;
                Vec3 w = poses[f](backproject(u, v, raw * config.intrinsics.depth_scale,
                                              config.intrinsics));
                lo = lo.cwiseMin(w);
                hi = hi.cwiseMax(w);
            }
    }
    if (!lo.allFinite()) throw std::runtime_error("all frames empty; nothing to fuse");

    double margin = config.tsdf_truncation + 2.0 * config.tsdf_voxel_size;
    lo.array() -= margin;
    hi.array() += margin;
    int nx = static_cast<int>(std::ceil((hi - lo).x() / config.tsdf_voxel_size)) + 1;
    int ny = static_cast<int>(std::ceil((hi - lo).y() / config.tsdf_voxel_size)) + 1;
    int nz = static_cast<int>(std::ceil((hi - lo).z() / config.tsdf_voxel_size)) + 1;

    TsdfVolume vol(lo, config.tsdf_voxel_size, nx, ny, nz, config.tsdf_truncation,
                   config.tsdf_max_weight);
    for (size_t f = 0; f < frames.size(); ++f)
        vol.integrate(depths[f], poses[f], config.intrinsics);

    TriangleMesh mesh = extract_mesh(vol);
    save_ply(mesh, out_path);
    if (log_level() >= 1)
        std::cerr << "demonstrate: fused " << frames.size() << " frames -> "
                  << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
                  << " triangles\n";
    return 0;
}

int cmd_annotate(const std::string& mesh_path, const std::string& config_path,
                 const std::string& pois_path, const std::string& out_path) {
    PipelineConfig config = load_pipeline_config(config_path);
    TriangleMesh mesh = load_ply(mesh_path);
    StaticGrid grid = build_static_grid(mesh, config.grid_spacing, config.grid_margin_cells);
    auto pois = load_poi_file(pois_path);

    std::vector<PoiDefinition> validated;
    for (const auto& [name, pos] : pois)
        validated.push_back(define_poi(name, pos, grid, validated));

    save_poi_file(pois, out_path);
    if (log_level() >= 1)
        std::cerr << "annotate: validated " << pois.size() << " POIs against a " << grid.nx << "x"
                  << grid.ny << "x" << grid.nz << " grid\n";
    return 0;
}

int cmd_track(const std::string& config_path, const std::string& library_path,
              const std::string& pois_path, const std::string& frames_dir,
              const std::string& calibration_path, const std::string& out_path,
              const std::string& dump_dir, uint64_t seed_override, bool has_seed) {
    PipelineConfig config = load_pipeline_config(config_path);
    if (has_seed) {
        config.seed = seed_override;
        config.ransac.seed = seed_override + 1;
    }
    ModelLibrary library = load_library(library_path);
    auto pois = load_poi_file(pois_path);
    Calibration calib;
    if (!calibration_path.empty()) calib = load_calibration(calibration_path);
    auto frames = list_frames(frames_dir);

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write report: " + out_path);
    if (!dump_dir.empty()) fs::create_directories(dump_dir);

    TrackerState tracker;
    for (size_t f = 0; f < frames.size(); ++f) {
        DepthImage depth = load_pgm16(frames[f]);
        Observation obs = make_observation(depth, config.intrinsics);
        if (f == 0) tracker = initialize(library, obs, config, pois);
        PoiReport report = track_frame(tracker, obs, config, calib);
        out << poi_report_to_json_line(report) << "\n";

        if (!dump_dir.empty()) {
            char name[64];
            std::snprintf(name, sizeof(name), "frame_%06zu.ply", f);
            save_ply(tracker.deformed_mesh(), (fs::path(dump_dir) / name).string());
        }
        if (log_level() >= 1)
            std::cerr << "frame " << f << ": " << tracker.last.projective_count
                      << " projective, " << tracker.last.feature_count
                      << " feature correspondences, mean weight " << tracker.last.mean_weight
                      << (tracker.last.reregistered ? " [re-registered]" : "")
                      << (tracker.last.skipped ? " [skipped]" : "") << "\n";
    }
    return 0;
}

int cmd_bench(const std::string& scenario_arg, const std::string& resolution, uint64_t seed,
              const std::string& out_path, const std::string& plots_path,
              const std::string& timing_path) {
    Scenario scenario;
    if (scenario_arg == "tripod" || scenario_arg.empty()) {
        scenario = tripod_scenario(resolution, seed);
    } else {
        scenario = load_scenario(scenario_arg);
        scenario.resolution = resolution;
        scenario.seed = seed;
    }
    PipelineConfig config = bench_config(resolution, seed);
    BenchMetrics metrics = run_benchmark(config, scenario);

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write metrics: " + out_path);
    out << metrics_to_json(metrics) << "\n";

    std::string tpath = timing_path.empty() ? out_path + ".timing.json" : timing_path;
    std::ofstream tout(tpath);
    if (!tout) throw std::runtime_error("cannot write timing: " + tpath);
    tout << timing_to_json(metrics) << "\n";

    if (!plots_path.empty()) write_error_curves(metrics, plots_path);

    std::cerr << "bench " << scenario.name << " (" << resolution << "): median localization "
              << metrics.median_localization * 1000.0 << " mm, max per-POI RMS "
              << (metrics.per_poi_rms.empty()
                      ? 0.0
                      : *std::max_element(metrics.per_poi_rms.begin(), metrics.per_poi_rms.end())) *
                     1000.0
              << " mm, median frame time " << median(metrics.per_frame_seconds) << " s\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"deformtrack: localization and tracking of surface points on deformable objects"};
    app.require_subcommand(1);

    // demonstrate
    std::string d_config, d_frames, d_poses, d_out;
    auto* demonstrate = app.add_subcommand(
        "demonstrate", "Fuse depth frames with known poses into a reference mesh");
    demonstrate->add_option("--config", d_config, "pipeline config JSON")->required();
    demonstrate->add_option("--frames", d_frames, "directory of 16-bit PGM depth frames")
        ->required();
    demonstrate->add_option("--poses", d_poses, "camera-to-world poses JSON")->required();
    demonstrate->add_option("--out", d_out, "output mesh (.ply)")->required();

    // annotate
    std::string a_mesh, a_config, a_pois, a_out;
    auto* annotate =
        app.add_subcommand("annotate", "Validate POI definitions against a reference mesh");
    annotate->add_option("--mesh", a_mesh, "reference mesh (.ply)")->required();
    annotate->add_option("--config", a_config, "pipeline config JSON")->required();
    annotate->add_option("--pois", a_pois, "POI JSON list")->required();
    annotate->add_option("--out", a_out, "validated POI file")->required();

    // track
    std::string t_config, t_library, t_pois, t_frames, t_calib, t_out, t_dump;
    uint64_t t_seed = 0;
    auto* track = app.add_subcommand("track", "Track POIs through a directory of depth frames");
    track->add_option("--config", t_config, "pipeline config JSON")->required();
    track->add_option("--library", t_library, "library manifest JSON")->required();
    track->add_option("--pois", t_pois, "POI JSON list")->required();
    track->add_option("--frames", t_frames, "directory of 16-bit PGM depth frames")->required();
    track->add_option("--calibration", t_calib, "camera-to-end-effector calibration JSON");
    track->add_option("--out", t_out, "output report (JSON lines)")->required();
    track->add_option("--dump-meshes", t_dump, "directory for per-frame deformed meshes");
    auto* seed_opt = track->add_option("--seed", t_seed, "override the config seed");

    // bench
    std::string b_scenario = "tripod", b_resolution = "coarse", b_out = "metrics.json";
    std::string b_plots, b_timing;
    uint64_t b_seed = 0;
    auto* bench = app.add_subcommand("bench", "Synthetic ground-truth benchmark");
    bench->add_option("--scenario", b_scenario, "built-in name or scenario JSON path");
    bench->add_option("--resolution", b_resolution, "coarse|fine");
    bench->add_option("--seed", b_seed, "benchmark seed");
    bench->add_option("--out", b_out, "metrics JSON (deterministic)");
    bench->add_option("--emit-plots", b_plots, "per-frame error curves CSV");
    bench->add_option("--timing-out", b_timing, "timing JSON (default: <out>.timing.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (demonstrate->parsed()) return cmd_demonstrate(d_config, d_frames, d_poses, d_out);
        if (annotate->parsed()) return cmd_annotate(a_mesh, a_config, a_pois, a_out);
        if (track->parsed())
            return cmd_track(t_config, t_library, t_pois, t_frames, t_calib, t_out, t_dump, t_seed,
                             seed_opt->count() > 0);
        if (bench->parsed())
            return cmd_bench(b_scenario, b_resolution, b_seed, b_out, b_plots, b_timing);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace deformtrack
