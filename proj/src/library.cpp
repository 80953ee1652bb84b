// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/library.hpp"

#include "deformtrack/spatial_grid.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <limits>

namespace deformtrack {

using nlohmann::json;

void ModelLibrary::add(std::string name, TriangleMesh mesh) {
    require(!name.empty(), "library: empty entry name");
    for (const auto& e : entries) require(e.name != name, "library: duplicate entry name");
    entries.push_back({std::move(name), std::move(mesh)});
}

ModelLibrary load_library(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open library manifest: " + manifest_path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("library manifest parse error: " + std::string(e.what()));
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array())
        throw std::runtime_error("library manifest must contain an \"entries\" array");

    auto base = std::filesystem::path(manifest_path).parent_path();
    ModelLibrary lib;
    for (const auto& e : doc["entries"]) {
        if (!e.contains("name") || !e.contains("mesh_path"))
            throw std::runtime_error("library entry needs name and mesh_path");
        auto mesh_path = std::filesystem::path(e["mesh_path"].get<std::string>());
        if (mesh_path.is_relative()) mesh_path = base / mesh_path;
        lib.add(e["name"].get<std::string>(), load_ply(mesh_path.string()));
    }
    require(!lib.entries.empty(), "library: no entries");
    return lib;
}

int select_reference(const ModelLibrary& library, const Observation& obs, int min_valid_points,
                     int max_sample_points) {
    require(!library.entries.empty(), "select_reference: empty library");
    require(obs.valid_count >= min_valid_points,
            "select_reference: observation below minimum point count");

    // deterministic uniform subsample of valid observed points
    std::vector<Vec3> sample;
    sample.reserve(std::min(obs.valid_count, max_sample_points));
    int stride = std::max(1, obs.valid_count / max_sample_points);
    int seen = 0;
    for (int v = 0; v < obs.height; ++v)
        for (int u = 0; u < obs.width; ++u) {
            if (!obs.has_point(u, v)) continue;
            if (seen++ % stride == 0 && static_cast<int>(sample.size()) < max_sample_points)
                sample.push_back(obs.point(u, v));
        }

    Vec3 obs_centroid = Vec3::Zero();
    for (const Vec3& p : sample) obs_centroid += p;
    obs_centroid /= static_cast<double>(sample.size());

    int best = 0;
    double best_cost = std::numeric_limits<double>::infinity();
    for (size_t e = 0; e < library.entries.size(); ++e) {
        const auto& mesh = library.entries[e].mesh;
        Vec3 mesh_centroid = Vec3::Zero();
        for (const Vec3& v : mesh.vertices) mesh_centroid += v;
        mesh_centroid /= static_cast<double>(mesh.vertices.size());

        Vec3 lo, hi;
        mesh.bounding_box(lo, hi);
        double cell = std::max((hi - lo).maxCoeff() / 20.0, 1e-6);
        SpatialGrid nn(mesh.vertices, cell);

        Vec3 shift = mesh_centroid - obs_centroid;
        double cost = 0.0;
        for (const Vec3& p : sample) {
            int j = nn.nearest(p + shift);
            cost += (mesh.vertices[j] - (p + shift)).norm();
        }
        cost /= static_cast<double>(sample.size());
        if (cost < best_cost) {
            best_cost = cost;
            best = static_cast<int>(e);
        }
    }
    return best;
}

PoiDefinition define_poi(const std::string& name, const Vec3& surface_point,
                         const StaticGrid& grid, const std::vector<PoiDefinition>& existing) {
    require(!name.empty(), "poi: empty name");
    for (const auto& p : existing)
        if (p.name == name) throw std::invalid_argument("poi: duplicate name: " + name);
    if (!grid.contains(surface_point))
        throw std::invalid_argument("poi: point outside grid box: " + name);
    PoiDefinition poi;
    poi.name = name;
    poi.anchor = anchor_point(surface_point, grid);
    poi.rest_position = surface_point;
    return poi;
}

std::vector<std::pair<std::string, Vec3>> load_poi_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open POI file: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("POI file parse error: " + std::string(e.what()));
    }
    if (!doc.is_array()) throw std::runtime_error("POI file must be a JSON list");
    std::vector<std::pair<std::string, Vec3>> out;
    for (const auto& p : doc) {
        if (!p.contains("name") || !p.contains("position") || !p["position"].is_array() ||
            p["position"].size() != 3)
            throw std::runtime_error("POI entries need name and position [x,y,z]");
        out.emplace_back(p["name"].get<std::string>(),
                         Vec3(p["position"][0].get<double>(), p["position"][1].get<double>(),
                              p["position"][2].get<double>()));
    }
    return out;
}

void save_poi_file(const std::vector<std::pair<std::string, Vec3>>& pois,
                   const std::string& path) {
    json doc = json::array();
    for (const auto& [name, pos] : pois)
        doc.push_back({{"name", name}, {"position", {pos.x(), pos.y(), pos.z()}}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write POI file: " + path);
    out << doc.dump(2) << "\n";
}

}  // namespace deformtrack
