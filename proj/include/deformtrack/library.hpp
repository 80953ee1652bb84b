// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/grid.hpp"
#include "deformtrack/mesh.hpp"
#include "deformtrack/observation.hpp"

#include <string>
#include <utility>
#include <vector>

namespace deformtrack {

/// Ordered set of demonstrated reference models, one mesh per deformation
/// state of the object. Read-only after loading.
struct ModelLibrary {
    struct Entry {
        std::string name;
        TriangleMesh mesh;
    };
    std::vector<Entry> entries;

    void add(std::string name, TriangleMesh mesh);
};

/// Loads a JSON manifest {"entries": [{"name", "mesh_path"}, ...]}; mesh paths
/// are resolved relative to the manifest's directory.
ModelLibrary load_library(const std::string& manifest_path);

/// Index of the library entry most similar to the observation: mean
/// nearest-neighbor distance from (subsampled) observed points to the entry's
/// vertices after centroid alignment. Ties go to the lowest index.
int select_reference(const ModelLibrary& library, const Observation& observation,
                     int min_valid_points = 100, int max_sample_points = 2000);

/// A named point of interest bound to the deformation grid.
struct PoiDefinition {
    std::string name;
    TrilinearAnchor anchor;
    Vec3 rest_position = Vec3::Zero();
};

PoiDefinition define_poi(const std::string& name, const Vec3& surface_point,
                         const StaticGrid& grid, const std::vector<PoiDefinition>& existing);

/// POI file: JSON list of {"name", "position": [x, y, z]}. Anchors are
/// computed by the caller against the selected grid.
std::vector<std::pair<std::string, Vec3>> load_poi_file(const std::string& path);
void save_poi_file(const std::vector<std::pair<std::string, Vec3>>& pois,
                   const std::string& path);

}  // namespace deformtrack
