// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/mesh.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace deformtrack {

namespace {

// Triangles thinner than this (squared double area) are treated as degenerate.
constexpr double kMinDoubleAreaSq = 1e-28;

std::vector<Vec3> normals_from_faces(const std::vector<Vec3>& vertices,
                                     const std::vector<std::array<int, 3>>& triangles) {
    std::vector<Vec3> acc(vertices.size(), Vec3::Zero());
    for (const auto& t : triangles) {
        Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
        acc[t[0]] += n;
        acc[t[1]] += n;
        acc[t[2]] += n;
    }
    for (auto& n : acc) {
        double len = n.norm();
        n = len > 1e-20 ? Vec3(n / len) : Vec3(0, 0, 1);
    }
    return acc;
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Vec3> verts, std::vector<std::array<int, 3>> tris,
                           std::vector<Vec3> norms) {
    require(!verts.empty(), "mesh: no vertices");
    require(!tris.empty(), "mesh: no triangles");
    if (!norms.empty()) require(norms.size() == verts.size(), "mesh: normal count mismatch");

    const int n = static_cast<int>(verts.size());
    std::vector<std::array<int, 3>> kept;
    kept.reserve(tris.size());
    for (const auto& t : tris) {
        for (int k : t) require(k >= 0 && k < n, "mesh: triangle index out of range");
        Vec3 c = (verts[t[1]] - verts[t[0]]).cross(verts[t[2]] - verts[t[0]]);
        if (c.squaredNorm() > kMinDoubleAreaSq) kept.push_back(t);
    }
    require(!kept.empty(), "mesh: all triangles degenerate");

    vertices = std::move(verts);
    triangles = std::move(kept);
    normals = norms.empty() ? normals_from_faces(vertices, triangles) : std::move(norms);
    for (auto& nrm : normals) {
        double len = nrm.norm();
        require(len > 1e-20, "mesh: zero-length normal");
        nrm /= len;
    }
}

void TriangleMesh::bounding_box(Vec3& lo, Vec3& hi) const {
    require(!vertices.empty(), "mesh: empty");
    lo = hi = vertices[0];
    for (const Vec3& v : vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
}

TriangleMesh load_ply(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open mesh file: " + path);

    std::string line, tok;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0) throw std::runtime_error("not a polygon file: " + path);

    size_t n_vertices = 0, n_faces = 0;
    std::vector<std::string> vertex_props;
    std::string current_element;
    bool ascii = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        ls >> tok;
        if (tok == "comment") continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = (fmt == "ascii");
        } else if (tok == "element") {
            std::string name;
            size_t count = 0;
            ls >> name >> count;
            current_element = name;
            if (name == "vertex") n_vertices = count;
            else if (name == "face") n_faces = count;
        } else if (tok == "property") {
            if (current_element == "vertex") {
                std::string type, name;
                ls >> type >> name;
                vertex_props.push_back(name);
            }
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!ascii) throw std::runtime_error("only ascii polygon files supported: " + path);
    if (n_vertices == 0 || n_faces == 0)
        throw std::runtime_error("polygon file has no geometry: " + path);

    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    for (size_t k = 0; k < vertex_props.size(); ++k) {
        const std::string& p = vertex_props[k];
        if (p == "x") ix = static_cast<int>(k);
        else if (p == "y") iy = static_cast<int>(k);
        else if (p == "z") iz = static_cast<int>(k);
        else if (p == "nx") inx = static_cast<int>(k);
        else if (p == "ny") iny = static_cast<int>(k);
        else if (p == "nz") inz = static_cast<int>(k);
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw std::runtime_error("polygon file lacks x/y/z vertex properties: " + path);
    const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;

    std::vector<Vec3> verts(n_vertices), norms;
    if (has_normals) norms.resize(n_vertices);
    std::vector<double> row(vertex_props.size());
    for (size_t v = 0; v < n_vertices; ++v) {
        for (double& x : row)
            if (!(in >> x)) throw std::runtime_error("truncated vertex data: " + path);
        verts[v] = Vec3(row[ix], row[iy], row[iz]);
        if (has_normals) norms[v] = Vec3(row[inx], row[iny], row[inz]);
    }

    std::vector<std::array<int, 3>> tris;
    tris.reserve(n_faces);
    for (size_t f = 0; f < n_faces; ++f) {
        int cnt = 0;
        if (!(in >> cnt)) throw std::runtime_error("truncated face data: " + path);
        std::vector<int> idx(cnt);
        for (int& i : idx)
            if (!(in >> i)) throw std::runtime_error("truncated face data: " + path);
        // fan-triangulate polygons
        for (int k = 1; k + 1 < cnt; ++k) tris.push_back({idx[0], idx[k], idx[k + 1]});
    }

    return TriangleMesh(std::move(verts), std::move(tris), std::move(norms));
}

void save_ply(const TriangleMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write mesh file: " + path);
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "property double nx\nproperty double ny\nproperty double nz\n";
    out << "element face " << mesh.triangles.size() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";

    char buf[256];
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        const Vec3& n = mesh.normals[i];
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g\n", v.x(), v.y(),
                      v.z(), n.x(), n.y(), n.z());
        out << buf;
    }
    for (const auto& t : mesh.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace deformtrack
