// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deformtrack/library.hpp"
#include "deformtrack/render.hpp"
#include "deformtrack/tsdf.hpp"
#include "helpers.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace deformtrack;

namespace {

CameraIntrinsics small_camera() {
    CameraIntrinsics intr;
    intr.fx = intr.fy = 60.0;
    intr.cx = 32.0;
    intr.cy = 24.0;
    intr.width = 64;
    intr.height = 48;
    intr.depth_scale = 0.001;
    return intr;
}

DepthImage constant_depth(const CameraIntrinsics& intr, double z) {
    DepthImage img(intr.width, intr.height);
    for (int v = 0; v < intr.height; ++v)
        for (int u = 0; u < intr.width; ++u) img.set_meters(u, v, z, intr.depth_scale);
    return img;
}

TsdfVolume plane_volume(const CameraIntrinsics& intr, int passes) {
    TsdfVolume vol(Vec3(-0.08, -0.08, 0.35), 0.01, 17, 17, 36, 0.03);
    DepthImage depth = constant_depth(intr, 0.5);
    for (int k = 0; k < passes; ++k) vol.integrate(depth, RigidTransform{}, intr);
    return vol;
}

// analytic sphere distance sampled into a volume
TsdfVolume sphere_volume(double radius, double voxel) {
    double reach = radius + 8.0 * voxel;
    int n = static_cast<int>(std::ceil(2.0 * reach / voxel)) + 1;
    TsdfVolume vol(Vec3(-reach, -reach, -reach), voxel, n, n, n, 4.0 * voxel);
    float trunc = static_cast<float>(vol.truncation());
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                float d = static_cast<float>(vol.sample_position(i, j, k).norm() - radius);
                vol.set(i, j, k, std::clamp(d, -trunc, trunc), 1.0f);
            }
    return vol;
}

int euler_characteristic(const TriangleMesh& mesh) {
    std::set<std::pair<int, int>> edges;
    for (const auto& t : mesh.triangles)
        for (int k = 0; k < 3; ++k) {
            int a = t[k], b = t[(k + 1) % 3];
            edges.insert({std::min(a, b), std::max(a, b)});
        }
    return static_cast<int>(mesh.vertices.size()) - static_cast<int>(edges.size()) +
           static_cast<int>(mesh.triangles.size());
}

}  // namespace

TEST_CASE("tsdf integrate: analytic plane") {
    auto intr = small_camera();
    TsdfVolume vol = plane_volume(intr, 1);

    // signs straddle the plane; zero-crossing within half a voxel of z = 0.5
    for (int k = 0; k < vol.nz(); ++k) {
        double z = vol.sample_position(8, 8, k).z();
        float value = vol.value(8, 8, k);
        float weight = vol.weight(8, 8, k);
        if (z < 0.5 - 0.005 && weight > 0) CHECK(value > 0.0f);
        if (z > 0.5 + 0.005 && weight > 0) CHECK(value < 0.0f);
        CHECK(std::abs(value) <= vol.truncation() + 1e-7);
    }
    bool crossed = false;
    for (int k = 0; k + 1 < vol.nz(); ++k) {
        if (vol.weight(8, 8, k) <= 0 || vol.weight(8, 8, k + 1) <= 0) continue;
        if (vol.value(8, 8, k) >= 0 && vol.value(8, 8, k + 1) < 0) {
            double z0 = vol.sample_position(8, 8, k).z();
            CHECK(std::abs(z0 - 0.5) <= 0.005 + 1e-9);
            crossed = true;
        }
    }
    CHECK(crossed);
}

TEST_CASE("tsdf integrate: idempotent average, doubled weights") {
    auto intr = small_camera();
    TsdfVolume once = plane_volume(intr, 1);
    TsdfVolume twice = plane_volume(intr, 2);
    for (int k = 0; k < once.nz(); ++k) {
        CHECK(twice.value(8, 8, k) == doctest::Approx(once.value(8, 8, k)).epsilon(1e-6));
        CHECK(twice.weight(8, 8, k) == doctest::Approx(2.0 * once.weight(8, 8, k)));
    }
}

TEST_CASE("tsdf integrate: invalid pixels contribute nothing") {
    auto intr = small_camera();
    TsdfVolume vol(Vec3(-0.08, -0.08, 0.35), 0.01, 17, 17, 36, 0.03);
    DepthImage zeros(intr.width, intr.height);
    vol.integrate(zeros, RigidTransform{}, intr);
    for (int k = 0; k < vol.nz(); ++k)
        for (int j = 0; j < vol.ny(); ++j)
            for (int i = 0; i < vol.nx(); ++i) CHECK(vol.weight(i, j, k) == 0.0f);
}

TEST_CASE("tsdf integrate rejects bad input") {
    auto intr = small_camera();
    TsdfVolume vol(Vec3(-0.08, -0.08, 0.35), 0.01, 17, 17, 36, 0.03);
    DepthImage wrong(intr.width + 2, intr.height);
    CHECK_THROWS(vol.integrate(wrong, RigidTransform{}, intr));
    RigidTransform bad;
    bad.rotation(0, 0) = std::numeric_limits<double>::quiet_NaN();
    DepthImage ok(intr.width, intr.height);
    CHECK_THROWS(vol.integrate(ok, bad, intr));
}

TEST_CASE("extract_mesh: analytic sphere oracle") {
    const double radius = 0.2, voxel = 0.005;
    TriangleMesh mesh = extract_mesh(sphere_volume(radius, voxel));
    REQUIRE(mesh.vertices.size() > 1000);
    for (const Vec3& v : mesh.vertices) CHECK(std::abs(v.norm() - radius) < voxel);
    // closed genus-0 surface
    CHECK(euler_characteristic(mesh) == 2);
    // gradient normals point outward
    for (size_t i = 0; i < mesh.vertices.size(); i += 97)
        CHECK(mesh.normals[i].dot(mesh.vertices[i].normalized()) > 0.9);
}

TEST_CASE("extract_mesh: no zero crossing is an error") {
    TsdfVolume vol(Vec3::Zero(), 0.01, 4, 4, 4, 0.04);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 4; ++j)
            for (int i = 0; i < 4; ++i) vol.set(i, j, k, 0.02f, 1.0f);
    CHECK_THROWS(extract_mesh(vol));

    // unobserved volume is a distinct error path
    TsdfVolume empty(Vec3::Zero(), 0.01, 4, 4, 4, 0.04);
    CHECK_THROWS(extract_mesh(empty));
}

TEST_CASE("extract_mesh: fused plane sits at z = 0.5") {
    auto intr = small_camera();
    TsdfVolume vol = plane_volume(intr, 1);
    TriangleMesh mesh = extract_mesh(vol);
    REQUIRE(!mesh.vertices.empty());
    for (const Vec3& v : mesh.vertices) CHECK(std::abs(v.z() - 0.5) <= 0.005);
}

TEST_CASE("extract_mesh: sign flip yields the same surface with flipped normals") {
    TsdfVolume vol = sphere_volume(0.1, 0.01);
    TsdfVolume neg(vol.origin(), vol.voxel_size(), vol.nx(), vol.ny(), vol.nz(),
                   vol.truncation());
    for (int k = 0; k < vol.nz(); ++k)
        for (int j = 0; j < vol.ny(); ++j)
            for (int i = 0; i < vol.nx(); ++i)
                neg.set(i, j, k, -vol.value(i, j, k), vol.weight(i, j, k));

    TriangleMesh a = extract_mesh(vol);
    TriangleMesh b = extract_mesh(neg);
    REQUIRE(a.vertices.size() == b.vertices.size());
    for (size_t i = 0; i < a.vertices.size(); ++i) {
        CHECK((a.vertices[i] - b.vertices[i]).norm() < 1e-12);
        CHECK((a.normals[i] + b.normals[i]).norm() < 1e-9);
    }
}

TEST_CASE("mesh resolution is decoupled from grid resolution") {
    const double voxel = 0.01;
    TriangleMesh mesh = extract_mesh(sphere_volume(0.1, voxel));
    for (double spacing : {2.0 * voxel, 4.0 * voxel}) {
        StaticGrid g = build_static_grid(mesh, spacing, 1);
        auto anchors = bind_mesh(mesh, g);
        CHECK(anchors.size() == mesh.vertices.size());
    }
}

TEST_CASE("select_reference") {
    auto intr = small_camera();
    auto sphere = test::sphere_mesh(0.06, Vec3(0, 0, 0));
    auto cube = test::cube_mesh(0.05, Vec3(0, 0, 0));

    ModelLibrary lib;
    lib.add("sphere", sphere);
    lib.add("cube", cube);

    // observation rendered from the sphere, 1 mm noise
    RigidTransform pose;
    pose.translation = Vec3(0, 0, 0.4);
    DepthImage depth = render_depth(sphere, pose, intr, 0.001, 99);
    Observation obs = make_observation(depth, intr);
    REQUIRE(obs.valid_count > 100);

    CHECK(select_reference(lib, obs) == 0);

    ModelLibrary flipped;
    flipped.add("cube", cube);
    flipped.add("sphere", sphere);
    CHECK(select_reference(flipped, obs) == 1);

    // singleton library: always entry 0
    ModelLibrary single;
    single.add("cube", cube);
    CHECK(select_reference(single, obs) == 0);

    // identical entries: lowest index wins
    ModelLibrary twins;
    twins.add("a", sphere);
    twins.add("b", sphere);
    CHECK(select_reference(twins, obs) == 0);

    // too few observed points
    DepthImage sparse(intr.width, intr.height);
    sparse.set_meters(10, 10, 0.4, intr.depth_scale);
    Observation tiny = make_observation(sparse, intr);
    CHECK_THROWS(select_reference(lib, tiny));
}

TEST_CASE("define_poi") {
    auto mesh = test::cube_mesh(0.5);
    StaticGrid g = build_static_grid(mesh, 0.25, 1);
    std::vector<PoiDefinition> pois;

    Vec3 at_gridpoint = g.position(g.linear_index(1, 1, 1));
    pois.push_back(define_poi("corner", at_gridpoint, g, pois));
    CHECK(*std::max_element(pois[0].anchor.weights.begin(), pois[0].anchor.weights.end()) ==
          doctest::Approx(1.0));

    Vec3 center = g.origin + Vec3(0.375, 0.375, 0.375);
    pois.push_back(define_poi("center", center, g, pois));
    for (double w : pois[1].anchor.weights) CHECK(w == doctest::Approx(0.125));

    Vec3 vertex = mesh.vertices[3];
    pois.push_back(define_poi("vertex", vertex, g, pois));
    CHECK((anchor_rest_position(pois[2].anchor, g) - vertex).norm() < 1e-9);
    CHECK((pois[2].rest_position - vertex).norm() == 0.0);

    CHECK_THROWS(define_poi("corner", center, g, pois));       // duplicate name
    CHECK_THROWS(define_poi("out", Vec3(99, 0, 0), g, pois));  // outside box
}

TEST_CASE("library manifest and poi file io") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "deformtrack_lib_test";
    fs::create_directories(dir);

    save_ply(test::cube_mesh(0.1), (dir / "cube.ply").string());
    {
        std::ofstream m(dir / "lib.json");
        m << R"({"entries": [{"name": "cube", "mesh_path": "cube.ply"}]})";
    }
    ModelLibrary lib = load_library((dir / "lib.json").string());
    REQUIRE(lib.entries.size() == 1);
    CHECK(lib.entries[0].name == "cube");
    CHECK(lib.entries[0].mesh.vertices.size() == 8);

    std::vector<std::pair<std::string, Vec3>> pois = {{"tip", Vec3(0.1, 0.2, 0.3)}};
    save_poi_file(pois, (dir / "pois.json").string());
    auto back = load_poi_file((dir / "pois.json").string());
    REQUIRE(back.size() == 1);
    CHECK(back[0].first == "tip");
    CHECK((back[0].second - Vec3(0.1, 0.2, 0.3)).norm() == 0.0);

    CHECK_THROWS(load_library((dir / "missing.json").string()));
    fs::remove_all(dir);
}

TEST_CASE("tsdf values stay within truncation under random integration") {
    auto intr = small_camera();
    TsdfVolume vol(Vec3(-0.08, -0.08, 0.3), 0.01, 17, 17, 40, 0.025);
    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> depth_dist(0.32, 0.68);
    for (int frame = 0; frame < 5; ++frame) {
        DepthImage img(intr.width, intr.height);
        for (int v = 0; v < intr.height; ++v)
            for (int u = 0; u < intr.width; ++u)
                if (rng() % 4 != 0) img.set_meters(u, v, depth_dist(rng), intr.depth_scale);
        vol.integrate(img, RigidTransform{}, intr);
    }
    for (int k = 0; k < vol.nz(); ++k)
        for (int j = 0; j < vol.ny(); ++j)
            for (int i = 0; i < vol.nx(); ++i)
                CHECK(std::abs(vol.value(i, j, k)) <= vol.truncation() + 1e-6);
}
