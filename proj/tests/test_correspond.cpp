// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deformtrack/correspond.hpp"
#include "deformtrack/registration.hpp"
#include "deformtrack/render.hpp"
#include "deformtrack/shot.hpp"
#include "helpers.hpp"

#include <random>

using namespace deformtrack;

namespace {

CameraIntrinsics test_camera() {
    CameraIntrinsics intr;
    intr.fx = intr.fy = 400.0;
    intr.cx = 159.5;
    intr.cy = 119.5;
    intr.width = 320;
    intr.height = 240;
    intr.depth_scale = 0.00025;
    return intr;
}

// irregular blob: sphere with smooth radial modulation, so local frames are
// well conditioned everywhere
TriangleMesh blob_mesh(double radius = 0.08) {
    TriangleMesh sphere = test::sphere_mesh(1.0, Vec3::Zero(), 28, 56);
    std::vector<Vec3> verts = sphere.vertices;
    for (Vec3& v : verts) {
        Vec3 d = v.normalized();
        double r = radius * (1.0 + 0.25 * std::sin(3.0 * d.x() * M_PI) * std::cos(2.0 * d.y() * M_PI) +
                             0.2 * std::sin(4.0 * d.z() * M_PI));
        v = r * d;
    }
    return TriangleMesh(std::move(verts), sphere.triangles);
}

}  // namespace

TEST_CASE("project: principal ray, behind camera, off-axis") {
    CameraIntrinsics intr;
    intr.fx = intr.fy = 500.0;
    intr.cx = 320.0;
    intr.cy = 240.0;
    intr.width = 640;
    intr.height = 480;

    auto center = project(Vec3(0, 0, 1), intr);
    REQUIRE(center.has_value());
    CHECK(center->u == 320);
    CHECK(center->v == 240);

    CHECK(!project(Vec3(0, 0, -1), intr).has_value());
    CHECK(!project(Vec3(0, 0, 0), intr).has_value());
    CHECK(!project(Vec3(10, 0, 1), intr).has_value());  // outside frame

    auto off = project(Vec3(0.1, 0, 1), intr);
    REQUIRE(off.has_value());
    CHECK(off->u == 370);  // u = fx*x/z + cx
    CHECK(off->v == 240);
}

TEST_CASE("make_observation: analytic plane") {
    auto intr = test_camera();
    DepthImage img(intr.width, intr.height);
    for (int v = 0; v < intr.height; ++v)
        for (int u = 0; u < intr.width; ++u) img.set_meters(u, v, 0.5, intr.depth_scale);
    Observation obs = make_observation(img, intr);
    CHECK(obs.valid_count == intr.width * intr.height);

    int checked = 0;
    for (int v = 1; v < intr.height - 1; ++v)
        for (int u = 1; u < intr.width - 1; ++u) {
            REQUIRE(obs.has_normal(u, v));
            CHECK((obs.normal(u, v) - Vec3(0, 0, -1)).norm() < 1e-3);
            ++checked;
        }
    CHECK(checked > 0);

    // principal pixel back-projects onto the optical axis
    int cu = static_cast<int>(std::lround(intr.cx)), cv = static_cast<int>(std::lround(intr.cy));
    Vec3 p = obs.point(cu, cv);
    CHECK(std::abs(p.x()) < 0.5 / intr.fx + 1e-9);
    CHECK(std::abs(p.y()) < 0.5 / intr.fy + 1e-9);
    CHECK(p.z() == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("make_observation: empty frame and size mismatch") {
    auto intr = test_camera();
    DepthImage zeros(intr.width, intr.height);
    Observation obs = make_observation(zeros, intr);
    CHECK(obs.valid_count == 0);

    DepthImage wrong(intr.width - 1, intr.height);
    CHECK_THROWS(make_observation(wrong, intr));
}

TEST_CASE("correspondence_weight formula") {
    WeightCaps caps;
    caps.d_max = 0.05;
    caps.n_max = 1.0;

    CHECK(correspondence_weight(0, 0, 0, caps) == doctest::Approx(1.0));
    CHECK(correspondence_weight(0.05, 1.0, M_PI / 2, caps) == doctest::Approx(0.0));
    CHECK(correspondence_weight(0.2, 1.7, M_PI / 2, caps) == doctest::Approx(0.0));
    // sub-weights (1, 1, 0.5): ((2.5)/3)^2
    CHECK(correspondence_weight(0.0, 0.0, M_PI / 3, caps) ==
          doctest::Approx(2.5 * 2.5 / 9.0).epsilon(1e-12));
    CHECK_THROWS(correspondence_weight(std::nan(""), 0, 0, caps));
}

TEST_CASE("correspondence_weight is monotone non-increasing, range [0,1]") {
    WeightCaps caps;
    caps.d_max = 0.04;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ud(0.0, 0.08), un(0.0, 2.0), uv(0.0, M_PI);
    for (int k = 0; k < 500; ++k) {
        double d = ud(rng), n = un(rng), v = uv(rng);
        double w = correspondence_weight(d, n, v, caps);
        CHECK(w >= 0.0);
        CHECK(w <= 1.0);
        CHECK(correspondence_weight(d * 1.2 + 1e-4, n, v, caps) <= w + 1e-12);
        CHECK(correspondence_weight(d, std::min(2.0, n + 0.1), v, caps) <= w + 1e-12);
        CHECK(correspondence_weight(d, n, std::min(M_PI, v + 0.1), caps) <= w + 1e-12);
    }
}

TEST_CASE("find_projective: self-correspondence and view-axis shift") {
    auto intr = test_camera();
    TriangleMesh mesh = blob_mesh();
    RigidTransform pose;
    pose.translation = Vec3(0, 0, 0.45);

    DepthImage depth = render_depth(mesh, pose, intr, 0.0, 0);
    Observation obs = make_observation(depth, intr);
    REQUIRE(obs.valid_count > 2000);

    StaticGrid grid = build_static_grid(mesh, 0.04, 1);
    auto anchors = bind_mesh(mesh, grid);
    DeformationState state = DeformationState::rest(grid);
    state.global = pose;

    WeightCaps caps;
    caps.d_max = 0.08;

    auto corrs = find_projective(anchors, mesh.normals, grid, state, obs, caps);
    REQUIRE(corrs.size() > mesh.vertices.size() / 4);

    // back-facing vertices survive with tiny weights; judge what the energy
    // sees, the weighted residual
    auto weighted_residual = [](const std::vector<Correspondence>& cs) {
        double num = 0.0, den = 0.0;
        for (const auto& c : cs) {
            num += c.weight * (c.model_point - c.observed_point).norm();
            den += c.weight;
        }
        return num / den;
    };
    CHECK(weighted_residual(corrs) < 0.002);  // pixel quantization scale
    int confident = 0;
    for (const auto& c : corrs) confident += c.weight > 0.5 ? 1 : 0;
    CHECK(confident > static_cast<int>(mesh.vertices.size() / 5));

    // shift the model 5 mm along the view axis
    DeformationState shifted = state;
    shifted.global.translation += Vec3(0, 0, 0.005);
    auto corrs2 = find_projective(anchors, mesh.normals, grid, shifted, obs, caps);
    REQUIRE(!corrs2.empty());
    double res2 = weighted_residual(corrs2);
    CHECK(res2 > 0.003);
    CHECK(res2 < 0.008);

    // push the model far off-frame: vertices project outside, few or no links
    DeformationState off = state;
    off.global.translation += Vec3(1.0, 0, 0);
    auto corrs3 = find_projective(anchors, mesh.normals, grid, off, obs, caps);
    CHECK(corrs3.size() < corrs.size() / 10);
}

TEST_CASE("subsample_keypoints is deterministic and spread") {
    std::mt19937_64 rng(5);
    std::vector<Vec3> pts;
    for (int k = 0; k < 2000; ++k) pts.push_back(test::random_vec(rng, 0.1));
    auto a = subsample_keypoints(pts, 0.03);
    auto b = subsample_keypoints(pts, 0.03);
    CHECK(a == b);
    CHECK(a.size() > 10);
    CHECK(a.size() < pts.size());
    for (size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1] < a[i]);
}

TEST_CASE("compute_shot: degenerate support is invalid, computation deterministic") {
    std::vector<Vec3> lone = {Vec3(0, 0, 0)};
    std::vector<Vec3> lone_n = {Vec3(0, 0, 1)};
    auto descs = compute_shot(lone, lone_n, {0}, 0.05);
    REQUIRE(descs.size() == 1);
    CHECK(!descs[0].valid);
    double sum = 0.0;
    for (double b : descs[0].bins) sum += std::abs(b);
    CHECK(sum == 0.0);

    TriangleMesh mesh = blob_mesh();
    auto keys = subsample_keypoints(mesh.vertices, 0.03);
    auto d1 = compute_shot(mesh.vertices, mesh.normals, keys, 0.04);
    auto d2 = compute_shot(mesh.vertices, mesh.normals, keys, 0.04);
    REQUIRE(d1.size() == d2.size());
    for (size_t k = 0; k < d1.size(); ++k) {
        CHECK(d1[k].valid == d2[k].valid);
        for (int i = 0; i < ShotDescriptor::kSize; ++i) CHECK(d1[k].bins[i] == d2[k].bins[i]);
    }
    // unit norm and non-negative bins
    for (const auto& d : d1) {
        if (!d.valid) continue;
        double norm = 0.0;
        for (double b : d.bins) {
            CHECK(b >= 0.0);
            norm += b * b;
        }
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("compute_shot: rotation invariance") {
    TriangleMesh mesh = blob_mesh();
    auto keys = subsample_keypoints(mesh.vertices, 0.025);
    REQUIRE(keys.size() >= 20);
    const double radius = 0.04;

    auto base = compute_shot(mesh.vertices, mesh.normals, keys, radius);

    std::mt19937_64 rng(31);
    Mat3 rot = test::random_rotation(rng);
    std::vector<Vec3> rpts(mesh.vertices.size()), rnrm(mesh.vertices.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        rpts[i] = rot * mesh.vertices[i];
        rnrm[i] = rot * mesh.normals[i];
    }
    auto rotated = compute_shot(rpts, rnrm, keys, radius);

    int good = 0, valid = 0;
    for (size_t k = 0; k < keys.size(); ++k) {
        if (!base[k].valid || !rotated[k].valid) continue;
        ++valid;
        if (base[k].distance(rotated[k]) < 0.1) ++good;
    }
    REQUIRE(valid >= 20);
    CHECK(static_cast<double>(good) / valid >= 0.9);
}

TEST_CASE("match_features: identity, random baseline, rotated clouds") {
    TriangleMesh mesh = blob_mesh();
    auto keys = subsample_keypoints(mesh.vertices, 0.025);
    auto descs = compute_shot(mesh.vertices, mesh.normals, keys, 0.04);

    // identical sets match identically
    auto self_matches = match_features(descs, descs, 0.8);
    int valid = 0;
    for (const auto& d : descs) valid += d.valid ? 1 : 0;
    CHECK(static_cast<int>(self_matches.size()) >= valid * 9 / 10);
    for (const auto& m : self_matches) {
        CHECK(m.model_index == m.obs_index);
        CHECK(m.distance == doctest::Approx(0.0));
    }

    // random unit descriptors rarely pass the ratio test
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto random_descs = [&](int n) {
        std::vector<ShotDescriptor> out(n);
        for (auto& d : out) {
            double norm = 0.0;
            for (auto& b : d.bins) {
                b = u(rng);
                norm += b * b;
            }
            for (auto& b : d.bins) b /= std::sqrt(norm);
            d.valid = true;
        }
        return out;
    };
    auto ra = random_descs(120), rb = random_descs(120);
    auto spurious = match_features(ra, rb, 0.8);
    CHECK(spurious.size() < 6);  // < 5%

    // rotated copy: matches recover the ground-truth index map
    Mat3 rot = test::random_rotation(rng);
    std::vector<Vec3> rpts(mesh.vertices.size()), rnrm(mesh.vertices.size());
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        rpts[i] = rot * mesh.vertices[i];
        rnrm[i] = rot * mesh.normals[i];
    }
    auto rdescs = compute_shot(rpts, rnrm, keys, 0.04);
    auto matches = match_features(descs, rdescs, 0.8);
    REQUIRE(matches.size() >= 10);
    int correct = 0;
    for (const auto& m : matches) correct += (m.model_index == m.obs_index) ? 1 : 0;
    CHECK(static_cast<double>(correct) / matches.size() >= 0.9);
}

TEST_CASE("fixed_registration: noiseless consensus recovers the transform") {
    std::mt19937_64 rng(13);
    std::vector<Vec3> model;
    for (int k = 0; k < 40; ++k) model.push_back(test::random_vec(rng, 0.1));
    RigidTransform truth;
    truth.rotation = test::random_rotation(rng);
    truth.translation = test::random_vec(rng, 0.2);

    std::vector<Vec3> obs(model.size());
    std::vector<FeatureMatch> matches;
    for (size_t k = 0; k < model.size(); ++k) {
        obs[k] = truth(model[k]);
        matches.push_back({static_cast<int>(k), static_cast<int>(k), 0.0});
    }

    RansacConfig cfg;
    cfg.inlier_distance = 0.005;
    cfg.seed = 3;
    auto result = fixed_registration(model, obs, matches, cfg);
    CHECK(rotation_angle_between(result.transform.rotation, truth.rotation) < 1e-6);
    CHECK((result.transform.translation - truth.translation).norm() < 1e-6);
    CHECK(result.transform.is_valid(1e-9));
    CHECK(result.inliers.size() == matches.size());
}

TEST_CASE("fixed_registration: outliers and noise") {
    std::mt19937_64 rng(29);
    int ok = 0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
        std::vector<Vec3> model;
        for (int k = 0; k < 60; ++k) model.push_back(test::random_vec(rng, 0.12));
        RigidTransform truth;
        truth.rotation = test::random_rotation(rng);
        truth.translation = test::random_vec(rng, 0.15);

        std::normal_distribution<double> noise(0.0, 0.001);
        std::vector<Vec3> obs(model.size());
        std::vector<FeatureMatch> matches;
        for (size_t k = 0; k < model.size(); ++k) {
            if (k % 2 == 0) {
                obs[k] = truth(model[k]) + Vec3(noise(rng), noise(rng), noise(rng));
            } else {
                obs[k] = test::random_vec(rng, 0.2);  // 50% outliers
            }
            matches.push_back({static_cast<int>(k), static_cast<int>(k), 0.0});
        }

        RansacConfig cfg;
        cfg.inlier_distance = 0.006;
        cfg.seed = 1000 + trial;
        try {
            auto result = fixed_registration(model, obs, matches, cfg);
            bool good = rotation_angle_between(result.transform.rotation, truth.rotation) <
                            1.0 * M_PI / 180.0 &&
                        (result.transform.translation - truth.translation).norm() < 0.003;
            ok += good ? 1 : 0;
        } catch (const std::exception&) {
        }
    }
    CHECK(ok >= trials - 1);
}

TEST_CASE("fixed_registration: under-determined input") {
    std::vector<Vec3> pts = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
    std::vector<FeatureMatch> two = {{0, 0, 0.0}, {1, 1, 0.0}};
    RansacConfig cfg;
    cfg.inlier_distance = 0.01;
    CHECK_THROWS(fixed_registration(pts, pts, two, cfg));
}
