// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/registration.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <random>

namespace deformtrack {

RigidTransform fit_rigid(const std::vector<Vec3>& source, const std::vector<Vec3>& target) {
    require(source.size() == target.size() && source.size() >= 3,
            "fit_rigid: need at least 3 point pairs");
    Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
    for (size_t i = 0; i < source.size(); ++i) {
        cs += source[i];
        ct += target[i];
    }
    cs /= static_cast<double>(source.size());
    ct /= static_cast<double>(target.size());

    Mat3 h = Mat3::Zero();
    for (size_t i = 0; i < source.size(); ++i)
        h += (source[i] - cs) * (target[i] - ct).transpose();

    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    Mat3 r = v * u.transpose();
    if (r.determinant() < 0.0) {
        u.col(2) *= -1.0;
        r = v * u.transpose();
    }
    RigidTransform t;
    t.rotation = r;
    t.translation = ct - r * cs;
    return t;
}

RegistrationResult fixed_registration(const std::vector<Vec3>& model_keypoints,
                                      const std::vector<Vec3>& observed_keypoints,
                                      const std::vector<FeatureMatch>& matches,
                                      const RansacConfig& cfg) {
    const int n = static_cast<int>(matches.size());
    if (n < 3) throw std::runtime_error("fixed_registration: fewer than 3 matches");
    require(cfg.similarity_threshold > 0.0 && cfg.similarity_threshold <= 1.0,
            "fixed_registration: bad similarity threshold");
    require(cfg.inlier_distance > 0.0, "fixed_registration: bad inlier distance");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> pick(0, n - 1);

    const double inlier_d2 = cfg.inlier_distance * cfg.inlier_distance;
    int best_count = -1;
    RigidTransform best_pose;
    int max_iters = cfg.max_iterations;
    int iter = 0;

    std::vector<Vec3> src(3), dst(3);
    for (; iter < max_iters; ++iter) {
        int a = pick(rng), b = pick(rng), c = pick(rng);
        if (a == b || b == c || a == c) continue;

        const Vec3& ma = model_keypoints[matches[a].model_index];
        const Vec3& mb = model_keypoints[matches[b].model_index];
        const Vec3& mc = model_keypoints[matches[c].model_index];
        const Vec3& oa = observed_keypoints[matches[a].obs_index];
        const Vec3& ob = observed_keypoints[matches[b].obs_index];
        const Vec3& oc = observed_keypoints[matches[c].obs_index];

        // polygonal prerejection: corresponding triangle sides must agree
        auto similar = [&](const Vec3& p, const Vec3& q, const Vec3& r, const Vec3& s) {
            double dm = (p - q).norm(), dobs = (r - s).norm();
            double lo = std::min(dm, dobs), hi = std::max(dm, dobs);
            return hi > 0.0 && lo / hi >= cfg.similarity_threshold;
        };
        if (!similar(ma, mb, oa, ob) || !similar(mb, mc, ob, oc) || !similar(ma, mc, oa, oc))
            continue;
        // degenerate sample
        if ((mb - ma).cross(mc - ma).squaredNorm() < 1e-20) continue;

        src = {ma, mb, mc};
        dst = {oa, ob, oc};
        RigidTransform pose = fit_rigid(src, dst);

        int count = 0;
        for (const FeatureMatch& m : matches) {
            Vec3 mapped = pose(model_keypoints[m.model_index]);
            if ((mapped - observed_keypoints[m.obs_index]).squaredNorm() < inlier_d2) ++count;
        }
        if (count > best_count) {
            best_count = count;
            best_pose = pose;
            // adaptive iteration bound from the current inlier ratio
            double w = static_cast<double>(count) / n;
            double p_sample = w * w * w;
            if (p_sample > 0.0 && p_sample < 1.0) {
                double need = std::log(1.0 - cfg.confidence) / std::log(1.0 - p_sample);
                max_iters = std::min(max_iters,
                                     iter + 1 + static_cast<int>(std::ceil(need)));
            } else if (p_sample >= 1.0) {
                max_iters = iter + 1;
            }
        }
    }

    int min_inliers = std::max(3, static_cast<int>(std::ceil(cfg.min_inlier_fraction * n)));
    if (best_count < min_inliers)
        throw std::runtime_error("fixed_registration: consensus too small (" +
                                 std::to_string(std::max(best_count, 0)) + "/" +
                                 std::to_string(n) + " inliers, need " +
                                 std::to_string(min_inliers) + ")");

    // refine over the consensus set
    RegistrationResult result;
    std::vector<Vec3> s, d;
    for (int i = 0; i < n; ++i) {
        Vec3 mapped = best_pose(model_keypoints[matches[i].model_index]);
        if ((mapped - observed_keypoints[matches[i].obs_index]).squaredNorm() < inlier_d2) {
            result.inliers.push_back(i);
            s.push_back(model_keypoints[matches[i].model_index]);
            d.push_back(observed_keypoints[matches[i].obs_index]);
        }
    }
    result.transform = fit_rigid(s, d);
    result.iterations = iter;
    return result;
}

}  // namespace deformtrack
