// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/shot.hpp"

#include "deformtrack/spatial_grid.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace deformtrack {

double ShotDescriptor::distance(const ShotDescriptor& other) const {
    double s = 0.0;
    for (int i = 0; i < kSize; ++i) {
        double d = bins[i] - other.bins[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<int> subsample_keypoints(const std::vector<Vec3>& points, double spacing) {
    require(spacing > 0.0, "subsample: spacing must be positive");
    struct Pick {
        int index = -1;
        double d2 = std::numeric_limits<double>::infinity();
    };
    std::map<std::array<int, 3>, Pick> cells;  // ordered: deterministic iteration
    for (int i = 0; i < static_cast<int>(points.size()); ++i) {
        std::array<int, 3> c;
        Vec3 center;
        for (int a = 0; a < 3; ++a) {
            c[a] = static_cast<int>(std::floor(points[i][a] / spacing));
            center[a] = (c[a] + 0.5) * spacing;
        }
        double d2 = (points[i] - center).squaredNorm();
        Pick& p = cells[c];
        if (d2 < p.d2 || (d2 == p.d2 && i < p.index)) p = {i, d2};
    }
    std::vector<int> out;
    out.reserve(cells.size());
    for (const auto& [c, p] : cells) out.push_back(p.index);
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct LocalFrame {
    Vec3 x, y, z;
    bool ok = false;
};

LocalFrame reference_frame(const Vec3& p, const std::vector<Vec3>& points,
                           const std::vector<int>& support, double radius) {
    LocalFrame f;
    if (support.size() < 4) return f;  // need genuine 3D structure

    double wsum = 0.0;
    Mat3 cov = Mat3::Zero();
    for (int j : support) {
        Vec3 d = points[j] - p;
        double w = radius - d.norm();
        if (w <= 0.0) continue;
        cov += w * d * d.transpose();
        wsum += w;
    }
    if (wsum <= 0.0) return f;
    cov /= wsum;

    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    if (eig.info() != Eigen::Success) return f;
    // eigenvalues ascend: largest spread -> x, smallest -> z
    Vec3 x = eig.eigenvectors().col(2);
    Vec3 z = eig.eigenvectors().col(0);

    auto disambiguate = [&](Vec3& axis) {
        int plus = 0, minus = 0;
        double proj_sum = 0.0;
        for (int j : support) {
            double s = (points[j] - p).dot(axis);
            proj_sum += s;
            if (s >= 0.0) ++plus;
            else ++minus;
        }
        if (minus > plus || (minus == plus && proj_sum < 0.0)) axis = -axis;
    };
    disambiguate(x);
    disambiguate(z);

    f.x = x;
    f.z = z;
    f.y = z.cross(x);
    f.ok = true;
    return f;
}

}  // namespace

std::vector<ShotDescriptor> compute_shot(const std::vector<Vec3>& points,
                                         const std::vector<Vec3>& normals,
                                         const std::vector<int>& keypoints, double radius) {
    require(radius > 0.0, "shot: radius must be positive");
    require(points.size() == normals.size(), "shot: point/normal count mismatch");

    SpatialGrid grid(points, radius);
    std::vector<ShotDescriptor> descs(keypoints.size());

#pragma omp parallel for schedule(dynamic, 8)
    for (int k = 0; k < static_cast<int>(keypoints.size()); ++k) {
        ShotDescriptor& desc = descs[k];
        desc.support_radius = radius;
        const Vec3& p = points[keypoints[k]];

        std::vector<int> support;
        for (int j : grid.radius_search(p, radius))
            if ((points[j] - p).squaredNorm() > 1e-24) support.push_back(j);
        LocalFrame frame = reference_frame(p, points, support, radius);
        if (!frame.ok) continue;  // stays all-zero, invalid

        constexpr int kAz = ShotDescriptor::kAzimuthBins;
        constexpr int kEl = ShotDescriptor::kElevationBins;
        constexpr int kRad = ShotDescriptor::kRadialBins;
        constexpr int kCos = ShotDescriptor::kCosineBins;

        // soft-bin one coordinate: primary bin plus a fraction to a neighbor
        struct BinW {
            int bin[2];
            double w[2];
            int n;
        };
        auto soft = [](double u, int nbins, bool wrap) {
            BinW b{};
            double lo = std::floor(u);
            int i0 = static_cast<int>(lo);
            double f = u - lo;
            int i1 = i0 + 1;
            if (wrap) {
                i0 = ((i0 % nbins) + nbins) % nbins;
                i1 = (i0 + 1) % nbins;
            }
            b.n = 0;
            if (i0 >= 0 && i0 < nbins) {
                b.bin[b.n] = i0;
                b.w[b.n++] = 1.0 - f;
            }
            if (i1 >= 0 && i1 < nbins && 1.0 - f < 1.0) {
                b.bin[b.n] = i1;
                b.w[b.n++] = f;
            }
            return b;
        };

        for (int j : support) {
            Vec3 d = points[j] - p;
            double dist = d.norm();
            double lx = d.dot(frame.x), ly = d.dot(frame.y), lz = d.dot(frame.z);

            double az = std::atan2(ly, lx);  // (-pi, pi]
            double ua = (az + M_PI) / (2.0 * M_PI) * kAz - 0.5;
            double ue = (lz / dist + 1.0) / 2.0 * kEl - 0.5;
            double ur = dist / radius * kRad - 0.5;
            double c = std::clamp(normals[j].dot(frame.z), -1.0, 1.0);
            double uc = (c + 1.0) / 2.0 * kCos - 0.5;

            BinW ba = soft(ua, kAz, true);
            BinW be = soft(ue, kEl, false);
            BinW br = soft(ur, kRad, false);
            BinW bc = soft(uc, kCos, false);

            for (int ia = 0; ia < ba.n; ++ia)
                for (int ie = 0; ie < be.n; ++ie)
                    for (int ir = 0; ir < br.n; ++ir)
                        for (int ic = 0; ic < bc.n; ++ic) {
                            int spatial = ba.bin[ia] + kAz * (be.bin[ie] + kEl * br.bin[ir]);
                            desc.bins[spatial * kCos + bc.bin[ic]] +=
                                ba.w[ia] * be.w[ie] * br.w[ir] * bc.w[ic];
                        }
        }

        double norm = 0.0;
        for (double b : desc.bins) norm += b * b;
        if (norm <= 0.0) continue;
        norm = std::sqrt(norm);
        for (double& b : desc.bins) b /= norm;
        desc.valid = true;
    }
    return descs;
}

std::vector<FeatureMatch> match_features(const std::vector<ShotDescriptor>& model,
                                         const std::vector<ShotDescriptor>& observed,
                                         double ratio) {
    require(ratio > 0.0 && ratio <= 1.0, "match: ratio must be in (0, 1]");

    auto best_two = [](const ShotDescriptor& q, const std::vector<ShotDescriptor>& set, int& best,
                       double& d1, double& d2) {
        best = -1;
        d1 = d2 = std::numeric_limits<double>::infinity();
        for (int i = 0; i < static_cast<int>(set.size()); ++i) {
            if (!set[i].valid) continue;
            double d = q.distance(set[i]);
            if (d < d1) {
                d2 = d1;
                d1 = d;
                best = i;
            } else if (d < d2) {
                d2 = d;
            }
        }
    };

    // reverse best for the cross-check
    std::vector<int> reverse_best(observed.size(), -1);
    for (int o = 0; o < static_cast<int>(observed.size()); ++o) {
        if (!observed[o].valid) continue;
        int b;
        double d1, d2;
        best_two(observed[o], model, b, d1, d2);
        reverse_best[o] = b;
    }

    std::vector<FeatureMatch> out;
    for (int m = 0; m < static_cast<int>(model.size()); ++m) {
        if (!model[m].valid) continue;
        int b;
        double d1, d2;
        best_two(model[m], observed, b, d1, d2);
        if (b < 0) continue;
        if (std::isfinite(d2) && !(d1 < ratio * d2)) continue;
        if (reverse_best[b] != m) continue;
        out.push_back({m, b, d1});
    }
    return out;
}

}  // namespace deformtrack
