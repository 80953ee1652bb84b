// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "deformtrack/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace deformtrack {

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    int width = 0, height = 0;
    double depth_scale = 0.001;  // meters per stored depth unit

    void validate() const {
        require(fx > 0.0 && fy > 0.0, "intrinsics: focal lengths must be positive");
        require(width > 0 && height > 0, "intrinsics: bad image size");
        require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height,
                "intrinsics: principal point outside image");
        require(depth_scale > 0.0, "intrinsics: bad depth scale");
    }
};

struct Pixel {
    int u = 0, v = 0;
};

/// Pinhole projection rounded to the nearest pixel; empty if the point is
/// behind the camera or lands outside the frame.
std::optional<Pixel> project(const Vec3& p, const CameraIntrinsics& intr);

/// Back-projection of pixel (u, v) at depth z (meters) into the camera frame.
Vec3 backproject(int u, int v, double z, const CameraIntrinsics& intr);

/// 16-bit depth frame; value * depth_scale = meters, 0 = invalid.
struct DepthImage {
    int width = 0, height = 0;
    std::vector<uint16_t> values;

    DepthImage() = default;
    DepthImage(int w, int h) : width(w), height(h), values(size_t(w) * h, 0) {}

    uint16_t raw(int u, int v) const { return values[size_t(v) * width + u]; }
    uint16_t& raw(int u, int v) { return values[size_t(v) * width + u]; }

    double meters(int u, int v, double depth_scale) const { return raw(u, v) * depth_scale; }

    void set_meters(int u, int v, double z, double depth_scale) {
        double q = std::round(z / depth_scale);
        raw(u, v) = q <= 0.0 ? 0 : (q >= 65535.0 ? 65535 : static_cast<uint16_t>(q));
    }
};

/// Binary 16-bit grayscale PGM (P5, maxval 65535, big-endian samples).
DepthImage load_pgm16(const std::string& path);
void save_pgm16(const DepthImage& img, const std::string& path);

}  // namespace deformtrack
