// SPDX-License-Identifier: Apache-2.0

#include "deformtrack/camera.hpp"

#include <cmath>
#include <fstream>

namespace deformtrack {

std::optional<Pixel> project(const Vec3& p, const CameraIntrinsics& intr) {
    if (!(p.z() > 0.0)) return std::nullopt;
    double u = intr.fx * p.x() / p.z() + intr.cx;
    double v = intr.fy * p.y() / p.z() + intr.cy;
    int ui = static_cast<int>(std::lround(u));
    int vi = static_cast<int>(std::lround(v));
    if (ui < 0 || ui >= intr.width || vi < 0 || vi >= intr.height) return std::nullopt;
    return Pixel{ui, vi};
}

Vec3 backproject(int u, int v, double z, const CameraIntrinsics& intr) {
    return {(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z};
}

DepthImage load_pgm16(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open depth frame: " + path);

    auto next_token = [&in, &path]() {
        std::string tok;
        for (;;) {
            int c = in.get();
            if (c == EOF) throw std::runtime_error("truncated depth frame header: " + path);
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(c)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(c));
        }
    };

    if (next_token() != "P5") throw std::runtime_error("not a binary PGM: " + path);
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (w <= 0 || h <= 0) throw std::runtime_error("bad PGM dimensions: " + path);
    if (maxval != 65535) throw std::runtime_error("depth frames must be 16-bit PGM: " + path);

    DepthImage img(w, h);
    std::vector<unsigned char> buf(size_t(w) * h * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("truncated depth frame data: " + path);
    for (size_t i = 0; i < img.values.size(); ++i)
        img.values[i] = static_cast<uint16_t>((buf[2 * i] << 8) | buf[2 * i + 1]);
    return img;
}

void save_pgm16(const DepthImage& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write depth frame: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n65535\n";
    std::vector<unsigned char> buf(img.values.size() * 2);
    for (size_t i = 0; i < img.values.size(); ++i) {
        buf[2 * i] = static_cast<unsigned char>(img.values[i] >> 8);
        buf[2 * i + 1] = static_cast<unsigned char>(img.values[i] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace deformtrack
