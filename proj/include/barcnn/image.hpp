#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "barcnn/error.hpp"
#include "barcnn/numerics.hpp"

namespace barcnn {

/// RGB raster, row-major [H, W, 3], values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * 3, fill) {}

    double& at(std::size_t row, std::size_t col, std::size_t channel) {
        return pixels[(row * width + col) * 3 + channel];
    }
    double at(std::size_t row, std::size_t col, std::size_t channel) const {
        return pixels[(row * width + col) * 3 + channel];
    }

    nn::DiffArray as_array() const { return nn::DiffArray::constant({height, width, 3}, pixels); }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Writes a binary (P6) portable pixmap with 8-bit channels.
inline void write_ppm(const std::string& path, const Image& image) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write image " + path);
    os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    for (double v : image.pixels) {
        const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        os.put(static_cast<char>(static_cast<std::uint8_t>(q)));
    }
}

inline Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot read image " + path);
    std::string magic;
    std::size_t w = 0, h = 0;
    int maxval = 0;
    if (!(is >> magic >> w >> h >> maxval) || magic != "P6" || maxval != 255 || w == 0 || h == 0) {
        throw ParseError(path + ": expected an 8-bit binary P6 pixmap");
    }
    is.get();
    Image image(h, w);
    for (auto& v : image.pixels) {
        const int c = is.get();
        if (c == EOF) throw ParseError(path + ": truncated pixel data");
        v = static_cast<double>(static_cast<std::uint8_t>(c)) / 255.0;
    }
    return image;
}

}  // namespace barcnn
