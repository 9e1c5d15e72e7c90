#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "barcnn/geometry.hpp"
#include "barcnn/numerics.hpp"

namespace barcnn {

/// Three-channel binary raster describing the conditioning subject.
///   channel 0: 1 inside the subject box, 0 elsewhere (all zeros when empty)
///   channel 1: all ones iff the map is empty
///   channel 2: all ones iff the map holds a box
class AttentionMap {
public:
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    const std::optional<Box>& source_box() const { return source_box_; }
    bool empty() const { return !source_box_.has_value(); }

    /// Row-major [H, W, 3] values.
    const std::vector<double>& raster() const { return raster_; }
    double at(std::size_t row, std::size_t col, std::size_t channel) const {
        return raster_[(row * width_ + col) * 3 + channel];
    }

    nn::DiffArray as_array() const { return nn::DiffArray::constant({height_, width_, 3}, raster_); }

    friend AttentionMap encode(const std::optional<Box>& box, std::size_t height, std::size_t width);

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::optional<Box> source_box_;
    std::vector<double> raster_;
};

/// Pixel (r, c) lies inside `box` iff its center ((c+0.5)/W, (r+0.5)/H) falls
/// in the half-open rectangle [x_min, x_max) x [y_min, y_max).
inline bool pixel_inside(const Box& box, std::size_t row, std::size_t col, std::size_t height,
                         std::size_t width) {
    const double cy = (static_cast<double>(row) + 0.5) / static_cast<double>(height);
    const double cx = (static_cast<double>(col) + 0.5) / static_cast<double>(width);
    return cx >= box.x_min() && cx < box.x_max() && cy >= box.y_min() && cy < box.y_max();
}

inline AttentionMap encode(const std::optional<Box>& box, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ShapeError("encode: image size must be positive");
    AttentionMap m;
    m.height_ = height;
    m.width_ = width;
    m.source_box_ = box;
    m.raster_.assign(height * width * 3, 0.0);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            double* px = &m.raster_[(r * width + c) * 3];
            if (box) {
                px[0] = pixel_inside(*box, r, c, height, width) ? 1.0 : 0.0;
                px[2] = 1.0;
            } else {
                px[1] = 1.0;
            }
        }
    }
    return m;
}

/// Learnable 3x3 convolution that maps the resized attention raster onto the
/// K channels of a host feature map. Starts at exactly zero.
struct ConditioningSite {
    nn::Parameter kernel;

    ConditioningSite(std::string name, std::size_t channels)
        : kernel(std::move(name), {3, 3, 3, channels}, std::vector<double>(27 * channels, 0.0)) {}

    std::size_t channels() const { return kernel.array.dim(3); }
};

/// u + conv3x3(resize_nearest(m, H, W)).
inline nn::DiffArray condition(const nn::DiffArray& u, const AttentionMap& m, const ConditioningSite& site) {
    if (u.rank() != 3 || u.dim(2) != site.channels()) {
        throw ShapeError("condition: feature map " + nn::to_string(u.shape()) + " does not match site with " +
                         std::to_string(site.channels()) + " channels");
    }
    const auto resized = nn::resize_nearest(m.as_array(), u.dim(0), u.dim(1));
    return nn::add(u, nn::conv2d(resized, site.kernel.array, 1, nn::Padding::same));
}

}  // namespace barcnn
