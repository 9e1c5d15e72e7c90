#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <tuple>
#include <vector>

#include "barcnn/error.hpp"

namespace barcnn {

/// Axis-aligned box in normalized image coordinates. Always has strictly
/// positive area and lies inside [0,1]^2.
class Box {
public:
    Box(double x_min, double y_min, double x_max, double y_max)
        : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
        if (!is_valid(x_min, y_min, x_max, y_max)) {
            std::ostringstream os;
            os << "invalid box [" << x_min << ", " << y_min << ", " << x_max << ", " << y_max << "]";
            throw Error(os.str());
        }
    }

    static bool is_valid(double x_min, double y_min, double x_max, double y_max) {
        auto in_unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
        return in_unit(x_min) && in_unit(y_min) && in_unit(x_max) && in_unit(y_max) &&
               x_min < x_max && y_min < y_max;
    }

    /// Returns nullopt instead of throwing for degenerate coordinates.
    static std::optional<Box> try_make(double x_min, double y_min, double x_max, double y_max) {
        if (!is_valid(x_min, y_min, x_max, y_max)) return std::nullopt;
        return Box(x_min, y_min, x_max, y_max);
    }

    double x_min() const { return x_min_; }
    double y_min() const { return y_min_; }
    double x_max() const { return x_max_; }
    double y_max() const { return y_max_; }
    double width() const { return x_max_ - x_min_; }
    double height() const { return y_max_ - y_min_; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min_ + x_max_); }
    double center_y() const { return 0.5 * (y_min_ + y_max_); }

    bool contains(const Box& other) const {
        return x_min_ <= other.x_min_ && y_min_ <= other.y_min_ && other.x_max_ <= x_max_ &&
               other.y_max_ <= y_max_;
    }

    friend bool operator==(const Box&, const Box&) = default;

private:
    double x_min_;
    double y_min_;
    double x_max_;
    double y_max_;
};

/// Reserved object label for relationship targets that are not visible in the
/// image. Such objects carry the subject's own box.
inline constexpr int kNotVisibleLabel = -1;

/// A scored, labelled box.
struct Detection {
    Box box;
    int label = 0;
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
    const double w = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
    const double h = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

inline double iou(const Box& a, const Box& b) {
    if (a == b) return 1.0;
    const double inter = intersection_area(a, b);
    if (inter == 0.0) return 0.0;
    return inter / (a.area() + b.area() - inter);
}

/// Boxes share a region of positive area.
inline bool overlaps(const Box& a, const Box& b) { return intersection_area(a, b) > 0.0; }

inline Box enclosing_box(const Box& a, const Box& b) {
    return Box(std::min(a.x_min(), b.x_min()), std::min(a.y_min(), b.y_min()),
               std::max(a.x_max(), b.x_max()), std::max(a.y_max(), b.y_max()));
}

/// Total order used wherever detections are ranked: score descending, then
/// (label, x_min, y_min, x_max, y_max) ascending.
inline bool ranks_before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tuple(a.label, a.box.x_min(), a.box.y_min(), a.box.x_max(), a.box.y_max()) <
           std::tuple(b.label, b.box.x_min(), b.box.y_min(), b.box.x_max(), b.box.y_max());
}

/// Greedy class-wise non-maximum suppression returning the indices of the
/// surviving detections in output order. A detection survives iff its IoU
/// with every kept detection of the same label is below the threshold.
inline std::vector<std::size_t> nms_indices(std::span<const Detection> detections, double iou_threshold) {
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
        throw Error("nms: iou_threshold must be in (0, 1]");
    }
    std::vector<std::size_t> order(detections.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ranks_before(detections[a], detections[b]);
    });

    std::vector<std::size_t> kept;
    kept.reserve(order.size());
    for (std::size_t idx : order) {
        const auto& det = detections[idx];
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return detections[k].label == det.label && iou(detections[k].box, det.box) >= iou_threshold;
        });
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

inline std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold) {
    std::vector<Detection> kept;
    for (std::size_t idx : nms_indices(detections, iou_threshold)) kept.push_back(detections[idx]);
    return kept;
}

}  // namespace barcnn
