#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "barcnn/attention.hpp"
#include "barcnn/geometry.hpp"
#include "barcnn/image.hpp"
#include "barcnn/numerics.hpp"

namespace barcnn {

/// Shape of the toy conditioned detector. Every backbone block halves the
/// spatial resolution, so the grid must equal input / 2^blocks.
struct ModelConfig {
    std::size_t input_height = 64;
    std::size_t input_width = 64;
    std::vector<std::size_t> block_channels{8, 16, 32};
    std::size_t grid_height = 8;
    std::size_t grid_width = 8;
    std::size_t num_object_classes = 2;
    std::size_t num_predicates = 3;
    std::size_t anchors_per_cell = 1;
    /// Adds a class channel for the reserved not-visible object label.
    bool not_visible_class = false;

    std::size_t class_channels() const { return num_object_classes + (not_visible_class ? 1 : 0); }
    std::size_t head_channels_per_anchor() const { return 4 + class_channels() + num_predicates; }
    std::size_t num_anchors() const { return grid_height * grid_width * anchors_per_cell; }

    void validate() const {
        if (input_height == 0 || input_width == 0) throw ShapeError("model: input size must be positive");
        if (block_channels.empty()) throw ShapeError("model: need at least one backbone block");
        for (auto c : block_channels) {
            if (c == 0) throw ShapeError("model: block channel counts must be positive");
        }
        if (num_object_classes == 0 || num_predicates == 0) {
            throw ShapeError("model: class and predicate counts must be positive");
        }
        if (anchors_per_cell != 1) throw ShapeError("model: only one anchor per cell is supported");
        const std::size_t factor = std::size_t{1} << block_channels.size();
        if (input_height % factor != 0 || input_width % factor != 0 || input_height / factor != grid_height ||
            input_width / factor != grid_width) {
            throw ShapeError("model: grid " + std::to_string(grid_height) + "x" + std::to_string(grid_width) +
                             " does not equal input size / 2^" + std::to_string(block_channels.size()));
        }
    }
};

struct HeadOutput {
    nn::DiffArray box_deltas;        // [Gh, Gw, A, 4]
    nn::DiffArray class_logits;      // [Gh, Gw, A, classes]
    nn::DiffArray predicate_logits;  // [Gh, Gw, A, predicates]
};

// ---------------------------------------------------------------------------
// Anchors and box regression
// ---------------------------------------------------------------------------

/// The single anchor of a cell is the cell itself.
inline Box anchor_box(const ModelConfig& config, std::size_t gy, std::size_t gx) {
    const double gh = static_cast<double>(config.grid_height);
    const double gw = static_cast<double>(config.grid_width);
    return Box(static_cast<double>(gx) / gw, static_cast<double>(gy) / gh, static_cast<double>(gx + 1) / gw,
               static_cast<double>(gy + 1) / gh);
}

/// (dx, dy, log dw, log dh) of `box` relative to `anchor`.
inline std::array<double, 4> encode_box(const Box& box, const Box& anchor) {
    return {(box.center_x() - anchor.center_x()) / anchor.width(),
            (box.center_y() - anchor.center_y()) / anchor.height(), std::log(box.width() / anchor.width()),
            std::log(box.height() / anchor.height())};
}

/// Upper bound on log-scale deltas so exp() stays finite.
inline constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)

/// Unclipped corner coordinates (x_min, y_min, x_max, y_max) for the deltas.
inline std::array<double, 4> decode_corners(std::span<const double> deltas, const Box& anchor) {
    const double cx = anchor.center_x() + deltas[0] * anchor.width();
    const double cy = anchor.center_y() + deltas[1] * anchor.height();
    const double w = anchor.width() * std::exp(std::min(deltas[2], kMaxLogScale));
    const double h = anchor.height() * std::exp(std::min(deltas[3], kMaxLogScale));
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

/// Decoded box clipped to the image; nullopt if clipping leaves no area.
inline std::optional<Box> decode_box(std::span<const double> deltas, const Box& anchor) {
    const auto c = decode_corners(deltas, anchor);
    return Box::try_make(std::clamp(c[0], 0.0, 1.0), std::clamp(c[1], 0.0, 1.0), std::clamp(c[2], 0.0, 1.0),
                         std::clamp(c[3], 0.0, 1.0));
}

/// Index of the anchor with the highest IoU; ties go to the lowest index.
inline std::size_t best_anchor(const ModelConfig& config, const Box& box) {
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t gy = 0; gy < config.grid_height; ++gy) {
        for (std::size_t gx = 0; gx < config.grid_width; ++gx) {
            const double v = iou(box, anchor_box(config, gy, gx));
            if (v > best_iou) {
                best_iou = v;
                best = gy * config.grid_width + gx;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Small convolutional detector whose backbone blocks each carry one
/// attention conditioning site:
///   conv3x3 -> (+ conditioning) -> bias -> relu -> maxpool2
/// followed by a 3x3 grid head emitting box deltas, class logits and
/// predicate logits per anchor.
class ConditionedDetector {
public:
    /// RetinaNet-style prior for the initial sigmoid outputs.
    static constexpr double kPriorProbability = 0.01;

    explicit ConditionedDetector(ModelConfig config, std::uint64_t seed = 0) : config_(std::move(config)) {
        config_.validate();
        std::mt19937_64 rng(seed);
        auto he_normal = [&](std::size_t n, std::size_t fan_in, double std_override = 0.0) {
            std::normal_distribution<double> dist(
                0.0, std_override > 0.0 ? std_override : std::sqrt(2.0 / static_cast<double>(fan_in)));
            std::vector<double> v(n);
            for (auto& x : v) x = dist(rng);
            return v;
        };

        std::size_t in_channels = 3;
        for (std::size_t b = 0; b < config_.block_channels.size(); ++b) {
            const std::size_t c = config_.block_channels[b];
            const std::string prefix = "block" + std::to_string(b);
            params_.emplace_back(prefix + ".conv", nn::Shape{3, 3, in_channels, c},
                                 he_normal(9 * in_channels * c, 9 * in_channels));
            params_.emplace_back(prefix + ".bias", nn::Shape{c}, std::vector<double>(c, 0.0));
            params_.emplace_back(prefix + ".attention", nn::Shape{3, 3, 3, c}, std::vector<double>(27 * c, 0.0));
            in_channels = c;
        }
        const std::size_t head_out = config_.anchors_per_cell * config_.head_channels_per_anchor();
        params_.emplace_back("head.conv", nn::Shape{3, 3, in_channels, head_out},
                             he_normal(9 * in_channels * head_out, 0, 0.01));
        std::vector<double> head_bias(head_out, 0.0);
        const double prior_bias = -std::log((1.0 - kPriorProbability) / kPriorProbability);
        for (std::size_t i = 0; i < head_out; ++i) {
            if (i % config_.head_channels_per_anchor() >= 4) head_bias[i] = prior_bias;
        }
        params_.emplace_back("head.bias", nn::Shape{head_out}, std::move(head_bias));
    }

    const ModelConfig& config() const { return config_; }
    std::vector<nn::Parameter>& parameters() { return params_; }
    std::span<const nn::Parameter> parameters() const { return params_; }

    nn::Parameter& attention_kernel(std::size_t block) { return params_[3 * block + 2]; }
    const nn::Parameter& attention_kernel(std::size_t block) const { return params_[3 * block + 2]; }

    /// Runs the network. A null attention map skips conditioning entirely and
    /// yields the unconditioned base detector.
    HeadOutput forward(const Image& image, const AttentionMap* attention) const {
        if (image.height != config_.input_height || image.width != config_.input_width) {
            throw ShapeError("forward: image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                             ", model expects " + std::to_string(config_.input_height) + "x" +
                             std::to_string(config_.input_width));
        }
        if (attention && (attention->height() != image.height || attention->width() != image.width)) {
            throw ShapeError("forward: attention map size does not match the image");
        }
        nn::DiffArray x = image.as_array();
        for (std::size_t b = 0; b < config_.block_channels.size(); ++b) {
            nn::DiffArray u = nn::conv2d(x, params_[3 * b].array, 1, nn::Padding::same);
            if (attention) {
                const auto resized = nn::resize_nearest(attention->as_array(), u.dim(0), u.dim(1));
                u = nn::add(u, nn::conv2d(resized, params_[3 * b + 2].array, 1, nn::Padding::same));
            }
            x = nn::max_pool2(nn::relu(nn::bias_add(u, params_[3 * b + 1].array)));
        }
        const auto& head_conv = params_[params_.size() - 2];
        const auto& head_bias = params_[params_.size() - 1];
        auto head = nn::bias_add(nn::conv2d(x, head_conv.array, 1, nn::Padding::same), head_bias.array);
        const std::size_t per_anchor = config_.head_channels_per_anchor();
        head = nn::reshape(head, {config_.grid_height, config_.grid_width, config_.anchors_per_cell, per_anchor});
        return HeadOutput{nn::slice_last(head, 0, 4), nn::slice_last(head, 4, config_.class_channels()),
                          nn::slice_last(head, 4 + config_.class_channels(), config_.num_predicates)};
    }

    HeadOutput forward(const Image& image, const AttentionMap& attention) const { return forward(image, &attention); }

private:
    ModelConfig config_;
    std::vector<nn::Parameter> params_;
};

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

struct DecodeOptions {
    double score_threshold = 0.05;
    double nms_iou = 0.5;
};

/// An object detected under a subject's attention map, with the sigmoid
/// scores of every predicate at its anchor.
struct ObjectPrediction {
    Detection object;
    std::vector<double> predicate_scores;
    bool invisible = false;
};

namespace detail {

inline void check_head(const ModelConfig& config, const HeadOutput& head) {
    const nn::Shape base{config.grid_height, config.grid_width, config.anchors_per_cell};
    auto expect = [&](const nn::DiffArray& a, std::size_t last, const char* what) {
        nn::Shape s = base;
        s.push_back(last);
        if (a.shape() != s) {
            throw ShapeError(std::string("decode: ") + what + " has shape " + nn::to_string(a.shape()) +
                             ", expected " + nn::to_string(s));
        }
    };
    expect(head.box_deltas, 4, "box_deltas");
    expect(head.class_logits, config.class_channels(), "class_logits");
    expect(head.predicate_logits, config.num_predicates, "predicate_logits");
}

}  // namespace detail

/// Subject mode: one detection per (anchor, class) whose sigmoid score passes
/// the threshold, followed by class-wise NMS. Predicate logits are not read.
inline std::vector<Detection> decode_subjects(const ModelConfig& config, const HeadOutput& head,
                                              const DecodeOptions& options = {}) {
    detail::check_head(config, head);
    const auto deltas = head.box_deltas.values();
    const auto logits = head.class_logits.values();
    const std::size_t classes = config.class_channels();
    std::vector<Detection> candidates;
    for (std::size_t gy = 0; gy < config.grid_height; ++gy) {
        for (std::size_t gx = 0; gx < config.grid_width; ++gx) {
            const std::size_t a = gy * config.grid_width + gx;
            std::optional<Box> box;
            for (std::size_t c = 0; c < config.num_object_classes; ++c) {
                const double score = nn::sigmoid(logits[a * classes + c]);
                if (score < options.score_threshold) continue;
                if (!box) box = decode_box(deltas.subspan(a * 4, 4), anchor_box(config, gy, gx));
                if (!box) break;
                candidates.push_back(Detection{*box, static_cast<int>(c), score});
            }
        }
    }
    return nms(candidates, options.nms_iou);
}

/// Object mode: detections over object classes, each carrying the predicate
/// sigmoid scores at its anchor. The not-visible class yields an invisible
/// prediction whose box is the subject box.
inline std::vector<ObjectPrediction> decode_objects(const ModelConfig& config, const HeadOutput& head,
                                                    const Box& subject_box, const DecodeOptions& options = {}) {
    detail::check_head(config, head);
    const auto deltas = head.box_deltas.values();
    const auto logits = head.class_logits.values();
    const auto pred_logits = head.predicate_logits.values();
    const std::size_t classes = config.class_channels();
    const std::size_t predicates = config.num_predicates;

    std::vector<Detection> detections;
    std::vector<std::size_t> anchor_of;
    for (std::size_t gy = 0; gy < config.grid_height; ++gy) {
        for (std::size_t gx = 0; gx < config.grid_width; ++gx) {
            const std::size_t a = gy * config.grid_width + gx;
            std::optional<Box> box;
            bool box_done = false;
            for (std::size_t c = 0; c < classes; ++c) {
                const double score = nn::sigmoid(logits[a * classes + c]);
                if (score < options.score_threshold) continue;
                if (config.not_visible_class && c == config.num_object_classes) {
                    detections.push_back(Detection{subject_box, kNotVisibleLabel, score});
                    anchor_of.push_back(a);
                    continue;
                }
                if (!box_done) {
                    box = decode_box(deltas.subspan(a * 4, 4), anchor_box(config, gy, gx));
                    box_done = true;
                }
                if (!box) continue;
                detections.push_back(Detection{*box, static_cast<int>(c), score});
                anchor_of.push_back(a);
            }
        }
    }

    std::vector<ObjectPrediction> out;
    for (std::size_t idx : nms_indices(detections, options.nms_iou)) {
        const std::size_t a = anchor_of[idx];
        std::vector<double> scores(predicates);
        for (std::size_t k = 0; k < predicates; ++k) scores[k] = nn::sigmoid(pred_logits[a * predicates + k]);
        out.push_back({detections[idx], std::move(scores), detections[idx].label == kNotVisibleLabel});
    }
    return out;
}

}  // namespace barcnn
