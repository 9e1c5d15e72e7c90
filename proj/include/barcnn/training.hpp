#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "barcnn/attention.hpp"
#include "barcnn/checkpoint.hpp"
#include "barcnn/data.hpp"
#include "barcnn/model.hpp"
#include "barcnn/numerics.hpp"
#include "barcnn/random.hpp"

namespace barcnn {

// ---------------------------------------------------------------------------
// Sample generation
// ---------------------------------------------------------------------------

/// One ground-truth box the detector should emit for a sample, with the
/// predicates linking it to the conditioning subject (empty in subject mode).
struct SampleTarget {
    Box box;
    int label = 0;
    std::vector<int> predicates;

    friend bool operator==(const SampleTarget&, const SampleTarget&) = default;
};

/// A (image, attention map, targets) triple. The attention map is built on
/// demand from `subject_box`, so samples never copy the image.
struct TrainingSample {
    std::size_t image_index = 0;
    bool subject_mode = true;
    /// Index into the annotation's subjects; set iff object mode.
    std::optional<std::size_t> subject_index;
    std::optional<Box> subject_box;
    std::vector<SampleTarget> targets;

    AttentionMap attention(std::size_t height, std::size_t width) const { return encode(subject_box, height, width); }
};

/// k annotated subjects give k+1 samples: one subject-mode sample listing
/// every subject box, then one object-mode sample per subject listing its
/// related objects. Relationships that share an object box and label are
/// merged into one target carrying every predicate.
inline std::vector<TrainingSample> generate_samples(const ImageAnnotation& annotation, std::size_t image_index = 0) {
    std::vector<TrainingSample> samples;
    samples.reserve(annotation.subjects.size() + 1);

    TrainingSample subjects;
    subjects.image_index = image_index;
    for (const auto& s : annotation.subjects) subjects.targets.push_back({s.box, s.label, {}});
    samples.push_back(std::move(subjects));

    for (std::size_t i = 0; i < annotation.subjects.size(); ++i) {
        TrainingSample sample;
        sample.image_index = image_index;
        sample.subject_mode = false;
        sample.subject_index = i;
        sample.subject_box = annotation.subjects[i].box;
        for (const auto& r : annotation.relationships) {
            if (r.subject != i) continue;
            const Box box = r.object_visible() ? *r.object_box : annotation.subjects[i].box;
            auto it = std::find_if(sample.targets.begin(), sample.targets.end(), [&](const SampleTarget& t) {
                return t.label == r.object_label && t.box == box;
            });
            if (it == sample.targets.end()) {
                sample.targets.push_back({box, r.object_label, {r.predicate}});
            } else {
                it->predicates.push_back(r.predicate);
            }
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Anchor targets
// ---------------------------------------------------------------------------

/// Dense per-anchor targets and loss weights, laid out like HeadOutput.
struct AnchorTargets {
    std::vector<double> class_targets, class_weights;
    std::vector<double> predicate_targets, predicate_weights;
    std::vector<double> box_targets, box_weights;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

/// Assigns every target to its highest-IoU anchor. Not-visible targets go to
/// the anchor of the subject box and use the reserved class channel.
/// Unassigned anchors become negatives, subsampled to at most
/// `negative_ratio * max(positives, 1)`.
inline AnchorTargets build_targets(const ModelConfig& config, const TrainingSample& sample, std::mt19937_64& rng,
                                   std::size_t negative_ratio = 3) {
    const std::size_t anchors = config.num_anchors();
    const std::size_t classes = config.class_channels();
    const std::size_t predicates = config.num_predicates;
    AnchorTargets t;
    t.class_targets.assign(anchors * classes, 0.0);
    t.class_weights.assign(anchors * classes, 0.0);
    t.predicate_targets.assign(anchors * predicates, 0.0);
    t.predicate_weights.assign(anchors * predicates, 0.0);
    t.box_targets.assign(anchors * 4, 0.0);
    t.box_weights.assign(anchors * 4, 0.0);

    // Regression target source per anchor: 0 none, 1 not-visible placeholder, 2 visible object.
    std::vector<bool> positive(anchors, false);
    std::vector<int> box_source(anchors, 0);
    for (const auto& target : sample.targets) {
        std::size_t channel = 0;
        if (target.label == kNotVisibleLabel) {
            if (!config.not_visible_class) throw ShapeError("targets: not-visible object but model has no such class");
            channel = config.num_object_classes;
        } else {
            if (target.label < 0 || static_cast<std::size_t>(target.label) >= config.num_object_classes) {
                throw ShapeError("targets: object label out of range");
            }
            channel = static_cast<std::size_t>(target.label);
        }
        const std::size_t a = best_anchor(config, target.box);
        positive[a] = true;
        t.class_targets[a * classes + channel] = 1.0;
        for (int p : target.predicates) {
            if (p < 0 || static_cast<std::size_t>(p) >= predicates) throw ShapeError("targets: predicate out of range");
            t.predicate_targets[a * predicates + static_cast<std::size_t>(p)] = 1.0;
        }
        // The first visible object on an anchor owns its regression target.
        const int source = target.label == kNotVisibleLabel ? 1 : 2;
        if (source > box_source[a]) {
            const auto d = encode_box(target.box, anchor_box(config, a / config.grid_width, a % config.grid_width));
            std::copy(d.begin(), d.end(), t.box_targets.begin() + static_cast<std::ptrdiff_t>(a * 4));
            std::fill_n(t.box_weights.begin() + static_cast<std::ptrdiff_t>(a * 4), 4, 1.0);
            box_source[a] = source;
        }
    }

    std::vector<std::size_t> negatives;
    for (std::size_t a = 0; a < anchors; ++a) {
        if (positive[a]) {
            ++t.positives;
        } else {
            negatives.push_back(a);
        }
    }
    const std::size_t keep = std::min(negatives.size(), negative_ratio * std::max<std::size_t>(t.positives, 1));
    std::shuffle(negatives.begin(), negatives.end(), rng);
    negatives.resize(keep);
    t.negatives = keep;

    auto select = [&](std::size_t a) {
        std::fill_n(t.class_weights.begin() + static_cast<std::ptrdiff_t>(a * classes), classes, 1.0);
        std::fill_n(t.predicate_weights.begin() + static_cast<std::ptrdiff_t>(a * predicates), predicates, 1.0);
    };
    for (std::size_t a = 0; a < anchors; ++a) {
        if (positive[a]) select(a);
    }
    for (std::size_t a : negatives) select(a);
    return t;
}

struct LossOptions {
    std::size_t negative_ratio = 3;
    /// Smooth-L1 transition point for box regression.
    double box_beta = 0.11;
    nn::SigmoidLossOptions classification{};
};

/// Class BCE + predicate BCE + smooth-L1 box regression for one sample.
inline nn::DiffArray sample_loss(const ConditionedDetector& model, const Image& image, const TrainingSample& sample,
                                 std::mt19937_64& rng, const LossOptions& options = {}) {
    const auto attention = sample.attention(image.height, image.width);
    const auto head = model.forward(image, attention);
    const auto t = build_targets(model.config(), sample, rng, options.negative_ratio);
    auto loss = nn::add(
        nn::sigmoid_multilabel_loss(head.class_logits, t.class_targets, t.class_weights, options.classification),
        nn::sigmoid_multilabel_loss(head.predicate_logits, t.predicate_targets, t.predicate_weights,
                                    options.classification));
    return nn::add(loss, nn::smooth_l1_loss(head.box_deltas, t.box_targets, t.box_weights, options.box_beta));
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// SGD-with-momentum schedule: the learning rate is multiplied by
/// decay_factor once for every decay point already passed.
struct Schedule {
    std::size_t epochs = 30;
    double initial_lr = 8e-3;
    std::vector<double> decay_points{0.5, 0.75};
    double decay_factor = 0.1;
    std::size_t batch_size = 8;
    double momentum = 0.9;

    void validate() const {
        if (epochs == 0 || batch_size == 0) throw Error("schedule: epochs and batch_size must be positive");
        if (!(initial_lr > 0.0) || !(decay_factor > 0.0)) throw Error("schedule: rates must be positive");
        for (std::size_t i = 0; i < decay_points.size(); ++i) {
            if (!(decay_points[i] > 0.0 && decay_points[i] < 1.0)) throw Error("schedule: decay points must lie in (0,1)");
            if (i > 0 && !(decay_points[i] > decay_points[i - 1])) {
                throw Error("schedule: decay points must be strictly increasing");
            }
        }
    }

    /// Learning rate after `fraction` of all optimization steps.
    double learning_rate(double fraction) const {
        double lr = initial_lr;
        for (double p : decay_points) {
            if (fraction >= p) lr *= decay_factor;
        }
        return lr;
    }
};

struct LossRecord {
    std::size_t step = 0;
    double learning_rate = 0.0;
    double loss = 0.0;
};

inline void write_loss_trace(std::ostream& os, std::span<const LossRecord> trace) {
    os << "step,lr,loss\n";
    for (const auto& r : trace) os << r.step << ',' << nn::format_double(r.learning_rate) << ',' << nn::format_double(r.loss) << '\n';
}

struct TrainResult {
    ConditionedDetector model;
    std::vector<LossRecord> trace;
};

/// Every sample of every image, in deterministic order.
inline std::vector<TrainingSample> all_samples(const AnnotationSet& annotations) {
    std::vector<TrainingSample> samples;
    for (std::size_t i = 0; i < annotations.images.size(); ++i) {
        auto s = generate_samples(annotations.images[i], i);
        std::move(s.begin(), s.end(), std::back_inserter(samples));
    }
    return samples;
}

/// Trains from scratch. Each epoch visits every sample once in a seeded
/// shuffle (subject- and object-mode samples interleaved); each batch
/// averages per-sample losses before one SGD step.
inline TrainResult train(std::span<const Image> images, const AnnotationSet& annotations, const ModelConfig& config,
                         const Schedule& schedule, std::uint64_t seed, const LossOptions& options = {},
                         const std::function<void(const LossRecord&)>& on_step = {}) {
    schedule.validate();
    if (annotations.images.empty()) throw Error("train: dataset is empty");
    if (images.size() != annotations.images.size()) throw Error("train: image and annotation counts differ");

    TrainResult result{ConditionedDetector(config, derive_seed(seed, "init")), {}};
    auto& model = result.model;
    auto samples = all_samples(annotations);
    const std::size_t steps_per_epoch = (samples.size() + schedule.batch_size - 1) / schedule.batch_size;
    const std::size_t total_steps = steps_per_epoch * schedule.epochs;

    std::mt19937_64 shuffle_rng(derive_seed(seed, "shuffle"));
    std::mt19937_64 negative_rng(derive_seed(seed, "negatives"));
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
        std::shuffle(samples.begin(), samples.end(), shuffle_rng);
        for (std::size_t begin = 0; begin < samples.size(); begin += schedule.batch_size) {
            const std::size_t end = std::min(samples.size(), begin + schedule.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - begin);
            double batch_loss = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto& sample = samples[i];
                auto loss = sample_loss(model, images[sample.image_index], sample, negative_rng, options);
                if (!std::isfinite(loss.item())) {
                    std::ostringstream os;
                    os << "train: non-finite loss " << loss.item() << " at step " << step << " (epoch " << epoch
                       << ", image '" << annotations.images[sample.image_index].image_id << "')";
                    throw TrainingError(os.str());
                }
                batch_loss += loss.item() * inv_batch;
                nn::scale(loss, inv_batch).backward();
            }
            const double lr = schedule.learning_rate(static_cast<double>(step) / static_cast<double>(total_steps));
            nn::sgd_momentum_step(model.parameters(), lr, schedule.momentum);
            result.trace.push_back({step, lr, batch_loss});
            if (on_step) on_step(result.trace.back());
            ++step;
        }
    }
    return result;
}

}  // namespace barcnn
