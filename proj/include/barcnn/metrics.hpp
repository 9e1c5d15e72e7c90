#pragma once

// Relationship detection metrics: greedy triplet/phrase matching, all-points
// interpolated average precision, V-COCO-style AP_role, Recall@K, and the
// Open Images weighted score.
//
// Detections are pooled across images for AP: each image is matched
// independently, then flags are merged into one ranking by score (ties keep
// image order, then within-image rank).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "barcnn/data.hpp"
#include "barcnn/geometry.hpp"
#include "barcnn/inference.hpp"

namespace barcnn {

struct GroundTruthRelationship {
    Box subject_box;
    int subject_label = 0;
    int predicate = 0;
    /// Absent iff the object is not visible.
    std::optional<Box> object_box;
    int object_label = 0;
    std::optional<RoleSlot> role;

    bool object_visible() const { return object_box.has_value(); }
};

inline std::vector<GroundTruthRelationship> ground_truth_of(const ImageAnnotation& img) {
    std::vector<GroundTruthRelationship> gt;
    for (const auto& r : img.relationships) {
        const auto& s = img.subjects.at(r.subject);
        gt.push_back({s.box, s.label, r.predicate, r.object_box, r.object_label, r.role});
    }
    return gt;
}

enum class MatchMode { triplet, phrase };

struct MatchSpec {
    double iou_threshold = 0.5;
    bool require_subject_label = true;
    bool require_object_label = true;
    MatchMode mode = MatchMode::triplet;
};

namespace detail {

/// Match quality of a prediction against one GT, or nullopt if it does not
/// qualify. Not-visible GT objects match only invisible predictions and are
/// judged on the subject box alone.
inline std::optional<double> match_quality(const RelationshipDetection& p, const GroundTruthRelationship& g,
                                           const MatchSpec& spec) {
    if (p.predicate != g.predicate) return std::nullopt;
    if (spec.require_subject_label && p.subject.label != g.subject_label) return std::nullopt;
    if (!g.object_visible()) {
        if (!p.invisible) return std::nullopt;
        const double s = iou(p.subject.box, g.subject_box);
        return s >= spec.iou_threshold ? std::optional(s) : std::nullopt;
    }
    if (p.invisible) return std::nullopt;
    if (spec.require_object_label && p.object.label != g.object_label) return std::nullopt;
    if (spec.mode == MatchMode::phrase) {
        const double v = iou(enclosing_box(p.subject.box, p.object.box), enclosing_box(g.subject_box, *g.object_box));
        return v >= spec.iou_threshold ? std::optional(v) : std::nullopt;
    }
    const double s = iou(p.subject.box, g.subject_box);
    const double o = iou(p.object.box, *g.object_box);
    if (s < spec.iou_threshold || o < spec.iou_threshold) return std::nullopt;
    return std::min(s, o);
}

}  // namespace detail

/// Greedy matching in score order. Each prediction claims the unmatched
/// qualifying GT of highest quality (min of subject/object IoU in triplet
/// mode, enclosing-box IoU in phrase mode; ties to the lowest index).
inline std::vector<bool> match_detections(std::span<const RelationshipDetection> predictions,
                                          std::span<const GroundTruthRelationship> ground_truth,
                                          const MatchSpec& spec = {}) {
    for (std::size_t i = 1; i < predictions.size(); ++i) {
        if (predictions[i].score > predictions[i - 1].score) {
            throw Error("match_detections: predictions must be sorted by non-increasing score");
        }
    }
    std::vector<bool> used(ground_truth.size(), false);
    std::vector<bool> flags(predictions.size(), false);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        std::optional<std::size_t> best;
        double best_quality = -1.0;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (used[g]) continue;
            const auto q = detail::match_quality(predictions[i], ground_truth[g], spec);
            if (q && *q > best_quality) {
                best_quality = *q;
                best = g;
            }
        }
        if (best) {
            used[*best] = true;
            flags[i] = true;
        }
    }
    return flags;
}

/// All-points interpolated AP (PASCAL VOC 2012): area under the precision
/// envelope over recall. nullopt when there is no ground truth.
inline std::optional<double> average_precision(const std::vector<bool>& flags, std::size_t num_ground_truth) {
    if (num_ground_truth == 0) return std::nullopt;
    const std::size_t n = flags.size();
    std::vector<double> recall(n + 2, 0.0), precision(n + 2, 0.0);
    std::size_t tp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (flags[i]) ++tp;
        recall[i + 1] = static_cast<double>(tp) / static_cast<double>(num_ground_truth);
        precision[i + 1] = static_cast<double>(tp) / static_cast<double>(i + 1);
    }
    recall[n + 1] = n > 0 ? recall[n] : 0.0;
    for (std::size_t i = n + 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    for (std::size_t i = 1; i <= n + 1; ++i) {
        if (recall[i] != recall[i - 1]) ap += (recall[i] - recall[i - 1]) * precision[i];
    }
    return ap;
}

/// Per-image predictions and ground truth, aligned by position.
struct EvaluationInput {
    std::vector<std::vector<RelationshipDetection>> predictions;
    std::vector<std::vector<GroundTruthRelationship>> ground_truth;
};

/// Aligns a predictions file with annotations by image id. Images without
/// predictions get an empty list; predictions for unknown images are an error.
inline EvaluationInput align(const std::vector<ImagePredictions>& predictions, const AnnotationSet& annotations) {
    EvaluationInput in;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < annotations.images.size(); ++i) {
        index[annotations.images[i].image_id] = i;
        in.ground_truth.push_back(ground_truth_of(annotations.images[i]));
    }
    in.predictions.resize(annotations.images.size());
    for (const auto& p : predictions) {
        const auto it = index.find(p.image_id);
        if (it == index.end()) throw Error("evaluation: predictions reference unknown image '" + p.image_id + "'");
        auto& dst = in.predictions[it->second];
        dst.insert(dst.end(), p.detections.begin(), p.detections.end());
    }
    for (auto& p : in.predictions) sort_by_score(p);
    return in;
}

/// AP of the predictions and GT that pass the filters, pooled over images.
template <typename PredFilter, typename GtFilter>
std::optional<double> pooled_average_precision(const EvaluationInput& in, const MatchSpec& spec, PredFilter keep_pred,
                                               GtFilter keep_gt) {
    struct Scored {
        double score;
        bool tp;
    };
    std::vector<Scored> pooled;
    std::size_t total_gt = 0;
    for (std::size_t img = 0; img < in.ground_truth.size(); ++img) {
        std::vector<RelationshipDetection> preds;
        for (const auto& p : in.predictions[img]) {
            if (keep_pred(p)) preds.push_back(p);
        }
        sort_by_score(preds);
        std::vector<GroundTruthRelationship> gt;
        for (const auto& g : in.ground_truth[img]) {
            if (keep_gt(g)) gt.push_back(g);
        }
        total_gt += gt.size();
        const auto flags = match_detections(preds, gt, spec);
        for (std::size_t i = 0; i < preds.size(); ++i) pooled.push_back({preds[i].score, flags[i]});
    }
    std::stable_sort(pooled.begin(), pooled.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    std::vector<bool> flags;
    flags.reserve(pooled.size());
    for (const auto& s : pooled) flags.push_back(s.tp);
    return average_precision(flags, total_gt);
}

/// One evaluated V-COCO (action, role) entry; an unset role accepts any GT slot.
struct ActionRole {
    int predicate = 0;
    std::optional<RoleSlot> role;
};

struct ApRoleResult {
    /// nullopt for entries without ground truth; those are left out of the mean.
    std::vector<std::optional<double>> per_action_role;
    double mean = 0.0;
};

/// Subject boxes are matched without labels (the subject class is fixed);
/// object labels are not checked.
inline ApRoleResult ap_role(const EvaluationInput& in, std::span<const ActionRole> action_roles, double iou_threshold = 0.5) {
    const MatchSpec spec{iou_threshold, false, false, MatchMode::triplet};
    ApRoleResult result;
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& ar : action_roles) {
        const auto ap = pooled_average_precision(
            in, spec, [&](const RelationshipDetection& p) { return p.predicate == ar.predicate; },
            [&](const GroundTruthRelationship& g) {
                return g.predicate == ar.predicate && (!ar.role || g.role == ar.role);
            });
        result.per_action_role.push_back(ap);
        if (ap) {
            total += *ap;
            ++counted;
        }
    }
    result.mean = counted ? total / static_cast<double>(counted) : 0.0;
    return result;
}

/// Fraction of GT relationships matched by each image's top-k predictions
/// (triplet mode, both labels required). 0 when there is no ground truth.
inline double recall_at_k(const EvaluationInput& in, std::size_t k, double iou_threshold = 0.5) {
    const MatchSpec spec{iou_threshold, true, true, MatchMode::triplet};
    std::size_t matched = 0, total = 0;
    for (std::size_t img = 0; img < in.ground_truth.size(); ++img) {
        const auto& preds = in.predictions[img];
        const std::span<const RelationshipDetection> top(preds.data(), std::min(k, preds.size()));
        const auto flags = match_detections(top, in.ground_truth[img], spec);
        matched += static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
        total += in.ground_truth[img].size();
    }
    return total ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
}

/// Mean over predicates (with GT) of pooled AP under `spec`.
inline double predicate_mean_ap(const EvaluationInput& in, std::size_t num_predicates, const MatchSpec& spec) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t p = 0; p < num_predicates; ++p) {
        const int pid = static_cast<int>(p);
        const auto ap = pooled_average_precision(
            in, spec, [&](const RelationshipDetection& d) { return d.predicate == pid; },
            [&](const GroundTruthRelationship& g) { return g.predicate == pid; });
        if (ap) {
            total += *ap;
            ++counted;
        }
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

struct OidWeights {
    double relationship_map = 0.4;
    double phrase_map = 0.4;
    double recall_at_50 = 0.2;

    void validate() const {
        if (relationship_map < 0 || phrase_map < 0 || recall_at_50 < 0 ||
            std::abs(relationship_map + phrase_map + recall_at_50 - 1.0) > 1e-9) {
            throw Error("oid weights must be non-negative and sum to 1");
        }
    }
};

struct OidScore {
    double phrase_map = 0.0;
    double relationship_map = 0.0;
    double recall_at_50 = 0.0;
    double score = 0.0;
};

inline OidScore oid_score(const EvaluationInput& in, std::size_t num_predicates, const OidWeights& weights = {}) {
    weights.validate();
    OidScore s;
    s.relationship_map = predicate_mean_ap(in, num_predicates, {0.5, true, true, MatchMode::triplet});
    s.phrase_map = predicate_mean_ap(in, num_predicates, {0.5, true, true, MatchMode::phrase});
    s.recall_at_50 = recall_at_k(in, 50);
    s.score = weights.relationship_map * s.relationship_map + weights.phrase_map * s.phrase_map +
              weights.recall_at_50 * s.recall_at_50;
    return s;
}

}  // namespace barcnn
