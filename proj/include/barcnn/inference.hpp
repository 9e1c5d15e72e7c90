#pragma once

// Two-stage relationship prediction. Stage one runs the detector with an
// empty attention map to find subjects; stage two re-runs it once per
// subject with that subject's box as attention and reads off related
// objects and predicates. A triplet is scored s = s_subject * (s_object * s_predicate).
//
// Predictions file (version 1): a "# barcnn-predictions 1" line, a header
// row, then one tab-separated record per relationship:
//
//   image_id subject_label subject_score subject_x_min subject_y_min
//   subject_x_max subject_y_max predicate object_label object_score
//   object_x_min object_y_min object_x_max object_y_max invisible score
//
// Labels and predicates are integer ids into the dataset vocabulary (object
// label -1 marks a not-visible object); reals use %.17g so a parse/print
// cycle reproduces the file byte for byte.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "barcnn/attention.hpp"
#include "barcnn/checkpoint.hpp"
#include "barcnn/geometry.hpp"
#include "barcnn/image.hpp"
#include "barcnn/model.hpp"

namespace barcnn {

struct RelationshipDetection {
    Detection subject;
    int predicate = 0;
    Detection object;
    double score = 0.0;
    /// Object is the reserved not-visible label; its box repeats the subject's.
    bool invisible = false;

    friend bool operator==(const RelationshipDetection&, const RelationshipDetection&) = default;
};

struct InferenceOptions {
    double subject_threshold = 0.05;
    /// Minimum s_object * s_predicate; also the object decode threshold.
    double pair_threshold = 0.01;
    double nms_iou = 0.5;
    std::size_t max_objects_per_subject = 20;
    std::size_t top_k = 100;
};

inline std::vector<Detection> detect_subjects(const ConditionedDetector& model, const Image& image,
                                              double threshold = 0.05, double nms_iou = 0.5) {
    const auto empty = encode(std::nullopt, image.height, image.width);
    return decode_subjects(model.config(), model.forward(image, empty), {threshold, nms_iou});
}

/// Stage two for one subject: every (object, predicate) with
/// s_object * s_predicate >= pair_threshold, in (object rank, predicate) order.
inline std::vector<RelationshipDetection> relate_subject(const ConditionedDetector& model, const Image& image,
                                                         const Detection& subject, const InferenceOptions& options = {}) {
    const auto attention = encode(subject.box, image.height, image.width);
    auto objects = decode_objects(model.config(), model.forward(image, attention), subject.box,
                                  {options.pair_threshold, options.nms_iou});
    if (objects.size() > options.max_objects_per_subject) {
        objects.erase(objects.begin() + static_cast<std::ptrdiff_t>(options.max_objects_per_subject), objects.end());
    }

    std::vector<RelationshipDetection> out;
    for (const auto& obj : objects) {
        for (std::size_t p = 0; p < obj.predicate_scores.size(); ++p) {
            const double pair_score = obj.object.score * obj.predicate_scores[p];
            if (pair_score < options.pair_threshold) continue;
            out.push_back({subject, static_cast<int>(p), obj.object, subject.score * pair_score, obj.invisible});
        }
    }
    return out;
}

/// Sorts by score descending; equal scores keep their input order.
inline void sort_by_score(std::vector<RelationshipDetection>& detections) {
    std::stable_sort(detections.begin(), detections.end(),
                     [](const RelationshipDetection& a, const RelationshipDetection& b) { return a.score > b.score; });
}

inline void truncate(std::vector<RelationshipDetection>& detections, std::size_t k) {
    if (detections.size() > k) detections.erase(detections.begin() + static_cast<std::ptrdiff_t>(k), detections.end());
}

inline std::vector<RelationshipDetection> detect_relationships(const ConditionedDetector& model, const Image& image,
                                                               const InferenceOptions& options = {}) {
    std::vector<RelationshipDetection> all;
    for (const auto& subject : detect_subjects(model, image, options.subject_threshold, options.nms_iou)) {
        auto rels = relate_subject(model, image, subject, options);
        all.insert(all.end(), rels.begin(), rels.end());
    }
    sort_by_score(all);
    truncate(all, options.top_k);
    return all;
}

// ---------------------------------------------------------------------------
// Predictions file
// ---------------------------------------------------------------------------

/// Predictions of one image, sorted by score.
struct ImagePredictions {
    std::string image_id;
    std::vector<RelationshipDetection> detections;

    friend bool operator==(const ImagePredictions&, const ImagePredictions&) = default;
};

inline void write_predictions(std::ostream& os, const std::vector<ImagePredictions>& predictions) {
    using nn::format_double;
    os << "# barcnn-predictions 1\n";
    os << "image_id\tsubject_label\tsubject_score\tsubject_x_min\tsubject_y_min\tsubject_x_max\tsubject_y_max\t"
          "predicate\tobject_label\tobject_score\tobject_x_min\tobject_y_min\tobject_x_max\tobject_y_max\t"
          "invisible\tscore\n";
    for (const auto& img : predictions) {
        for (const auto& r : img.detections) {
            const auto& s = r.subject;
            const auto& o = r.object;
            os << img.image_id << '\t' << s.label << '\t' << format_double(s.score) << '\t'
               << format_double(s.box.x_min()) << '\t' << format_double(s.box.y_min()) << '\t'
               << format_double(s.box.x_max()) << '\t' << format_double(s.box.y_max()) << '\t' << r.predicate << '\t'
               << o.label << '\t' << format_double(o.score) << '\t' << format_double(o.box.x_min()) << '\t'
               << format_double(o.box.y_min()) << '\t' << format_double(o.box.x_max()) << '\t'
               << format_double(o.box.y_max()) << '\t' << (r.invisible ? 1 : 0) << '\t' << format_double(r.score)
               << '\n';
        }
    }
}

/// Records are grouped by image id in order of first appearance.
inline std::vector<ImagePredictions> read_predictions(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "# barcnn-predictions 1") {
        throw ParseError("predictions: missing '# barcnn-predictions 1' header");
    }
    if (!std::getline(is, line) || line.rfind("image_id\t", 0) != 0) throw ParseError("predictions: missing column header");

    std::vector<ImagePredictions> out;
    std::map<std::string, std::size_t> index;
    std::size_t line_no = 2;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) f.push_back(cell);
        const std::string where = "predictions line " + std::to_string(line_no);
        if (f.size() != 16) throw ParseError(where + ": expected 16 fields, got " + std::to_string(f.size()));
        auto real = [&](std::size_t i) {
            char* end = nullptr;
            const double v = std::strtod(f[i].c_str(), &end);
            if (f[i].empty() || *end != '\0') throw ParseError(where + ": bad number '" + f[i] + "'");
            return v;
        };
        auto integer = [&](std::size_t i) {
            char* end = nullptr;
            const long v = std::strtol(f[i].c_str(), &end, 10);
            if (f[i].empty() || *end != '\0') throw ParseError(where + ": bad integer '" + f[i] + "'");
            return static_cast<int>(v);
        };
        auto box = [&](std::size_t i) {
            auto b = Box::try_make(real(i), real(i + 1), real(i + 2), real(i + 3));
            if (!b) throw ParseError(where + ": invalid box");
            return *b;
        };
        RelationshipDetection r{Detection{box(3), integer(1), real(2)}, integer(7), Detection{box(10), integer(8), real(9)},
                                real(15), integer(14) != 0};
        auto [it, inserted] = index.emplace(f[0], out.size());
        if (inserted) out.push_back({f[0], {}});
        out[it->second].detections.push_back(r);
    }
    return out;
}

inline void save_predictions(const std::string& path, const std::vector<ImagePredictions>& predictions) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write predictions " + path);
    write_predictions(os, predictions);
}

inline std::vector<ImagePredictions> load_predictions(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot read predictions " + path);
    return read_predictions(is);
}

}  // namespace barcnn
