#pragma once

// Relationship annotations, their JSON file format, and the synthetic
// geometric-relationship scene generator.
//
// Annotation file (version 1):
//
//   {
//     "format": "barcnn-annotations",
//     "version": 1,
//     "object_classes": ["rectangle", "ellipse"],
//     "predicates": ["above", "below", "inside"],
//     "images": [
//       {
//         "id": "000000",
//         "image": "images/000000.ppm",          // relative to the file
//         "subjects": [ {"box": [x0, y0, x1, y1], "label": "rectangle", "color": 2} ],
//         "relationships": [
//           {"subject": 0, "predicate": "above",
//            "object": {"box": [x0, y0, x1, y1], "label": "ellipse"},
//            "role": "object"}
//         ]
//       }
//     ]
//   }
//
// "color" and "role" are optional. A hidden object is written as
// {"label": "NOT_VISIBLE"} without a box. Boxes are normalized to [0,1].

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "barcnn/error.hpp"
#include "barcnn/geometry.hpp"
#include "barcnn/image.hpp"

namespace barcnn {

inline constexpr const char* kNotVisibleName = "NOT_VISIBLE";

enum class RoleSlot { object, instrument };

inline const char* to_string(RoleSlot r) { return r == RoleSlot::object ? "object" : "instrument"; }

struct Vocabulary {
    std::vector<std::string> object_classes;
    std::vector<std::string> predicates;

    std::optional<int> object_id(const std::string& name) const { return find(object_classes, name); }
    std::optional<int> predicate_id(const std::string& name) const { return find(predicates, name); }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

private:
    static std::optional<int> find(const std::vector<std::string>& names, const std::string& name) {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) return std::nullopt;
        return static_cast<int>(it - names.begin());
    }
};

struct SubjectAnnotation {
    Box box;
    int label = 0;
    std::optional<int> color;

    friend bool operator==(const SubjectAnnotation&, const SubjectAnnotation&) = default;
};

struct RelationshipAnnotation {
    std::size_t subject = 0;
    int predicate = 0;
    /// Absent iff the object is not visible (object_label == kNotVisibleLabel).
    std::optional<Box> object_box;
    int object_label = 0;
    std::optional<RoleSlot> role;

    bool object_visible() const { return object_label != kNotVisibleLabel; }

    friend bool operator==(const RelationshipAnnotation&, const RelationshipAnnotation&) = default;
};

struct ImageAnnotation {
    std::string image_id;
    std::string image_path;
    std::vector<SubjectAnnotation> subjects;
    std::vector<RelationshipAnnotation> relationships;

    /// Throws ParseError naming the image and the offending field.
    void validate(const Vocabulary& vocab) const {
        auto fail = [&](const std::string& field, const std::string& what) {
            throw ParseError("image '" + image_id + "': " + field + ": " + what);
        };
        const auto n_classes = static_cast<int>(vocab.object_classes.size());
        const auto n_predicates = static_cast<int>(vocab.predicates.size());
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            if (subjects[i].label < 0 || subjects[i].label >= n_classes) {
                fail("subjects[" + std::to_string(i) + "].label", "label id out of range");
            }
        }
        for (std::size_t i = 0; i < relationships.size(); ++i) {
            const auto& r = relationships[i];
            const std::string at = "relationships[" + std::to_string(i) + "]";
            if (r.subject >= subjects.size()) fail(at + ".subject", "no subject with index " + std::to_string(r.subject));
            if (r.predicate < 0 || r.predicate >= n_predicates) fail(at + ".predicate", "predicate id out of range");
            if (r.object_label == kNotVisibleLabel) {
                if (r.object_box) fail(at + ".object", "not-visible object must not carry a box");
            } else {
                if (r.object_label < 0 || r.object_label >= n_classes) fail(at + ".object.label", "label id out of range");
                if (!r.object_box) fail(at + ".object.box", "visible object needs a box");
            }
        }
    }

    friend bool operator==(const ImageAnnotation&, const ImageAnnotation&) = default;
};

struct AnnotationSet {
    Vocabulary vocabulary;
    std::vector<ImageAnnotation> images;

    friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;
};

// ---------------------------------------------------------------------------
// JSON I/O
// ---------------------------------------------------------------------------

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson box_to_json(const Box& b) { return ojson::array({b.x_min(), b.y_min(), b.x_max(), b.y_max()}); }

inline Box box_from_json(const ojson& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4) throw ParseError(where + ": expected [x_min, y_min, x_max, y_max]");
    double v[4];
    for (std::size_t i = 0; i < 4; ++i) {
        if (!j[i].is_number()) throw ParseError(where + ": coordinates must be numbers");
        v[i] = j[i].get<double>();
    }
    auto box = Box::try_make(v[0], v[1], v[2], v[3]);
    if (!box) throw ParseError(where + ": degenerate or out-of-range box");
    return *box;
}

inline const ojson& require(const ojson& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
    return obj.at(key);
}

inline std::string require_string(const ojson& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

}  // namespace detail

inline std::string to_json_text(const AnnotationSet& set) {
    using detail::ojson;
    ojson root;
    root["format"] = "barcnn-annotations";
    root["version"] = 1;
    root["object_classes"] = set.vocabulary.object_classes;
    root["predicates"] = set.vocabulary.predicates;
    ojson images = ojson::array();
    for (const auto& img : set.images) {
        ojson ji;
        ji["id"] = img.image_id;
        ji["image"] = img.image_path;
        ojson subjects = ojson::array();
        for (const auto& s : img.subjects) {
            ojson js;
            js["box"] = detail::box_to_json(s.box);
            js["label"] = set.vocabulary.object_classes.at(static_cast<std::size_t>(s.label));
            if (s.color) js["color"] = *s.color;
            subjects.push_back(std::move(js));
        }
        ji["subjects"] = std::move(subjects);
        ojson rels = ojson::array();
        for (const auto& r : img.relationships) {
            ojson jr;
            jr["subject"] = r.subject;
            jr["predicate"] = set.vocabulary.predicates.at(static_cast<std::size_t>(r.predicate));
            ojson obj;
            if (r.object_visible()) {
                obj["box"] = detail::box_to_json(*r.object_box);
                obj["label"] = set.vocabulary.object_classes.at(static_cast<std::size_t>(r.object_label));
            } else {
                obj["label"] = kNotVisibleName;
            }
            jr["object"] = std::move(obj);
            if (r.role) jr["role"] = to_string(*r.role);
            rels.push_back(std::move(jr));
        }
        ji["relationships"] = std::move(rels);
        images.push_back(std::move(ji));
    }
    root["images"] = std::move(images);
    return root.dump(2) + "\n";
}

inline AnnotationSet parse_annotations(const std::string& text) {
    using detail::ojson;
    ojson root;
    try {
        root = ojson::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("annotations: invalid JSON: ") + e.what());
    }
    if (!root.is_object() || root.value("format", "") != "barcnn-annotations") {
        throw ParseError("annotations: missing \"format\": \"barcnn-annotations\" header");
    }
    if (!root.contains("version") || root["version"] != 1) throw ParseError("annotations: unsupported version");

    AnnotationSet set;
    for (const char* key : {"object_classes", "predicates"}) {
        const auto& arr = detail::require(root, key, "annotations");
        if (!arr.is_array()) throw ParseError(std::string("annotations.") + key + ": expected an array");
        auto& out = std::string(key) == "predicates" ? set.vocabulary.predicates : set.vocabulary.object_classes;
        for (const auto& name : arr) {
            if (!name.is_string()) throw ParseError(std::string("annotations.") + key + ": names must be strings");
            out.push_back(name.get<std::string>());
        }
    }
    if (set.vocabulary.object_id(kNotVisibleName)) {
        throw ParseError(std::string("annotations.object_classes: '") + kNotVisibleName + "' is reserved");
    }

    const auto& images = detail::require(root, "images", "annotations");
    if (!images.is_array()) throw ParseError("annotations.images: expected an array");
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& ji = images[i];
        const std::string pos = "images[" + std::to_string(i) + "]";
        ImageAnnotation img;
        img.image_id = detail::require_string(ji, "id", pos);
        const std::string where = pos + " (id '" + img.image_id + "')";
        img.image_path = ji.contains("image") ? detail::require_string(ji, "image", where) : "";

        const auto& subjects = detail::require(ji, "subjects", where);
        if (!subjects.is_array()) throw ParseError(where + ".subjects: expected an array");
        for (std::size_t s = 0; s < subjects.size(); ++s) {
            const std::string at = where + ".subjects[" + std::to_string(s) + "]";
            const auto label = detail::require_string(subjects[s], "label", at);
            const auto id = set.vocabulary.object_id(label);
            if (!id) throw ParseError(at + ".label: unknown object class '" + label + "'");
            SubjectAnnotation sa{detail::box_from_json(detail::require(subjects[s], "box", at), at + ".box"), *id, {}};
            if (subjects[s].contains("color")) {
                if (!subjects[s]["color"].is_number_integer()) throw ParseError(at + ".color: expected an integer");
                sa.color = subjects[s]["color"].get<int>();
            }
            img.subjects.push_back(sa);
        }

        const auto& rels = detail::require(ji, "relationships", where);
        if (!rels.is_array()) throw ParseError(where + ".relationships: expected an array");
        for (std::size_t r = 0; r < rels.size(); ++r) {
            const std::string at = where + ".relationships[" + std::to_string(r) + "]";
            const auto& jr = rels[r];
            RelationshipAnnotation ra;
            const auto& subj = detail::require(jr, "subject", at);
            if (!subj.is_number_unsigned()) throw ParseError(at + ".subject: expected a non-negative index");
            ra.subject = subj.get<std::size_t>();
            if (ra.subject >= img.subjects.size()) {
                throw ParseError(at + ".subject: no subject with index " + std::to_string(ra.subject));
            }
            const auto pred = detail::require_string(jr, "predicate", at);
            const auto pid = set.vocabulary.predicate_id(pred);
            if (!pid) throw ParseError(at + ".predicate: unknown predicate '" + pred + "'");
            ra.predicate = *pid;
            const auto& obj = detail::require(jr, "object", at);
            const auto olabel = detail::require_string(obj, "label", at + ".object");
            if (olabel == kNotVisibleName) {
                if (obj.contains("box")) throw ParseError(at + ".object: not-visible object must not carry a box");
                ra.object_label = kNotVisibleLabel;
            } else {
                const auto oid = set.vocabulary.object_id(olabel);
                if (!oid) throw ParseError(at + ".object.label: unknown object class '" + olabel + "'");
                ra.object_label = *oid;
                ra.object_box = detail::box_from_json(detail::require(obj, "box", at + ".object"), at + ".object.box");
            }
            if (jr.contains("role")) {
                const auto role = detail::require_string(jr, "role", at);
                if (role == "object") {
                    ra.role = RoleSlot::object;
                } else if (role == "instrument") {
                    ra.role = RoleSlot::instrument;
                } else {
                    throw ParseError(at + ".role: expected 'object' or 'instrument', got '" + role + "'");
                }
            }
            img.relationships.push_back(ra);
        }
        img.validate(set.vocabulary);
        set.images.push_back(std::move(img));
    }
    return set;
}

inline void save_annotations(const std::string& path, const AnnotationSet& set) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write annotations " + path);
    os << to_json_text(set);
}

inline AnnotationSet load_annotations(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot read annotations " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    try {
        return parse_annotations(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

/// Resolves an image path stored in an annotation file relative to that file.
inline std::string resolve_image_path(const std::string& annotation_path, const ImageAnnotation& img) {
    const std::filesystem::path p(img.image_path);
    if (p.is_absolute()) return p.string();
    return (std::filesystem::path(annotation_path).parent_path() / p).string();
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

enum class ShapeKind { rectangle, ellipse };

inline const char* to_string(ShapeKind k) { return k == ShapeKind::rectangle ? "rectangle" : "ellipse"; }

enum class PredicateRule { above, below, left_of, inside, touching, same_color };

inline const char* to_string(PredicateRule r) {
    switch (r) {
        case PredicateRule::above: return "above";
        case PredicateRule::below: return "below";
        case PredicateRule::left_of: return "left_of";
        case PredicateRule::inside: return "inside";
        case PredicateRule::touching: return "touching";
        case PredicateRule::same_color: return "same_color";
    }
    return "?";
}

inline std::optional<PredicateRule> predicate_rule_from_string(const std::string& s) {
    for (auto r : {PredicateRule::above, PredicateRule::below, PredicateRule::left_of, PredicateRule::inside,
                   PredicateRule::touching, PredicateRule::same_color}) {
        if (s == to_string(r)) return r;
    }
    return std::nullopt;
}

/// Whether `rule` relates subject to object. Colors are only consulted by
/// same_color.
inline bool rule_holds(PredicateRule rule, const Box& subject, const Box& object, int subject_color = -1,
                       int object_color = -2) {
    switch (rule) {
        case PredicateRule::above: return subject.y_max() <= object.y_min();
        case PredicateRule::below: return subject.y_min() >= object.y_max();
        case PredicateRule::left_of: return subject.x_max() <= object.x_min();
        case PredicateRule::inside: return object.contains(subject) && !(subject == object);
        case PredicateRule::touching:
            return overlaps(subject, object) && !object.contains(subject) && !subject.contains(object);
        case PredicateRule::same_color: return subject_color == object_color;
    }
    return false;
}

struct SyntheticConfig {
    std::size_t image_height = 64;
    std::size_t image_width = 64;
    std::size_t num_images = 64;
    std::size_t min_objects = 2;
    std::size_t max_objects = 4;
    std::vector<ShapeKind> shapes{ShapeKind::rectangle, ShapeKind::ellipse};
    std::vector<PredicateRule> predicates{PredicateRule::above, PredicateRule::below, PredicateRule::inside};
    /// Shape side length range as a fraction of the image side.
    double min_size = 0.15;
    double max_size = 0.35;
    /// Chance that a new shape is nested inside an existing large shape.
    double nest_probability = 0.3;
    /// Detection grid; shapes are placed so that their best anchors differ.
    std::size_t grid_height = 8;
    std::size_t grid_width = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (image_height < 8 || image_width < 8) throw Error("synthetic: images must be at least 8x8");
        if (min_objects < 1 || max_objects < min_objects) throw Error("synthetic: need 1 <= min_objects <= max_objects");
        if (shapes.empty() || predicates.empty()) throw Error("synthetic: need at least one shape and one predicate");
        if (!(min_size > 0.0 && min_size <= max_size && max_size <= 1.0)) throw Error("synthetic: bad size range");
        if (max_objects > grid_height * grid_width) throw Error("synthetic: more objects than grid cells");
    }
};

/// Fixed palette; channel values are multiples of 1/255 so rasters survive
/// an 8-bit pixmap round trip unchanged.
inline constexpr std::array<std::array<int, 3>, 6> kPalette{{
    {{230, 60, 50}}, {{60, 200, 80}}, {{60, 110, 235}}, {{240, 220, 60}}, {{200, 80, 220}}, {{70, 220, 225}},
}};
inline constexpr int kBackgroundLevel = 20;

struct SyntheticSample {
    Image image;
    ImageAnnotation annotation;
};

struct SyntheticDataset {
    Vocabulary vocabulary;
    std::vector<SyntheticSample> samples;

    AnnotationSet annotations() const {
        AnnotationSet set{vocabulary, {}};
        for (const auto& s : samples) set.images.push_back(s.annotation);
        return set;
    }
};

inline Vocabulary synthetic_vocabulary(const SyntheticConfig& config) {
    Vocabulary v;
    for (auto s : config.shapes) v.object_classes.emplace_back(to_string(s));
    for (auto p : config.predicates) v.predicates.emplace_back(to_string(p));
    return v;
}

/// Every ordered pair of distinct subjects related by each rule.
inline std::vector<RelationshipAnnotation> derive_relationships(const std::vector<SubjectAnnotation>& subjects,
                                                                const std::vector<PredicateRule>& rules) {
    std::vector<RelationshipAnnotation> rels;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        for (std::size_t o = 0; o < subjects.size(); ++o) {
            if (s == o) continue;
            for (std::size_t p = 0; p < rules.size(); ++p) {
                if (rule_holds(rules[p], subjects[s].box, subjects[o].box, subjects[s].color.value_or(-1),
                               subjects[o].color.value_or(-2))) {
                    rels.push_back({s, static_cast<int>(p), subjects[o].box, subjects[o].label, std::nullopt});
                }
            }
        }
    }
    return rels;
}

namespace detail {

struct PixelRect {
    int x0, y0, x1, y1;  // half-open pixel bounds
    int w() const { return x1 - x0; }
    int h() const { return y1 - y0; }
};

inline void paint(Image& image, const PixelRect& r, ShapeKind kind, const std::array<int, 3>& color) {
    const double cx = 0.5 * (r.x0 + r.x1), cy = 0.5 * (r.y0 + r.y1);
    const double rx = 0.5 * r.w(), ry = 0.5 * r.h();
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            if (kind == ShapeKind::ellipse) {
                const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                if (dx * dx + dy * dy > 1.0) continue;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = color[c] / 255.0;
            }
        }
    }
}

}  // namespace detail

/// Draws one scene. Shapes are either disjoint or strictly nested; nested
/// shapes keep a margin from their container and sit in its central region.
inline SyntheticSample generate_scene(const SyntheticConfig& config, std::mt19937_64& rng, const std::string& id) {
    const int H = static_cast<int>(config.image_height), W = static_cast<int>(config.image_width);
    std::uniform_int_distribution<std::size_t> count_dist(config.min_objects, config.max_objects);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int min_side = std::max(2, static_cast<int>(std::lround(config.min_size * std::min(H, W))));
    const int max_side = std::max(min_side, static_cast<int>(std::lround(config.max_size * std::min(H, W))));
    auto side = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    for (int attempt = 0; attempt < 10000; ++attempt) {
        const std::size_t n = count_dist(rng);
        std::vector<detail::PixelRect> rects;
        std::vector<std::optional<std::size_t>> parent;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            // Candidate containers: top-level shapes large enough to hold a margin-padded child.
            std::vector<std::size_t> containers;
            for (std::size_t j = 0; j < rects.size(); ++j) {
                if (!parent[j] && rects[j].w() >= 2 * min_side + 2 && rects[j].h() >= 2 * min_side + 2) {
                    bool has_child = false;
                    for (const auto& p : parent) has_child = has_child || (p && *p == j);
                    if (!has_child) containers.push_back(j);
                }
            }
            detail::PixelRect r{};
            std::optional<std::size_t> par;
            if (!containers.empty() && unit(rng) < config.nest_probability) {
                const std::size_t j = containers[std::uniform_int_distribution<std::size_t>(0, containers.size() - 1)(rng)];
                const auto& c = rects[j];
                const int w = side(min_side, std::max(min_side, c.w() / 2));
                const int h = side(min_side, std::max(min_side, c.h() / 2));
                // Centre region: the child's center stays within the middle half of the container.
                const int x_lo = std::max(c.x0 + 1, c.x0 + c.w() / 4 - w / 2);
                const int x_hi = std::min(c.x1 - 1 - w, c.x0 + 3 * c.w() / 4 - w / 2);
                const int y_lo = std::max(c.y0 + 1, c.y0 + c.h() / 4 - h / 2);
                const int y_hi = std::min(c.y1 - 1 - h, c.y0 + 3 * c.h() / 4 - h / 2);
                if (x_lo > x_hi || y_lo > y_hi) {
                    ok = false;
                    break;
                }
                r = {side(x_lo, x_hi), side(y_lo, y_hi), 0, 0};
                r.x1 = r.x0 + w;
                r.y1 = r.y0 + h;
                par = j;
            } else {
                const int w = side(min_side, max_side), h = side(min_side, max_side);
                r = {side(0, W - w), side(0, H - h), 0, 0};
                r.x1 = r.x0 + w;
                r.y1 = r.y0 + h;
                for (const auto& o : rects) {
                    if (r.x0 < o.x1 && o.x0 < r.x1 && r.y0 < o.y1 && o.y0 < r.y1) ok = false;
                }
            }
            rects.push_back(r);
            parent.push_back(par);
        }
        if (!ok) continue;

        std::vector<SubjectAnnotation> subjects;
        for (const auto& r : rects) {
            subjects.push_back({Box(double(r.x0) / W, double(r.y0) / H, double(r.x1) / W, double(r.y1) / H),
                                0, std::nullopt});
        }
        // Distinct best anchors so every shape is assignable on the detection grid.
        std::vector<std::size_t> anchors;
        for (const auto& s : subjects) {
            std::size_t best = 0;
            double best_iou = -1.0;
            for (std::size_t gy = 0; gy < config.grid_height; ++gy) {
                for (std::size_t gx = 0; gx < config.grid_width; ++gx) {
                    const Box a(double(gx) / config.grid_width, double(gy) / config.grid_height,
                                double(gx + 1) / config.grid_width, double(gy + 1) / config.grid_height);
                    const double v = iou(s.box, a);
                    if (v > best_iou) {
                        best_iou = v;
                        best = gy * config.grid_width + gx;
                    }
                }
            }
            if (std::find(anchors.begin(), anchors.end(), best) != anchors.end()) ok = false;
            anchors.push_back(best);
        }
        if (!ok) continue;

        std::vector<ShapeKind> kinds;
        for (std::size_t i = 0; i < subjects.size(); ++i) {
            const std::size_t k = std::uniform_int_distribution<std::size_t>(0, config.shapes.size() - 1)(rng);
            kinds.push_back(config.shapes[k]);
            subjects[i].label = static_cast<int>(k);
            int color = 0;
            do {
                color = std::uniform_int_distribution<int>(0, static_cast<int>(kPalette.size()) - 1)(rng);
            } while (parent[i] && subjects[*parent[i]].color == color);
            subjects[i].color = color;
        }

        SyntheticSample sample;
        sample.image = Image(config.image_height, config.image_width, kBackgroundLevel / 255.0);
        // Containers are always created before their children, so drawing in
        // creation order paints children on top.
        for (std::size_t i = 0; i < rects.size(); ++i) {
            detail::paint(sample.image, rects[i], kinds[i], kPalette[static_cast<std::size_t>(*subjects[i].color)]);
        }
        sample.annotation.image_id = id;
        sample.annotation.image_path = "images/" + id + ".ppm";
        sample.annotation.relationships = derive_relationships(subjects, config.predicates);
        sample.annotation.subjects = std::move(subjects);
        return sample;
    }
    throw Error("synthetic: could not place shapes; relax the size range or object count");
}

inline SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
    config.validate();
    SyntheticDataset ds;
    ds.vocabulary = synthetic_vocabulary(config);
    std::mt19937_64 rng(config.seed);
    for (std::size_t i = 0; i < config.num_images; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "%06zu", i);
        ds.samples.push_back(generate_scene(config, rng, id));
    }
    return ds;
}

/// Writes annotations.json plus images/<id>.ppm under `directory`.
inline void save_synthetic(const std::string& directory, const SyntheticDataset& ds) {
    std::filesystem::create_directories(std::filesystem::path(directory) / "images");
    for (const auto& s : ds.samples) {
        write_ppm((std::filesystem::path(directory) / s.annotation.image_path).string(), s.image);
    }
    save_annotations((std::filesystem::path(directory) / "annotations.json").string(), ds.annotations());
}

/// Annotations together with their decoded images.
struct LoadedDataset {
    AnnotationSet annotations;
    std::vector<Image> images;
};

inline LoadedDataset load_dataset(const std::string& annotation_path) {
    LoadedDataset ds{load_annotations(annotation_path), {}};
    for (const auto& img : ds.annotations.images) ds.images.push_back(read_ppm(resolve_image_path(annotation_path, img)));
    return ds;
}

}  // namespace barcnn
