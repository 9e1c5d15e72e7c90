#pragma once

// Run configuration for the command-line pipeline: one JSON file whose
// sections mirror the library option structs. Every key is optional except
// the seed, which may also come from the command line.
//
//   {
//     "seed": 7,
//     "model":     {"input_height": 64, "input_width": 64, "block_channels": [8, 16, 32],
//                   "grid_height": 8, "grid_width": 8, "not_visible_class": false},
//     "schedule":  {"epochs": 30, "initial_lr": 0.008, "decay_points": [0.5, 0.75],
//                   "decay_factor": 0.1, "batch_size": 8, "momentum": 0.9},
//     "loss":      {"negative_ratio": 3, "box_beta": 0.11, "focal": false},
//     "synthetic": {"train_images": 64, "test_images": 32, "min_objects": 2, "max_objects": 4,
//                   "min_size": 0.15, "max_size": 0.35, "nest_probability": 0.3,
//                   "shapes": ["rectangle", "ellipse"], "predicates": ["above", "below", "inside"]},
//     "inference": {"subject_threshold": 0.05, "pair_threshold": 0.01, "nms_iou": 0.5,
//                   "max_objects_per_subject": 20, "top_k": 100},
//     "baseline":  {"uniform_fallback": false},
//     "eval":      {"iou_threshold": 0.5, "oid_weights": [0.4, 0.4, 0.2],
//                   "action_roles": [{"predicate": "hold", "role": "object"}]}
//   }
//
// The synthetic image size and grid follow the model section.

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "barcnn/data.hpp"
#include "barcnn/inference.hpp"
#include "barcnn/metrics.hpp"
#include "barcnn/model.hpp"
#include "barcnn/training.hpp"

namespace barcnn {

/// A V-COCO (action, role) entry named by predicate string.
struct NamedActionRole {
    std::string predicate;
    std::optional<RoleSlot> role;
};

struct RunConfig {
    std::optional<std::uint64_t> seed;
    ModelConfig model;
    Schedule schedule;
    LossOptions loss;
    SyntheticConfig synthetic;
    std::size_t train_images = 64;
    std::size_t test_images = 32;
    InferenceOptions inference;
    bool uniform_fallback = false;
    double iou_threshold = 0.5;
    OidWeights oid_weights;
    std::vector<NamedActionRole> action_roles;

    std::uint64_t require_seed() const {
        if (!seed) throw Error("config: a seed is required (set \"seed\" or pass --seed)");
        return *seed;
    }

    /// Synthetic settings with the image size and grid taken from the model.
    SyntheticConfig synthetic_for(std::size_t images, std::uint64_t seed_value) const {
        SyntheticConfig c = synthetic;
        c.image_height = model.input_height;
        c.image_width = model.input_width;
        c.grid_height = model.grid_height;
        c.grid_width = model.grid_width;
        c.num_images = images;
        c.seed = seed_value;
        return c;
    }
};

namespace detail {

using json = nlohmann::json;

template <typename T>
void read_key(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ParseError("config: " + where + "." + key + ": wrong type");
    }
}

inline const json& section(const json& root, const char* name) {
    static const json empty = json::object();
    if (!root.contains(name)) return empty;
    if (!root.at(name).is_object()) throw ParseError(std::string("config: ") + name + ": expected an object");
    return root.at(name);
}

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || item.key() == k;
        if (!ok) throw ParseError("config: " + where + ": unknown key '" + item.key() + "'");
    }
}

inline std::optional<RoleSlot> role_from_string(const std::string& s, const std::string& where) {
    if (s.empty() || s == "any") return std::nullopt;
    if (s == "object") return RoleSlot::object;
    if (s == "instrument") return RoleSlot::instrument;
    throw ParseError("config: " + where + ": role must be object, instrument or any");
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
    using detail::json;
    using detail::read_key;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ParseError("config: expected a JSON object");
    detail::check_keys(root, "config",
                       {"seed", "model", "schedule", "loss", "synthetic", "inference", "baseline", "eval"});

    RunConfig c;
    if (root.contains("seed")) {
        if (!root["seed"].is_number_unsigned()) throw ParseError("config: seed must be a non-negative integer");
        c.seed = root["seed"].get<std::uint64_t>();
    }

    const auto& m = detail::section(root, "model");
    detail::check_keys(m, "model",
                       {"input_height", "input_width", "block_channels", "grid_height", "grid_width", "not_visible_class"});
    read_key(m, "input_height", c.model.input_height, "model");
    read_key(m, "input_width", c.model.input_width, "model");
    read_key(m, "block_channels", c.model.block_channels, "model");
    read_key(m, "grid_height", c.model.grid_height, "model");
    read_key(m, "grid_width", c.model.grid_width, "model");
    read_key(m, "not_visible_class", c.model.not_visible_class, "model");

    const auto& s = detail::section(root, "schedule");
    detail::check_keys(s, "schedule",
                       {"epochs", "initial_lr", "decay_points", "decay_factor", "batch_size", "momentum"});
    read_key(s, "epochs", c.schedule.epochs, "schedule");
    read_key(s, "initial_lr", c.schedule.initial_lr, "schedule");
    read_key(s, "decay_points", c.schedule.decay_points, "schedule");
    read_key(s, "decay_factor", c.schedule.decay_factor, "schedule");
    read_key(s, "batch_size", c.schedule.batch_size, "schedule");
    read_key(s, "momentum", c.schedule.momentum, "schedule");

    const auto& l = detail::section(root, "loss");
    detail::check_keys(l, "loss", {"negative_ratio", "box_beta", "focal"});
    read_key(l, "negative_ratio", c.loss.negative_ratio, "loss");
    read_key(l, "box_beta", c.loss.box_beta, "loss");
    read_key(l, "focal", c.loss.classification.focal, "loss");

    const auto& y = detail::section(root, "synthetic");
    detail::check_keys(y, "synthetic",
                       {"train_images", "test_images", "min_objects", "max_objects", "min_size", "max_size",
                        "nest_probability", "shapes", "predicates"});
    read_key(y, "train_images", c.train_images, "synthetic");
    read_key(y, "test_images", c.test_images, "synthetic");
    read_key(y, "min_objects", c.synthetic.min_objects, "synthetic");
    read_key(y, "max_objects", c.synthetic.max_objects, "synthetic");
    read_key(y, "min_size", c.synthetic.min_size, "synthetic");
    read_key(y, "max_size", c.synthetic.max_size, "synthetic");
    read_key(y, "nest_probability", c.synthetic.nest_probability, "synthetic");
    if (y.contains("shapes")) {
        std::vector<std::string> names;
        read_key(y, "shapes", names, "synthetic");
        c.synthetic.shapes.clear();
        for (const auto& n : names) {
            if (n == "rectangle") {
                c.synthetic.shapes.push_back(ShapeKind::rectangle);
            } else if (n == "ellipse") {
                c.synthetic.shapes.push_back(ShapeKind::ellipse);
            } else {
                throw ParseError("config: synthetic.shapes: unknown shape '" + n + "'");
            }
        }
    }
    if (y.contains("predicates")) {
        std::vector<std::string> names;
        read_key(y, "predicates", names, "synthetic");
        c.synthetic.predicates.clear();
        for (const auto& n : names) {
            const auto rule = predicate_rule_from_string(n);
            if (!rule) throw ParseError("config: synthetic.predicates: unknown rule '" + n + "'");
            c.synthetic.predicates.push_back(*rule);
        }
    }

    const auto& inf = detail::section(root, "inference");
    detail::check_keys(inf, "inference",
                       {"subject_threshold", "pair_threshold", "nms_iou", "max_objects_per_subject", "top_k"});
    read_key(inf, "subject_threshold", c.inference.subject_threshold, "inference");
    read_key(inf, "pair_threshold", c.inference.pair_threshold, "inference");
    read_key(inf, "nms_iou", c.inference.nms_iou, "inference");
    read_key(inf, "max_objects_per_subject", c.inference.max_objects_per_subject, "inference");
    read_key(inf, "top_k", c.inference.top_k, "inference");

    const auto& b = detail::section(root, "baseline");
    detail::check_keys(b, "baseline", {"uniform_fallback"});
    read_key(b, "uniform_fallback", c.uniform_fallback, "baseline");

    const auto& e = detail::section(root, "eval");
    detail::check_keys(e, "eval", {"iou_threshold", "oid_weights", "action_roles"});
    read_key(e, "iou_threshold", c.iou_threshold, "eval");
    if (e.contains("oid_weights")) {
        std::vector<double> w;
        read_key(e, "oid_weights", w, "eval");
        if (w.size() != 3) throw ParseError("config: eval.oid_weights: expected [relationship, phrase, recall@50]");
        c.oid_weights = {w[0], w[1], w[2]};
    }
    if (e.contains("action_roles")) {
        if (!e["action_roles"].is_array()) throw ParseError("config: eval.action_roles: expected an array");
        for (std::size_t i = 0; i < e["action_roles"].size(); ++i) {
            const auto& ar = e["action_roles"][i];
            const std::string where = "eval.action_roles[" + std::to_string(i) + "]";
            if (!ar.is_object() || !ar.contains("predicate") || !ar["predicate"].is_string()) {
                throw ParseError("config: " + where + ": expected {\"predicate\": name, \"role\": slot}");
            }
            NamedActionRole nar{ar["predicate"].get<std::string>(), std::nullopt};
            if (ar.contains("role")) {
                if (!ar["role"].is_string()) throw ParseError("config: " + where + ".role: expected a string");
                nar.role = detail::role_from_string(ar["role"].get<std::string>(), where + ".role");
            }
            c.action_roles.push_back(std::move(nar));
        }
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot read config " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    try {
        return parse_run_config(ss.str());
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Trained model description (model.json next to the checkpoint)
// ---------------------------------------------------------------------------

inline std::string model_description(const ModelConfig& config, const Vocabulary& vocabulary) {
    nlohmann::ordered_json j;
    j["format"] = "barcnn-model";
    j["version"] = 1;
    j["input_height"] = config.input_height;
    j["input_width"] = config.input_width;
    j["block_channels"] = config.block_channels;
    j["grid_height"] = config.grid_height;
    j["grid_width"] = config.grid_width;
    j["not_visible_class"] = config.not_visible_class;
    j["object_classes"] = vocabulary.object_classes;
    j["predicates"] = vocabulary.predicates;
    return j.dump(2) + "\n";
}

struct ModelDescription {
    ModelConfig config;
    Vocabulary vocabulary;
};

inline ModelDescription parse_model_description(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model description: invalid JSON: ") + e.what());
    }
    if (!j.is_object() || j.value("format", "") != "barcnn-model" || j.value("version", 0) != 1) {
        throw ParseError("model description: missing \"format\": \"barcnn-model\", \"version\": 1");
    }
    ModelDescription d;
    auto need = [&](const char* key) -> const json& {
        if (!j.contains(key)) throw ParseError(std::string("model description: missing '") + key + "'");
        return j.at(key);
    };
    try {
        d.config.input_height = need("input_height").get<std::size_t>();
        d.config.input_width = need("input_width").get<std::size_t>();
        d.config.block_channels = need("block_channels").get<std::vector<std::size_t>>();
        d.config.grid_height = need("grid_height").get<std::size_t>();
        d.config.grid_width = need("grid_width").get<std::size_t>();
        d.config.not_visible_class = need("not_visible_class").get<bool>();
        d.vocabulary.object_classes = need("object_classes").get<std::vector<std::string>>();
        d.vocabulary.predicates = need("predicates").get<std::vector<std::string>>();
    } catch (const json::type_error& e) {
        throw ParseError(std::string("model description: wrong type: ") + e.what());
    }
    d.config.num_object_classes = d.vocabulary.object_classes.size();
    d.config.num_predicates = d.vocabulary.predicates.size();
    d.config.validate();
    return d;
}

}  // namespace barcnn
