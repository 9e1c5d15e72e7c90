// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. Each check carries its own runtime budget.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "../oracles.hpp"
#include "barcnn/baselines.hpp"
#include "barcnn/gradcheck.hpp"
#include "barcnn/inference.hpp"
#include "barcnn/metrics.hpp"
#include "barcnn/training.hpp"

namespace fs = std::filesystem;
using namespace barcnn;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

Image random_image(std::mt19937_64& rng, std::size_t h, std::size_t w) {
    Image img(h, w);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : img.pixels) v = u(rng);
    return img;
}

std::optional<Box> random_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    while (true) {
        const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
        if (auto box = Box::try_make(std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d))) return box;
    }
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// 1 -------------------------------------------------------------------------

Outcome zero_init_identity() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<int> nblocks(1, 3), width(1, 6), classes(1, 3), preds(1, 4), coin(0, 1), scale(1, 2);
    int configs = 0;
    for (int trial = 0; trial < 50; ++trial) {
        ModelConfig c;
        const std::size_t blocks = static_cast<std::size_t>(nblocks(rng));
        c.block_channels.clear();
        for (std::size_t b = 0; b < blocks; ++b) c.block_channels.push_back(static_cast<std::size_t>(width(rng)));
        c.grid_height = static_cast<std::size_t>(scale(rng) * 2);
        c.grid_width = static_cast<std::size_t>(scale(rng) * 2);
        c.input_height = c.grid_height << blocks;
        c.input_width = c.grid_width << blocks;
        c.num_object_classes = static_cast<std::size_t>(classes(rng));
        c.num_predicates = static_cast<std::size_t>(preds(rng));
        c.not_visible_class = coin(rng) == 1;
        const ConditionedDetector model(c, rng());
        const auto img = random_image(rng, c.input_height, c.input_width);
        const auto reference = model.forward(img, encode(std::nullopt, c.input_height, c.input_width));
        for (int k = 0; k < 4; ++k) {
            const auto box = k == 0 ? std::optional<Box>(Box(0, 0, 1, 1)) : random_box(rng);
            const auto out = model.forward(img, encode(box, c.input_height, c.input_width));
            auto same = [](const nn::DiffArray& a, const nn::DiffArray& b) {
                return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
            };
            if (!same(out.box_deltas, reference.box_deltas) || !same(out.class_logits, reference.class_logits) ||
                !same(out.predicate_logits, reference.predicate_logits)) {
                return {false, "outputs differ for config " + std::to_string(trial)};
            }
        }
        ++configs;
    }
    return {true, std::to_string(configs) + " configs x 5 maps bitwise identical"};
}

// 2 -------------------------------------------------------------------------

Outcome gradient_suite() {
    std::map<std::string, GradCheckResult> worst;
    std::vector<std::string> failures;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (const auto& r : run_gradient_suite(seed)) {
            auto [it, inserted] = worst.emplace(r.op, r);
            if (r.error > it->second.error) it->second = r;
            if (!r.passed()) failures.push_back(r.op + "@" + std::to_string(seed) + "=" + fmt("%.2e", r.error));
        }
    }
    double lin = 0.0, nonlin = 0.0;
    for (const auto& [name, r] : worst) (r.linear ? lin : nonlin) = std::max(r.linear ? lin : nonlin, r.error);
    std::string detail = std::to_string(worst.size()) + " checks x 20 seeds, worst linear " + fmt("%.1e", lin) +
                         ", worst other " + fmt("%.1e", nonlin) + " (model_loss " +
                         fmt("%.1e", worst.at("model_loss").error) + ")";
    for (const auto& f : failures) detail += "; FAILED " + f;
    return {failures.empty(), detail};
}

// 3 -------------------------------------------------------------------------

Outcome attention_encoding() {
    std::mt19937_64 rng(303);
    std::uniform_int_distribution<std::size_t> dim(1, 64);
    std::uniform_int_distribution<int> kind(0, 9);
    for (int draw = 0; draw < 10000; ++draw) {
        const std::size_t h = dim(rng), w = dim(rng);
        const int k = kind(rng);
        const std::optional<Box> box = k == 0 ? std::nullopt : k == 1 ? std::optional<Box>(Box(0, 0, 1, 1)) : random_box(rng);
        const auto m = encode(box, h, w);
        if (m.raster().size() != h * w * 3) return {false, "raster size"};
        bool any_inside = false;
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) {
                double inside = 0.0;
                if (box) {
                    const double cx = (double(c) + 0.5) / double(w), cy = (double(r) + 0.5) / double(h);
                    inside = cx >= box->x_min() && cx < box->x_max() && cy >= box->y_min() && cy < box->y_max() ? 1.0 : 0.0;
                }
                any_inside = any_inside || inside == 1.0;
                if (m.at(r, c, 0) != inside || m.at(r, c, 1) != (box ? 0.0 : 1.0) || m.at(r, c, 2) != (box ? 1.0 : 0.0)) {
                    return {false, "channel mismatch at draw " + std::to_string(draw)};
                }
            }
        if (k == 1 && !any_inside) return {false, "full-image box left channel 0 empty"};
    }
    return {true, "10000 draws incl. empty and full-image boxes"};
}

// 4 -------------------------------------------------------------------------

Outcome sample_generation() {
    std::mt19937_64 rng(404);
    for (std::size_t k : {0u, 1u, 2u, 5u}) {
        for (int trial = 0; trial < 20; ++trial) {
            ImageAnnotation a;
            for (std::size_t i = 0; i < k; ++i) a.subjects.push_back({*random_box(rng), int(i % 2), std::nullopt});
            std::uniform_int_distribution<int> pred(0, 2), nrel(0, 6);
            if (k > 0) {
                std::uniform_int_distribution<std::size_t> subj(0, k - 1);
                for (int r = nrel(rng); r > 0; --r) {
                    if (pred(rng) == 0) {
                        a.relationships.push_back({subj(rng), pred(rng), std::nullopt, kNotVisibleLabel, std::nullopt});
                    } else {
                        a.relationships.push_back({subj(rng), pred(rng), *random_box(rng), int(r % 2), std::nullopt});
                    }
                }
            }
            const auto samples = generate_samples(a);
            if (samples.size() != k + 1) return {false, "k=" + std::to_string(k) + " gave " + std::to_string(samples.size())};
            if (!samples[0].subject_mode || samples[0].subject_box || samples[0].targets.size() != k) {
                return {false, "subject-mode sample malformed"};
            }
            for (const auto& t : samples[0].targets)
                if (!t.predicates.empty()) return {false, "subject-mode target carries predicates"};
            // Partition: the multiset of (subject, predicate, object) across
            // object-mode samples equals the annotation's relationships.
            std::multiset<std::tuple<std::size_t, int, int, double, double>> want, got;
            for (const auto& r : a.relationships) {
                const Box b = r.object_box ? *r.object_box : a.subjects[r.subject].box;
                want.insert({r.subject, r.predicate, r.object_label, b.x_min(), b.y_max()});
            }
            for (std::size_t i = 1; i < samples.size(); ++i) {
                const auto& s = samples[i];
                if (s.subject_mode || s.subject_index != i - 1 || s.subject_box != a.subjects[i - 1].box) {
                    return {false, "object-mode sample does not reference its subject"};
                }
                for (const auto& t : s.targets)
                    for (int p : t.predicates) got.insert({i - 1, p, t.label, t.box.x_min(), t.box.y_max()});
            }
            if (got != want) return {false, "relationship partition broken for k=" + std::to_string(k)};
        }
    }
    return {true, "k in {0,1,2,5}, 20 random annotations each"};
}

// 5 -------------------------------------------------------------------------

Outcome scoring_exactness() {
    std::size_t total = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(500 + seed);
        ModelConfig c;
        c.input_height = c.input_width = 16;
        c.block_channels = {4, 4};
        c.grid_height = c.grid_width = 4;
        c.num_object_classes = 2;
        c.num_predicates = 3;
        c.not_visible_class = seed % 2 == 1;
        ConditionedDetector model(c, seed);
        oracle::randomize_head(model, rng);
        InferenceOptions opt;
        opt.nms_iou = 1.0;
        opt.max_objects_per_subject = 1000;
        opt.top_k = 1000000;
        const auto img = random_image(rng, 16, 16);
        const auto got = detect_relationships(model, img, opt);
        const auto want = oracle::enumerate_relationships(model, img, opt);
        if (got != want) return {false, "mismatch at seed " + std::to_string(seed)};
        total += got.size();
    }
    return {true, "10 models on a 4x4 grid, " + std::to_string(total) + " triplets identical"};
}

// 6 -------------------------------------------------------------------------

Outcome metric_oracles() {
    std::mt19937_64 rng(606);
    double worst = 0.0;
    auto track = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    std::size_t instances = 0, ap_values = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto inst = oracle::random_instance(rng);
        const auto in = oracle::to_library(inst);
        ++instances;
        for (std::size_t k : {1u, 5u, 50u, 100u}) track(recall_at_k(in, k), oracle::recall(inst, k));
        track(predicate_mean_ap(in, 3, {0.5, true, true, MatchMode::triplet}), oracle::mean_over_predicates(inst, 3, false));
        track(predicate_mean_ap(in, 3, {0.5, true, true, MatchMode::phrase}), oracle::mean_over_predicates(inst, 3, true));
        std::vector<ActionRole> roles;
        for (int p = 0; p < 3; ++p) roles.push_back({p, trial % 2 ? std::optional(RoleSlot::object) : std::nullopt});
        const auto ar = ap_role(in, roles);
        for (std::size_t i = 0; i < roles.size(); ++i) {
            const int p = roles[i].predicate;
            const bool any = !roles[i].role;
            const auto want = oracle::pooled_ap(
                inst, false, false, false, [&](const oracle::Pred& x) { return x.predicate == p; },
                [&](const oracle::Gt& g) { return g.predicate == p && (any || g.role == 0); });
            if (want.has_value() != ar.per_action_role[i].has_value()) return {false, "AP_role presence differs"};
            if (want) {
                track(*ar.per_action_role[i], *want);
                ++ap_values;
            }
        }
        // Plain AP on the pooled flags of a random predicate.
        std::vector<bool> flags;
        std::bernoulli_distribution coin(0.5);
        for (int i = 0; i < 10; ++i) flags.push_back(coin(rng));
        const std::size_t n_gt = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true)) + trial % 3;
        const auto a = average_precision(flags, n_gt), b = oracle::ap(flags, n_gt);
        if (a.has_value() != b.has_value()) return {false, "AP presence differs"};
        if (a) track(*a, *b);
    }
    const bool ok = worst <= 1e-12;
    return {ok, std::to_string(instances) + " instances, " + std::to_string(ap_values) + " AP_role values, max |diff| " +
                    fmt("%.1e", worst)};
}

// 7 -------------------------------------------------------------------------

Outcome baseline_correctness() {
    std::mt19937_64 rng(707);
    std::uniform_int_distribution<int> lab(0, 2), pred(0, 2), n(1, 4), level(1, 9);
    std::size_t pairs = 0;
    for (int trial = 0; trial < 100; ++trial) {
        AnnotationSet set;
        set.vocabulary = {{"a", "b", "c"}, {"p", "q", "r"}};
        std::map<std::tuple<int, int, int>, std::uint64_t> counts[2];
        for (int i = 0; i < 5; ++i) {
            ImageAnnotation img;
            img.image_id = std::to_string(i);
            const int k = n(rng);
            for (int s = 0; s < k; ++s) img.subjects.push_back({oracle::lattice_box(rng), lab(rng), std::nullopt});
            for (int r = n(rng); r > 0; --r) {
                const std::size_t s = static_cast<std::size_t>(std::uniform_int_distribution<int>(0, k - 1)(rng));
                const Box o = oracle::lattice_box(rng);
                const int ol = lab(rng), p = pred(rng);
                img.relationships.push_back({s, p, o, ol, std::nullopt});
                ++counts[0][{img.subjects[s].label, ol, p}];
                if (oracle::box_iou(img.subjects[s].box, o) > 0.0) ++counts[1][{img.subjects[s].label, ol, p}];
            }
            set.images.push_back(img);
        }
        const PredicatePrior priors[2] = {fit_prior(set, PriorMode::freq), fit_prior(set, PriorMode::freq_overlap)};
        for (int m = 0; m < 2; ++m) {
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) {
                    std::uint64_t total = 0;
                    for (int p = 0; p < 3; ++p) total += counts[m][{a, b, p}];
                    for (int p = 0; p < 3; ++p) {
                        const double want = total ? double(counts[m][{a, b, p}]) / double(total) : 0.0;
                        if (priors[m].probability(a, b, p) != want) return {false, "prior differs from count"};
                    }
                }
        }
        std::vector<Detection> dets;
        for (int i = 0; i < 5; ++i) dets.push_back({oracle::lattice_box(rng), lab(rng), level(rng) / 10.0});
        std::set<std::tuple<std::size_t, std::size_t, int>> freq_keys;
        auto index_of = [&](const Detection& d) {
            return static_cast<std::size_t>(std::find(dets.begin(), dets.end(), d) - dets.begin());
        };
        for (const auto& r : score_pairs(dets, priors[0], 1000)) freq_keys.insert({index_of(r.subject), index_of(r.object), r.predicate});
        for (const auto& r : score_pairs(dets, priors[1], 1000)) {
            ++pairs;
            if (!freq_keys.count({index_of(r.subject), index_of(r.object), r.predicate})) {
                return {false, "FREQ-OVERLAP pair missing from FREQ output"};
            }
        }
    }
    return {true, "100 datasets, priors exact; " + std::to_string(pairs) + " FREQ-OVERLAP pairs all in FREQ"};
}

// 8 -------------------------------------------------------------------------

Outcome learning_signal() {
    double gap_sum = 0.0;
    std::string detail;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SyntheticConfig sc;
        sc.image_height = sc.image_width = 32;
        sc.grid_height = sc.grid_width = 4;
        sc.max_objects = 3;
        sc.max_size = 0.6;
        sc.nest_probability = 0.5;
        sc.num_images = 200;
        sc.seed = derive_seed(seed, "train");
        const auto train_set = generate_synthetic(sc);
        sc.num_images = 100;
        sc.seed = derive_seed(seed, "test");
        const auto test_set = generate_synthetic(sc);

        ModelConfig mc;
        mc.input_height = mc.input_width = 32;
        mc.grid_height = mc.grid_width = 4;
        mc.num_predicates = train_set.vocabulary.predicates.size();
        std::vector<Image> images;
        for (const auto& s : train_set.samples) images.push_back(s.image);
        const auto train_ann = train_set.annotations();
        Schedule schedule;
        schedule.epochs = 20;
        const auto result = train(images, train_ann, mc, schedule, seed);

        const auto prior = fit_prior(train_ann, PriorMode::freq_overlap);
        std::vector<ImagePredictions> model_preds, base_preds;
        for (const auto& s : test_set.samples) {
            model_preds.push_back({s.annotation.image_id, detect_relationships(result.model, s.image)});
            base_preds.push_back({s.annotation.image_id, score_pairs(detect_subjects(result.model, s.image), prior)});
        }
        const auto test_ann = test_set.annotations();
        const double rm = recall_at_k(align(model_preds, test_ann), 50);
        const double rb = recall_at_k(align(base_preds, test_ann), 50);
        gap_sum += rm - rb;
        detail += "seed " + std::to_string(seed) + ": model " + fmt("%.3f", rm) + " vs FREQ-OVERLAP " + fmt("%.3f", rb) + "; ";
    }
    const double gap = gap_sum / 3.0;
    return {gap >= 0.10, detail + "mean gap " + fmt("%.3f", gap) + " (need >= 0.100)"};
}

// 9 -------------------------------------------------------------------------

Outcome overfit() {
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SyntheticConfig sc;
        sc.image_height = sc.image_width = 32;
        sc.grid_height = sc.grid_width = 4;
        sc.min_objects = sc.max_objects = 3;
        sc.num_images = 2;
        sc.seed = derive_seed(seed, "overfit");
        const auto ds = generate_synthetic(sc);
        const auto ann = ds.annotations();
        ModelConfig mc;
        mc.input_height = mc.input_width = 32;
        mc.grid_height = mc.grid_width = 4;
        mc.num_predicates = ds.vocabulary.predicates.size();
        std::vector<Image> images;
        for (const auto& s : ds.samples) images.push_back(s.image);
        // One batch holds every sample, so each step sees the full objective.
        Schedule schedule;
        schedule.batch_size = all_samples(ann).size();
        schedule.epochs = 500;
        const auto result = train(images, ann, mc, schedule, seed);
        const double initial = result.trace.front().loss;
        std::optional<std::size_t> reached;
        for (const auto& r : result.trace) {
            if (r.loss < 0.1 * initial) {
                reached = r.step;
                break;
            }
        }
        std::vector<ImagePredictions> preds;
        std::size_t gt = 0;
        for (const auto& s : ds.samples) {
            preds.push_back({s.annotation.image_id, detect_relationships(result.model, s.image)});
            gt += s.annotation.relationships.size();
        }
        const double recall = recall_at_k(align(preds, ann), 50);
        ok = ok && reached && gt > 0 && recall == 1.0;
        detail += "seed " + std::to_string(seed) + ": loss " + fmt("%.3f", initial) + " -> " +
                  fmt("%.3f", result.trace.back().loss) + ", <10% at step " +
                  (reached ? std::to_string(*reached) : std::string("never")) + ", R@50 " + fmt("%.3f", recall) + " on " +
                  std::to_string(gt) + " GT; ";
    }
    return {ok, detail};
}

// 10 ------------------------------------------------------------------------

int run(const std::string& command) {
    const int rc = std::system((command + " > /dev/null").c_str());
    return rc;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream is(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << is.rdbuf();
        files[fs::relative(e.path(), root).string()] = ss.str();
    }
    return files;
}

Outcome determinism(const fs::path& work) {
    const std::string cli = BARCNN_CLI_PATH;
    std::map<std::string, std::string> runs[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path dir = work / ("run" + std::to_string(i));
        fs::remove_all(dir);
        const std::string d = dir.string();
        const std::string common = " --seed 2024 --threads 1";
        const std::vector<std::string> steps{
            cli + " synth" + common + " --out " + d + "/data",
            cli + " train" + common + " --quiet --data " + d + "/data/train/annotations.json --out " + d + "/model",
            cli + " predict" + common + " --model " + d + "/model --data " + d + "/data/test/annotations.json --out " + d + "/pred",
            cli + " eval" + common + " --predictions " + d + "/pred/predictions.tsv --data " + d +
                "/data/test/annotations.json --protocol vrd --out " + d + "/eval",
        };
        for (const auto& s : steps) {
            if (run(s) != 0) return {false, "command failed: " + s};
        }
        runs[i] = snapshot(dir);
    }
    if (runs[0].size() != runs[1].size()) return {false, "different file sets"};
    std::size_t bytes = 0;
    for (const auto& [name, content] : runs[0]) {
        const auto it = runs[1].find(name);
        if (it == runs[1].end() || it->second != content) return {false, "artifact differs: " + name};
        bytes += content.size();
    }
    return {true, std::to_string(runs[0].size()) + " artifacts (" + std::to_string(bytes) +
                      " bytes) identical across two default runs"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::string work_dir = "acceptance_work";
    std::vector<int> only;
    app.add_option("--work-dir", work_dir, "Scratch directory for pipeline runs");
    app.add_option("--only", only, "Run just these criteria (1-10)");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work_dir);

    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> criteria{
        {1, "zero-init identity", 60, zero_init_identity},
        {2, "gradient suite", 300, gradient_suite},
        {3, "attention encoding", 10, attention_encoding},
        {4, "sample generation", 1, sample_generation},
        {5, "scoring exactness", 10, scoring_exactness},
        {6, "metric oracles", 60, metric_oracles},
        {7, "baseline correctness", 10, baseline_correctness},
        {8, "learning signal vs FREQ-OVERLAP", 1200, learning_signal},
        {9, "overfit sanity", 120, overfit},
        {10, "pipeline determinism", 1500, [&] { return determinism(work_dir); }},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.budget_s;
        const bool ok = o.ok && in_time;
        if (!ok) ++failed;
        std::printf("%s  #%-2d %-32s %8.2fs (budget %.0fs)  %s%s\n", ok ? "PASS" : "FAIL", c.id, c.name, secs,
                    c.budget_s, o.detail.c_str(), in_time ? "" : " [over time budget]");
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
