// barcnn: synth, train, predict, eval, baseline and gradcheck commands.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "barcnn/baselines.hpp"
#include "barcnn/checkpoint.hpp"
#include "barcnn/data.hpp"
#include "barcnn/gradcheck.hpp"
#include "barcnn/inference.hpp"
#include "barcnn/metrics.hpp"
#include "barcnn/model.hpp"
#include "barcnn/random.hpp"
#include "barcnn/run_config.hpp"
#include "barcnn/training.hpp"

namespace fs = std::filesystem;
using namespace barcnn;

namespace {

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    unsigned threads = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Root seed (overrides the config)");
    cmd->add_option("--out", o.out_dir, "Output directory")->required();
    cmd->add_option("--threads", o.threads, "Worker threads for per-image work")->check(CLI::Range(1u, 256u));
}

RunConfig resolve(const CommonOptions& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
    if (o.seed) c.seed = o.seed;
    c.require_seed();
    fs::create_directories(o.out_dir);
    return c;
}

std::string out_path(const CommonOptions& o, const std::string& name) { return (fs::path(o.out_dir) / name).string(); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os << text;
}

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Runs fn(i) for i in [0, n) on `threads` workers. Results must be written
/// to per-index slots so the output does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

ConditionedDetector load_model(const std::string& model_dir, Vocabulary* vocabulary = nullptr) {
    const auto desc = parse_model_description(read_text((fs::path(model_dir) / "model.json").string()));
    ConditionedDetector model(desc.config);
    load_checkpoint((fs::path(model_dir) / "checkpoint.txt").string(), model.parameters());
    if (vocabulary) *vocabulary = desc.vocabulary;
    return model;
}

void check_vocabulary(const Vocabulary& model_vocab, const Vocabulary& data_vocab, const std::string& data_path) {
    if (!(model_vocab == data_vocab)) {
        throw Error(data_path + ": object classes / predicates differ from the ones the model was trained on");
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& o) {
    const auto c = resolve(o);
    const auto seed = c.require_seed();
    for (const auto& [split, count] : {std::pair{std::string("train"), c.train_images}, std::pair{std::string("test"), c.test_images}}) {
        const auto ds = generate_synthetic(c.synthetic_for(count, derive_seed(seed, "synth." + split)));
        save_synthetic(out_path(o, split), ds);
        std::size_t rels = 0;
        for (const auto& s : ds.samples) rels += s.annotation.relationships.size();
        std::cout << split << ": " << ds.samples.size() << " images, " << rels << " relationships -> "
                  << out_path(o, split) << "\n";
    }
    return 0;
}

int cmd_train(const CommonOptions& o, const std::string& data_path, std::optional<std::size_t> epochs, bool quiet) {
    auto c = resolve(o);
    if (epochs) c.schedule.epochs = *epochs;
    const auto ds = load_dataset(data_path);
    const auto& vocab = ds.annotations.vocabulary;

    ModelConfig mc = c.model;
    mc.num_object_classes = vocab.object_classes.size();
    mc.num_predicates = vocab.predicates.size();
    for (const auto& img : ds.annotations.images) {
        for (const auto& r : img.relationships) mc.not_visible_class = mc.not_visible_class || !r.object_visible();
    }
    mc.validate();

    const std::size_t log_every = 50;
    auto result = train(ds.images, ds.annotations, mc, c.schedule, derive_seed(c.require_seed(), "train"), c.loss,
                        [&](const LossRecord& r) {
                            if (!quiet && r.step % log_every == 0) {
                                std::cout << "step " << r.step << " lr " << r.learning_rate << " loss " << fmt(r.loss)
                                          << "\n";
                            }
                        });
    save_checkpoint(out_path(o, "checkpoint.txt"), result.model.parameters());
    write_text(out_path(o, "model.json"), model_description(mc, vocab));
    std::ofstream trace(out_path(o, "loss_trace.csv"), std::ios::binary);
    write_loss_trace(trace, result.trace);
    std::cout << "trained " << result.trace.size() << " steps, final loss " << fmt(result.trace.back().loss) << " -> "
              << o.out_dir << "\n";
    return 0;
}

int cmd_predict(const CommonOptions& o, const std::string& model_dir, const std::string& data_path) {
    const auto c = resolve(o);
    Vocabulary vocab;
    const auto model = load_model(model_dir, &vocab);
    const auto ds = load_dataset(data_path);
    check_vocabulary(vocab, ds.annotations.vocabulary, data_path);

    std::vector<ImagePredictions> predictions(ds.images.size());
    parallel_for(ds.images.size(), o.threads, [&](std::size_t i) {
        predictions[i] = {ds.annotations.images[i].image_id, detect_relationships(model, ds.images[i], c.inference)};
    });
    save_predictions(out_path(o, "predictions.tsv"), predictions);
    std::size_t n = 0;
    for (const auto& p : predictions) n += p.detections.size();
    std::cout << n << " relationships over " << predictions.size() << " images -> " << out_path(o, "predictions.tsv")
              << "\n";
    return 0;
}

int cmd_baseline(const CommonOptions& o, const std::string& mode_name, const std::string& train_path,
                 const std::string& model_dir, const std::string& data_path) {
    const auto c = resolve(o);
    auto prior = fit_prior(load_annotations(train_path), prior_mode_from_string(mode_name));
    prior.uniform_fallback = c.uniform_fallback;
    save_prior(out_path(o, "prior.tsv"), prior);

    Vocabulary vocab;
    const auto model = load_model(model_dir, &vocab);
    const auto ds = load_dataset(data_path);
    check_vocabulary(vocab, ds.annotations.vocabulary, data_path);
    std::vector<ImagePredictions> predictions(ds.images.size());
    parallel_for(ds.images.size(), o.threads, [&](std::size_t i) {
        const auto detections = detect_subjects(model, ds.images[i], c.inference.subject_threshold, c.inference.nms_iou);
        predictions[i] = {ds.annotations.images[i].image_id, score_pairs(detections, prior, c.inference.top_k)};
    });
    save_predictions(out_path(o, "predictions.tsv"), predictions);
    std::cout << to_string(prior.mode()) << " baseline -> " << out_path(o, "predictions.tsv") << "\n";
    return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& predictions_path, const std::string& data_path,
             const std::string& protocol) {
    const auto c = resolve(o);
    const auto annotations = load_annotations(data_path);
    const auto in = align(load_predictions(predictions_path), annotations);
    const auto& vocab = annotations.vocabulary;

    std::vector<std::pair<std::string, std::string>> report;
    std::size_t n_pred = 0, n_gt = 0;
    for (const auto& p : in.predictions) n_pred += p.size();
    for (const auto& g : in.ground_truth) n_gt += g.size();
    report.emplace_back("protocol", protocol);
    report.emplace_back("images", std::to_string(annotations.images.size()));
    report.emplace_back("predictions", std::to_string(n_pred));
    report.emplace_back("ground_truth", std::to_string(n_gt));

    if (protocol == "vcoco") {
        std::vector<ActionRole> roles;
        std::vector<std::string> names;
        if (c.action_roles.empty()) {
            for (std::size_t p = 0; p < vocab.predicates.size(); ++p) {
                roles.push_back({static_cast<int>(p), std::nullopt});
                names.push_back(vocab.predicates[p] + ".any");
            }
        } else {
            for (const auto& ar : c.action_roles) {
                const auto id = vocab.predicate_id(ar.predicate);
                if (!id) throw Error("config: eval.action_roles: unknown predicate '" + ar.predicate + "'");
                roles.push_back({*id, ar.role});
                names.push_back(ar.predicate + "." + (ar.role ? to_string(*ar.role) : "any"));
            }
        }
        const auto result = ap_role(in, roles, c.iou_threshold);
        for (std::size_t i = 0; i < roles.size(); ++i) {
            const auto& ap = result.per_action_role[i];
            report.emplace_back("ap_role." + names[i], ap ? fmt(*ap) : "n/a");
        }
        report.emplace_back("mean_ap_role", fmt(result.mean));
    } else if (protocol == "vrd") {
        report.emplace_back("recall@50", fmt(recall_at_k(in, 50, c.iou_threshold)));
        report.emplace_back("recall@100", fmt(recall_at_k(in, 100, c.iou_threshold)));
    } else if (protocol == "oid") {
        const auto s = oid_score(in, vocab.predicates.size(), c.oid_weights);
        report.emplace_back("relationship_map", fmt(s.relationship_map));
        report.emplace_back("phrase_map", fmt(s.phrase_map));
        report.emplace_back("recall@50", fmt(s.recall_at_50));
        report.emplace_back("oid_score", fmt(s.score));
    } else {
        throw Error("unknown protocol '" + protocol + "' (expected vcoco, vrd or oid)");
    }

    std::ostringstream text;
    for (const auto& [k, v] : report) text << k << '\t' << v << '\n';
    write_text(out_path(o, "report.txt"), text.str());
    std::cout << text.str();
    return 0;
}

int cmd_gradcheck(const CommonOptions& o, std::size_t rounds) {
    const auto c = resolve(o);
    std::map<std::string, GradCheckResult> worst;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < rounds; ++i) {
        for (const auto& r : run_gradient_suite(c.require_seed() + i)) {
            auto [it, inserted] = worst.emplace(r.op, r);
            if (inserted) order.push_back(r.op);
            if (r.error > it->second.error) it->second = r;
        }
    }
    std::ostringstream text;
    bool ok = true;
    for (const auto& name : order) {
        const auto& r = worst.at(name);
        char line[128];
        std::snprintf(line, sizeof line, "%-20s %.3e  (tolerance %.0e)  %s\n", name.c_str(), r.error, r.tolerance(),
                      r.passed() ? "ok" : "FAIL");
        text << line;
        ok = ok && r.passed();
    }
    write_text(out_path(o, "gradcheck.txt"), text.str());
    std::cout << text.str();
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Box-attention relationship detection toolkit"};
    app.require_subcommand(1);

    CommonOptions synth_o, train_o, predict_o, eval_o, baseline_o, grad_o;

    auto* synth = app.add_subcommand("synth", "Generate synthetic train/test splits under --out");
    add_common(synth, synth_o);

    std::string train_data;
    std::optional<std::size_t> epochs;
    bool quiet = false;
    auto* train_cmd = app.add_subcommand("train", "Train the detector; writes checkpoint.txt, model.json, loss_trace.csv");
    add_common(train_cmd, train_o);
    train_cmd->add_option("--data", train_data, "Training annotations.json")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--epochs", epochs, "Override schedule.epochs");
    train_cmd->add_flag("--quiet", quiet, "Do not print the loss every 50 steps");

    std::string predict_model, predict_data;
    auto* predict = app.add_subcommand("predict", "Detect relationships; writes predictions.tsv");
    add_common(predict, predict_o);
    predict->add_option("--model", predict_model, "Directory written by 'train'")->required()->check(CLI::ExistingDirectory);
    predict->add_option("--data", predict_data, "annotations.json of the split to run on")->required()->check(CLI::ExistingFile);

    std::string eval_predictions, eval_data, protocol;
    auto* eval = app.add_subcommand("eval", "Score a predictions file; writes report.txt");
    add_common(eval, eval_o);
    eval->add_option("--predictions", eval_predictions, "predictions.tsv")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data, "Ground-truth annotations.json")->required()->check(CLI::ExistingFile);
    eval->add_option("--protocol", protocol, "vcoco, vrd or oid")->required()->check(CLI::IsMember({"vcoco", "vrd", "oid"}));

    std::string mode, baseline_train, baseline_model, baseline_data;
    auto* baseline = app.add_subcommand("baseline", "Frequency-prior baseline; writes prior.tsv and predictions.tsv");
    add_common(baseline, baseline_o);
    baseline->add_option("--mode", mode, "freq or freq-overlap")->required()->check(CLI::IsMember({"freq", "freq-overlap"}));
    baseline->add_option("--train", baseline_train, "Annotations the prior is counted on")->required()->check(CLI::ExistingFile);
    baseline->add_option("--model", baseline_model, "Detector directory (subjects from the empty attention map)")
        ->required()
        ->check(CLI::ExistingDirectory);
    baseline->add_option("--data", baseline_data, "annotations.json of the split to run on")->required()->check(CLI::ExistingFile);

    std::size_t rounds = 20;
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every operation; writes gradcheck.txt");
    add_common(grad, grad_o);
    grad->add_option("--rounds", rounds, "Number of random rounds (seeds seed .. seed+rounds-1)")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(synth_o);
        if (*train_cmd) return cmd_train(train_o, train_data, epochs, quiet);
        if (*predict) return cmd_predict(predict_o, predict_model, predict_data);
        if (*eval) return cmd_eval(eval_o, eval_predictions, eval_data, protocol);
        if (*baseline) return cmd_baseline(baseline_o, mode, baseline_train, baseline_model, baseline_data);
        if (*grad) return cmd_gradcheck(grad_o, rounds);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
