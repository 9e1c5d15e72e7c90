#include <catch_amalgamated.hpp>

#include <random>
#include <set>

#include "barcnn/training.hpp"

using namespace barcnn;
using Catch::Matchers::WithinRel;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.input_height = c.input_width = 16;
    c.block_channels = {4, 4};
    c.grid_height = c.grid_width = 4;
    c.num_object_classes = 2;
    c.num_predicates = 3;
    return c;
}

ImageAnnotation annotation_with(std::size_t k) {
    ImageAnnotation a;
    a.image_id = "k" + std::to_string(k);
    for (std::size_t i = 0; i < k; ++i) {
        // One grid cell per subject on a 4x4 grid.
        const double x = 0.25 * static_cast<double>(i % 4) + 0.05, y = 0.1 + 0.5 * static_cast<double>(i / 4);
        a.subjects.push_back({Box(x, y, x + 0.1, y + 0.2), static_cast<int>(i % 2), std::nullopt});
    }
    // Every subject relates to the next one; subject 0 also to a free box twice.
    for (std::size_t i = 0; i + 1 < k; ++i) {
        a.relationships.push_back({i, 0, a.subjects[i + 1].box, a.subjects[i + 1].label, std::nullopt});
    }
    if (k > 0) {
        a.relationships.push_back({0, 1, Box(0.6, 0.6, 0.9, 0.9), 1, std::nullopt});
        a.relationships.push_back({0, 2, Box(0.6, 0.6, 0.9, 0.9), 1, std::nullopt});
    }
    return a;
}

}  // namespace

TEST_CASE("k subjects give k+1 samples that partition the relationships") {
    for (std::size_t k : {0u, 1u, 2u, 5u}) {
        const auto a = annotation_with(k);
        const auto samples = generate_samples(a, 3);
        REQUIRE(samples.size() == k + 1);

        CHECK(samples[0].subject_mode);
        CHECK_FALSE(samples[0].subject_box.has_value());
        CHECK(samples[0].targets.size() == k);
        for (const auto& t : samples[0].targets) CHECK(t.predicates.empty());

        // Each relationship lands in exactly the sample of its subject.
        std::multiset<std::tuple<std::size_t, int, double, double, int>> want, got;
        for (const auto& r : a.relationships) want.insert({r.subject, r.predicate, r.object_box->x_min(), r.object_box->y_min(), r.object_label});
        for (std::size_t i = 1; i < samples.size(); ++i) {
            const auto& s = samples[i];
            CHECK_FALSE(s.subject_mode);
            CHECK(s.image_index == 3);
            REQUIRE(s.subject_index == i - 1);
            CHECK(s.subject_box == a.subjects[i - 1].box);
            for (const auto& t : s.targets)
                for (int p : t.predicates) got.insert({*s.subject_index, p, t.box.x_min(), t.box.y_min(), t.label});
        }
        CHECK(got == want);
    }
}

TEST_CASE("relationships sharing an object merge into one target") {
    ImageAnnotation a;
    a.subjects.push_back({Box(0.1, 0.1, 0.4, 0.9), 0, std::nullopt});
    const Box horse(0.3, 0.4, 0.9, 0.9);
    a.relationships.push_back({0, 0, horse, 1, std::nullopt});  // ride
    a.relationships.push_back({0, 2, horse, 1, std::nullopt});  // hold
    const auto samples = generate_samples(a);
    REQUIRE(samples.size() == 2);
    REQUIRE(samples[1].targets.size() == 1);
    CHECK(samples[1].targets[0].box == horse);
    CHECK(samples[1].targets[0].predicates == std::vector<int>{0, 2});
}

TEST_CASE("not-visible objects target the subject box") {
    ImageAnnotation a;
    a.subjects.push_back({Box(0.1, 0.1, 0.4, 0.9), 0, std::nullopt});
    a.relationships.push_back({0, 1, std::nullopt, kNotVisibleLabel, std::nullopt});
    const auto samples = generate_samples(a);
    REQUIRE(samples[1].targets.size() == 1);
    CHECK(samples[1].targets[0].box == a.subjects[0].box);
    CHECK(samples[1].targets[0].label == kNotVisibleLabel);

    auto c = tiny_config();
    std::mt19937_64 rng(0);
    CHECK_THROWS_AS(build_targets(c, samples[1], rng), ShapeError);
    c.not_visible_class = true;
    const auto t = build_targets(c, samples[1], rng);
    const std::size_t anchor = best_anchor(c, a.subjects[0].box);
    CHECK(t.class_targets[anchor * 3 + 2] == 1.0);
    CHECK(t.predicate_targets[anchor * 3 + 1] == 1.0);
}

TEST_CASE("anchor targets and negative subsampling") {
    const auto c = tiny_config();
    const auto samples = generate_samples(annotation_with(2));
    std::mt19937_64 rng(4);
    const auto t = build_targets(c, samples[0], rng, 3);
    CHECK(t.positives == 2);
    CHECK(t.negatives == 6);
    std::size_t weighted_anchors = 0;
    for (std::size_t a = 0; a < c.num_anchors(); ++a) weighted_anchors += t.class_weights[a * 2] > 0 ? 1 : 0;
    CHECK(weighted_anchors == 8);
    // Subject-mode samples carry no predicate positives.
    for (double v : t.predicate_targets) CHECK(v == 0.0);
    // Positives regress towards their box.
    const std::size_t a0 = best_anchor(c, samples[0].targets[0].box);
    const auto d = encode_box(samples[0].targets[0].box, anchor_box(c, a0 / 4, a0 % 4));
    for (std::size_t i = 0; i < 4; ++i) CHECK(t.box_targets[a0 * 4 + i] == d[i]);

    // No positives still keeps negative_ratio negatives.
    const auto empty = generate_samples(annotation_with(0));
    const auto te = build_targets(c, empty[0], rng, 3);
    CHECK(te.positives == 0);
    CHECK(te.negatives == 3);
}

TEST_CASE("subject-mode loss ignores relationship annotations") {
    const auto c = tiny_config();
    const ConditionedDetector model(c, 2);
    Image img(16, 16, 0.3);
    auto with = annotation_with(3);
    auto without = with;
    without.relationships.clear();
    std::mt19937_64 r1(9), r2(9);
    const double a = sample_loss(model, img, generate_samples(with)[0], r1).item();
    const double b = sample_loss(model, img, generate_samples(without)[0], r2).item();
    CHECK(a == b);
}

TEST_CASE("learning rate schedule") {
    Schedule s;
    CHECK(s.learning_rate(0.0) == 8e-3);
    CHECK(s.learning_rate(0.49) == 8e-3);
    CHECK_THAT(s.learning_rate(0.6), WithinRel(8e-4, 1e-12));
    CHECK_THAT(s.learning_rate(0.8), WithinRel(8e-5, 1e-12));
    s.decay_points = {0.7, 0.5};
    CHECK_THROWS_AS(s.validate(), Error);
    s = Schedule{};
    s.epochs = 0;
    CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("training is deterministic and reduces the loss") {
    SyntheticConfig sc;
    sc.image_height = sc.image_width = 16;
    sc.grid_height = sc.grid_width = 4;
    sc.num_images = 2;
    sc.max_objects = 2;
    sc.max_size = 0.5;
    sc.seed = 5;
    const auto ds = generate_synthetic(sc);
    std::vector<Image> images;
    for (const auto& s : ds.samples) images.push_back(s.image);
    const auto ann = ds.annotations();
    auto c = tiny_config();
    c.num_predicates = ann.vocabulary.predicates.size();
    Schedule sched;
    sched.epochs = 40;
    sched.batch_size = 2;

    const auto a = train(images, ann, c, sched, 1);
    const auto b = train(images, ann, c, sched, 1);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].loss == b.trace[i].loss);
    CHECK(a.trace.back().loss < 0.5 * a.trace.front().loss);

    CHECK_THROWS_AS(train(images, AnnotationSet{}, c, sched, 1), Error);
}
