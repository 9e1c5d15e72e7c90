#include <catch_amalgamated.hpp>

#include <map>
#include <random>
#include <set>
#include <sstream>

#include "barcnn/baselines.hpp"
#include "oracles.hpp"

using namespace barcnn;
using Catch::Matchers::WithinAbs;

namespace {

AnnotationSet person_horse() {
    AnnotationSet set;
    set.vocabulary = {{"person", "horse"}, {"ride", "feed", "hold"}};
    ImageAnnotation img;
    img.image_id = "0";
    img.subjects = {{Box(0.1, 0.1, 0.3, 0.5), 0, std::nullopt},
                    {Box(0.6, 0.1, 0.8, 0.5), 0, std::nullopt},
                    {Box(0.1, 0.6, 0.3, 0.9), 0, std::nullopt}};
    img.relationships = {{0, 0, Box(0.2, 0.3, 0.5, 0.7), 1, std::nullopt},   // ride, overlapping
                         {1, 0, Box(0.55, 0.3, 0.9, 0.7), 1, std::nullopt},  // ride, overlapping
                         {2, 1, Box(0.5, 0.6, 0.9, 0.9), 1, std::nullopt},   // feed, apart
                         {2, 2, std::nullopt, kNotVisibleLabel, std::nullopt}};
    set.images.push_back(img);
    return set;
}

AnnotationSet random_set(std::mt19937_64& rng) {
    AnnotationSet set;
    set.vocabulary = {{"a", "b", "c"}, {"p", "q", "r"}};
    std::uniform_int_distribution<int> lab(0, 2), n(1, 4);
    for (int i = 0; i < 6; ++i) {
        ImageAnnotation img;
        img.image_id = std::to_string(i);
        const int k = n(rng);
        for (int s = 0; s < k; ++s) img.subjects.push_back({oracle::lattice_box(rng), lab(rng), std::nullopt});
        const int r = n(rng);
        for (int j = 0; j < r; ++j) {
            img.relationships.push_back({static_cast<std::size_t>(std::uniform_int_distribution<int>(0, k - 1)(rng)),
                                         lab(rng), oracle::lattice_box(rng), lab(rng), std::nullopt});
        }
        set.images.push_back(img);
    }
    return set;
}

}  // namespace

TEST_CASE("frequency prior counts") {
    const auto set = person_horse();
    const auto freq = fit_prior(set, PriorMode::freq);
    CHECK_THAT(freq.probability(0, 1, 0), WithinAbs(2.0 / 3.0, 1e-15));
    CHECK_THAT(freq.probability(0, 1, 1), WithinAbs(1.0 / 3.0, 1e-15));
    CHECK(freq.probability(0, 1, 2) == 0.0);
    // Unseen pair: zero unless the uniform fallback is on.
    CHECK(freq.probability(1, 0, 0) == 0.0);
    auto fallback = freq;
    fallback.uniform_fallback = true;
    CHECK_THAT(fallback.probability(1, 0, 2), WithinAbs(1.0 / 3.0, 1e-15));

    const auto overlap = fit_prior(set, PriorMode::freq_overlap);
    CHECK(overlap.probability(0, 1, 0) == 1.0);
    CHECK(overlap.probability(0, 1, 1) == 0.0);
}

TEST_CASE("priors match a counting oracle and rows sum to one") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto set = random_set(rng);
        for (auto mode : {PriorMode::freq, PriorMode::freq_overlap}) {
            std::map<std::tuple<int, int, int>, std::uint64_t> count;
            std::map<std::pair<int, int>, std::uint64_t> total;
            for (const auto& img : set.images)
                for (const auto& r : img.relationships) {
                    const auto& s = img.subjects[r.subject];
                    if (mode == PriorMode::freq_overlap && oracle::box_iou(s.box, *r.object_box) == 0.0) continue;
                    ++count[{s.label, r.object_label, r.predicate}];
                    ++total[{s.label, r.object_label}];
                }
            const auto prior = fit_prior(set, mode);
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) {
                    double row = 0.0;
                    for (int p = 0; p < 3; ++p) {
                        const auto it = count.find({a, b, p});
                        const double want = it == count.end() ? 0.0 : double(it->second) / double(total[{a, b}]);
                        CHECK(prior.probability(a, b, p) == want);
                        row += prior.probability(a, b, p);
                    }
                    if (total.count({a, b})) CHECK_THAT(row, WithinAbs(1.0, 1e-12));
                }
        }
    }
}

TEST_CASE("modes coincide when every pair overlaps") {
    auto set = person_horse();
    set.images[0].relationships.erase(set.images[0].relationships.begin() + 2);
    auto a = fit_prior(set, PriorMode::freq);
    const auto b = fit_prior(set, PriorMode::freq_overlap);
    CHECK(a.counts() == b.counts());
}

TEST_CASE("pair scoring") {
    PredicatePrior prior(PriorMode::freq, 2);
    prior.add(0, 1, 0);
    prior.add(0, 1, 1);
    const Detection s{Box(0.0, 0.0, 0.5, 0.5), 0, 0.9}, o{Box(0.5, 0.5, 1.0, 1.0), 1, 0.8};
    CHECK(score_pairs(std::vector{s}, prior).empty());
    const auto out = score_pairs(std::vector{s, o}, prior);
    REQUIRE(out.size() == 2);
    for (const auto& r : out) {
        CHECK_THAT(r.score, WithinAbs(0.36, 1e-12));
        CHECK(r.subject == s);
        CHECK(r.object == o);
    }
    CHECK(out[0].predicate == 0);
    CHECK(out[1].predicate == 1);

    PredicatePrior overlap(PriorMode::freq_overlap, 2);
    overlap.add(0, 1, 0);
    CHECK(score_pairs(std::vector{s, o}, overlap).empty());
}

TEST_CASE("pair scoring matches enumeration and overlap pairs are a subset") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> lab(0, 2), level(1, 9);
    for (int trial = 0; trial < 100; ++trial) {
        const auto set = random_set(rng);
        std::vector<Detection> dets;
        for (int i = 0; i < 5; ++i) dets.push_back({oracle::lattice_box(rng), lab(rng), level(rng) / 10.0});
        const auto freq = fit_prior(set, PriorMode::freq);
        auto overlap = fit_prior(set, PriorMode::freq_overlap);

        std::vector<RelationshipDetection> want;
        for (std::size_t i = 0; i < dets.size(); ++i)
            for (std::size_t j = 0; j < dets.size(); ++j) {
                if (i == j) continue;
                for (int p = 0; p < 3; ++p) {
                    const double pr = freq.probability(dets[i].label, dets[j].label, p);
                    if (pr > 0) want.push_back({dets[i], p, dets[j], dets[i].score * pr * dets[j].score, false});
                }
            }
        std::stable_sort(want.begin(), want.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
        CHECK(score_pairs(dets, freq, 1000) == want);

        // Same counts for both modes isolates the pair filter.
        PredicatePrior same(PriorMode::freq_overlap, 3);
        for (const auto& [key, row] : freq.counts())
            for (std::size_t p = 0; p < row.size(); ++p)
                if (row[p]) same.add(key.first, key.second, static_cast<int>(p), row[p]);
        const auto all = score_pairs(dets, freq, 1000);
        auto key = [](const RelationshipDetection& r) {
            return std::tuple(r.subject.box.x_min(), r.subject.box.y_min(), r.subject.box.x_max(), r.subject.box.y_max(),
                              r.subject.label, r.object.box.x_min(), r.object.box.y_min(), r.object.box.x_max(),
                              r.object.box.y_max(), r.object.label, r.predicate);
        };
        std::set<decltype(key(all[0]))> freq_keys;
        for (const auto& r : all) freq_keys.insert(key(r));
        for (const auto& r : score_pairs(dets, overlap, 1000)) CHECK(freq_keys.count(key(r)) == 1);
        for (const auto& r : score_pairs(dets, same, 1000)) {
            CHECK(freq_keys.count(key(r)) == 1);
            CHECK(overlaps(r.subject.box, r.object.box));
        }
    }
}

TEST_CASE("prior file round trip") {
    const auto prior = fit_prior(person_horse(), PriorMode::freq);
    std::stringstream ss;
    write_prior(ss, prior);
    const auto back = read_prior(ss);
    CHECK(back == prior);
    std::stringstream bad("# barcnn-prior 2 freq 3\n");
    CHECK_THROWS_AS(read_prior(bad), ParseError);
    CHECK_THROWS_AS(prior_mode_from_string("oracle"), Error);
}
