#pragma once

// Frequency-prior baselines. A pair of plain detections (d_s, d_o) and a
// predicate p are scored
//
//   d_s.score * p(p | label_s, label_o) * d_o.score
//
// where the prior is a count table over training relationships. FREQ counts
// every annotated triple; FREQ_OVERLAP counts only triples whose boxes
// overlap, and only scores overlapping detection pairs.
//
// Prior table file: "# barcnn-prior 1 <freq|freq-overlap> <num_predicates>",
// a header row, then tab-separated (subject_label, object_label, predicate,
// count) rows in ascending key order.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "barcnn/data.hpp"
#include "barcnn/geometry.hpp"
#include "barcnn/inference.hpp"

namespace barcnn {

enum class PriorMode { freq, freq_overlap };

inline const char* to_string(PriorMode m) { return m == PriorMode::freq ? "freq" : "freq-overlap"; }

inline PriorMode prior_mode_from_string(const std::string& s) {
    if (s == "freq") return PriorMode::freq;
    if (s == "freq-overlap") return PriorMode::freq_overlap;
    throw Error("unknown baseline mode '" + s + "' (expected freq or freq-overlap)");
}

class PredicatePrior {
public:
    using LabelPair = std::pair<int, int>;

    PredicatePrior(PriorMode mode, std::size_t num_predicates) : mode_(mode), num_predicates_(num_predicates) {}

    PriorMode mode() const { return mode_; }
    std::size_t num_predicates() const { return num_predicates_; }
    const std::map<LabelPair, std::vector<std::uint64_t>>& counts() const { return counts_; }

    /// Unseen pairs give 0, or 1/P when the uniform fallback is enabled.
    bool uniform_fallback = false;

    void add(int subject_label, int object_label, int predicate, std::uint64_t count = 1) {
        if (predicate < 0 || static_cast<std::size_t>(predicate) >= num_predicates_) {
            throw Error("prior: predicate id out of range");
        }
        auto& row = counts_[{subject_label, object_label}];
        row.resize(num_predicates_, 0);
        row[static_cast<std::size_t>(predicate)] += count;
    }

    double probability(int subject_label, int object_label, int predicate) const {
        const auto it = counts_.find({subject_label, object_label});
        if (it == counts_.end()) return uniform_fallback ? 1.0 / static_cast<double>(num_predicates_) : 0.0;
        std::uint64_t total = 0;
        for (auto c : it->second) total += c;
        if (total == 0) return uniform_fallback ? 1.0 / static_cast<double>(num_predicates_) : 0.0;
        return static_cast<double>(it->second[static_cast<std::size_t>(predicate)]) / static_cast<double>(total);
    }

    friend bool operator==(const PredicatePrior& a, const PredicatePrior& b) {
        return a.mode_ == b.mode_ && a.num_predicates_ == b.num_predicates_ && a.counts_ == b.counts_;
    }

private:
    PriorMode mode_;
    std::size_t num_predicates_;
    std::map<LabelPair, std::vector<std::uint64_t>> counts_;
};

/// Not-visible relationships have no object box and are skipped.
inline PredicatePrior fit_prior(const AnnotationSet& train, PriorMode mode) {
    PredicatePrior prior(mode, train.vocabulary.predicates.size());
    for (const auto& img : train.images) {
        for (const auto& r : img.relationships) {
            if (!r.object_visible()) continue;
            const auto& subject = img.subjects.at(r.subject);
            if (mode == PriorMode::freq_overlap && !overlaps(subject.box, *r.object_box)) continue;
            prior.add(subject.label, r.object_label, r.predicate);
        }
    }
    return prior;
}

/// Scores every ordered pair of distinct detections under every predicate
/// with nonzero prior, sorted by score (ties keep (subject, object,
/// predicate) enumeration order), truncated to top_k.
inline std::vector<RelationshipDetection> score_pairs(std::span<const Detection> detections, const PredicatePrior& prior,
                                                      std::size_t top_k = 100) {
    std::vector<RelationshipDetection> out;
    for (std::size_t s = 0; s < detections.size(); ++s) {
        for (std::size_t o = 0; o < detections.size(); ++o) {
            if (s == o) continue;
            const auto& ds = detections[s];
            const auto& d_o = detections[o];
            if (prior.mode() == PriorMode::freq_overlap && !overlaps(ds.box, d_o.box)) continue;
            for (std::size_t p = 0; p < prior.num_predicates(); ++p) {
                const double pr = prior.probability(ds.label, d_o.label, static_cast<int>(p));
                if (pr <= 0.0) continue;
                out.push_back({ds, static_cast<int>(p), d_o, ds.score * pr * d_o.score, false});
            }
        }
    }
    sort_by_score(out);
    truncate(out, top_k);
    return out;
}

inline void write_prior(std::ostream& os, const PredicatePrior& prior) {
    os << "# barcnn-prior 1 " << to_string(prior.mode()) << ' ' << prior.num_predicates() << '\n';
    os << "subject_label\tobject_label\tpredicate\tcount\n";
    for (const auto& [key, row] : prior.counts()) {
        for (std::size_t p = 0; p < row.size(); ++p) {
            if (row[p] == 0) continue;
            os << key.first << '\t' << key.second << '\t' << p << '\t' << row[p] << '\n';
        }
    }
}

inline PredicatePrior read_prior(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("prior: empty file");
    std::istringstream head(line);
    std::string hash, magic, mode;
    int version = 0;
    std::size_t predicates = 0;
    if (!(head >> hash >> magic >> version >> mode >> predicates) || hash != "#" || magic != "barcnn-prior" ||
        version != 1) {
        throw ParseError("prior: missing '# barcnn-prior 1 <mode> <num_predicates>' header");
    }
    PredicatePrior prior(prior_mode_from_string(mode), predicates);
    std::getline(is, line);
    std::size_t line_no = 2;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        int s = 0, o = 0, p = 0;
        std::uint64_t c = 0;
        if (!(row >> s >> o >> p >> c)) throw ParseError("prior line " + std::to_string(line_no) + ": malformed row");
        prior.add(s, o, p, c);
    }
    return prior;
}

inline void save_prior(const std::string& path, const PredicatePrior& prior) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write prior " + path);
    write_prior(os, prior);
}

}  // namespace barcnn
