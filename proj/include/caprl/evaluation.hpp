#pragma once

// Corpus-level BLEU.
//
// Clipped n-gram matches and candidate n-gram totals are summed over the
// whole corpus before forming the modified precisions p_n. A precision whose
// match count is zero is smoothed to (0 + 1e-9) / total (or 1e-9 when there
// are no candidate n-grams of that order at all). The reference length r is
// the sum over images of the reference length closest to the candidate
// (shorter wins ties), c is the total candidate length, and
//
//   BP    = 1 if c >= r, exp(1 - r/c) otherwise (0 when c = 0)
//   score = 100 * BP * exp(sum_n ln(p_n) / max_n)

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "caprl/corpus.hpp"

namespace caprl {

using Tokens = std::vector<std::string>;

/// image_id -> cleaned reference captions.
using ReferenceSet = std::map<std::string, std::vector<Tokens>>;

/// image_id -> candidate caption tokens.
using CandidateSet = std::map<std::string, Tokens>;

inline ReferenceSet build_references(const CleanCorpus& corpus) {
    if (corpus.empty()) throw EmptyCorpusError("cannot build references from an empty corpus");
    ReferenceSet refs;
    for (const auto& [id, caps] : corpus) {
        if (caps.empty()) throw ValidationError("image '" + id + "' has no reference captions");
        refs[id] = caps;
    }
    return refs;
}

inline constexpr double kBleuSmoothing = 1e-9;

struct BleuReport {
    std::size_t max_n = 4;
    std::vector<double> precisions;        // p_1..p_max_n after smoothing
    std::vector<std::size_t> matches;      // clipped matches per order
    std::vector<std::size_t> totals;       // candidate n-grams per order
    std::size_t candidate_length = 0;      // c
    std::size_t reference_length = 0;      // r
    double brevity_penalty = 0.0;
    double score = 0.0;
};

inline nlohmann::json to_json_report(const BleuReport& r) {
    return {{"p", r.precisions}, {"bp", r.brevity_penalty}, {"score", r.score}};
}

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const Tokens& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

inline std::size_t closest_reference_length(std::size_t c, const std::vector<Tokens>& refs) {
    std::size_t best = refs.front().size();
    for (const auto& r : refs) {
        const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
        if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    return best;
}

}  // namespace detail

/// Combines per-order counts into a report; shared by every BLEU route.
inline BleuReport bleu_from_counts(std::vector<std::size_t> matches, std::vector<std::size_t> totals, std::size_t c,
                                   std::size_t r) {
    BleuReport rep;
    rep.max_n = matches.size();
    rep.matches = std::move(matches);
    rep.totals = std::move(totals);
    rep.candidate_length = c;
    rep.reference_length = r;

    double log_sum = 0.0;
    for (std::size_t n = 0; n < rep.max_n; ++n) {
        double p = 0.0;
        if (rep.totals[n] == 0) {
            p = kBleuSmoothing;
        } else if (rep.matches[n] == 0) {
            p = kBleuSmoothing / static_cast<double>(rep.totals[n]);
        } else {
            p = static_cast<double>(rep.matches[n]) / static_cast<double>(rep.totals[n]);
        }
        rep.precisions.push_back(p);
        log_sum += std::log(p);
    }
    if (c == 0) {
        rep.brevity_penalty = 0.0;
    } else if (c >= r) {
        rep.brevity_penalty = 1.0;
    } else {
        rep.brevity_penalty = std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
    }
    rep.score = 100.0 * rep.brevity_penalty * std::exp(log_sum / static_cast<double>(rep.max_n));
    return rep;
}

inline BleuReport corpus_bleu(const CandidateSet& candidates, const ReferenceSet& refs, std::size_t max_n = 4) {
    if (max_n == 0) throw ConfigError("BLEU order must be positive");
    std::vector<std::size_t> matches(max_n, 0), totals(max_n, 0);
    std::size_t c = 0, r = 0;
    for (const auto& [id, cand] : candidates) {
        auto it = refs.find(id);
        if (it == refs.end() || it->second.empty()) {
            throw MissingReferenceError("no reference captions for candidate image '" + id + "'");
        }
        const auto& image_refs = it->second;
        c += cand.size();
        r += detail::closest_reference_length(cand.size(), image_refs);
        for (std::size_t n = 1; n <= max_n; ++n) {
            const auto cand_counts = detail::ngram_counts(cand, n);
            std::map<std::vector<std::string>, std::size_t> max_ref;
            for (const auto& ref : image_refs) {
                for (const auto& [gram, count] : detail::ngram_counts(ref, n)) {
                    max_ref[gram] = std::max(max_ref[gram], count);
                }
            }
            for (const auto& [gram, count] : cand_counts) {
                totals[n - 1] += count;
                auto m = max_ref.find(gram);
                if (m != max_ref.end()) matches[n - 1] += std::min(count, m->second);
            }
        }
    }
    return bleu_from_counts(std::move(matches), std::move(totals), c, r);
}

/// Unigram F1 with clipped counts; 0 when either side is empty.
inline double unigram_f1(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    std::map<std::string, std::size_t> ref_counts;
    for (const auto& w : reference) ++ref_counts[w];
    std::size_t overlap = 0;
    for (const auto& w : candidate) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(candidate.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(reference.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace caprl
