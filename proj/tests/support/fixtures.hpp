#pragma once

// Fixtures shared by the unit tests and the acceptance binary.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "caprl/caption_model.hpp"
#include "caprl/critic.hpp"
#include "caprl/evaluation.hpp"
#include "caprl/rlhf.hpp"
#include "caprl/toy_data.hpp"

namespace caprl::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "caprl") {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::size_t count_lines(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

inline std::shared_ptr<const ImageFeature> shared_feature(std::string id, Vector v) {
    return std::make_shared<const ImageFeature>(ImageFeature{std::move(id), std::move(v)});
}

// ---------------------------------------------------------------------------
// Toy captioning datasets

/// Cleaned, encoded toy corpus ready for train_base.
struct ToyDataset {
    Vocabulary vocab;
    std::size_t max_len = 0;
    std::vector<CaptionExample> examples;
    std::vector<std::vector<std::string>> tokens;  // cleaned caption per example
    FeatureTable features;
};

inline ToyDataset toy_dataset(std::size_t images, std::size_t dim = kDefaultToyFeatureDim) {
    const auto items = toy::corpus(images);
    ToyDataset d;
    d.features = toy::features(items, dim);
    for (const auto& it : items) d.tokens.push_back(clean_caption(it.caption));
    d.vocab = build_vocabulary(std::span<const std::vector<std::string>>(d.tokens));
    std::vector<std::vector<TokenId>> encoded;
    for (std::size_t k = 0; k < items.size(); ++k) {
        encoded.push_back(encode_caption(d.tokens[k], d.vocab));
        d.examples.push_back({std::make_shared<const ImageFeature>(d.features.at(items[k].image_id)), encoded.back()});
    }
    d.max_len = choose_max_len(encoded);
    return d;
}

inline CaptionModelConfig toy_model_config(const ToyDataset& d, std::uint64_t seed = 7) {
    CaptionModelConfig c;
    c.feature_dim = kDefaultToyFeatureDim;
    c.embed_dim = 32;
    c.hidden_dim = 64;
    c.vocab_size = d.vocab.size();
    c.max_len = d.max_len;
    c.seed = seed;
    return c;
}

/// Settings of the overfitting run: 8 toy images, 500 epochs.
inline TrainOptions overfit_train_options() {
    TrainOptions o;
    o.epochs = 500;
    o.batch_size = 32;
    o.seed = 11;
    return o;
}

/// Words of an example's caption, without start and end.
inline std::vector<TokenId> caption_words(const CaptionExample& ex) {
    return {ex.caption.begin() + 1, ex.caption.end() - 1};
}

// ---------------------------------------------------------------------------
// Four generated captions with the ratings a reviewer gave them, plus the
// caption the reviewer preferred for each image.

struct RatedCaptionRow {
    const char* model_caption;
    const char* human_caption;
    double score;
};

inline constexpr std::array<RatedCaptionRow, 4> kRatedCaptions = {{
    {"men playing cricket on sports field", "A boy pitches in a baseball game", -0.5},
    {"person is playing with a dog in the snow", "Two dogs playing the snow", 0.4},
    {"black and white dog runs through an obstacle area", "black and white dog runs through an obstacle area", 1.0},
    {"man in red shirt is walking with in the city", "A women in red jacket is walking in the city", 0.4},
}};

inline std::vector<FeedbackRecord> rated_caption_records() {
    std::vector<FeedbackRecord> out;
    for (std::size_t k = 0; k < kRatedCaptions.size(); ++k) {
        out.push_back({toy::image_id(k), kRatedCaptions[k].model_caption, kRatedCaptions[k].score, "reviewer", 1.0 + static_cast<double>(k)});
    }
    return out;
}

inline FeatureTable rated_caption_features() {
    FeatureTable t;
    for (std::size_t k = 0; k < kRatedCaptions.size(); ++k) {
        t[toy::image_id(k)] = {toy::image_id(k), toy_extract_features(toy::image_bytes(k))};
    }
    return t;
}

inline Vocabulary rated_caption_vocabulary() {
    std::vector<std::vector<std::string>> lists;
    for (const auto& row : kRatedCaptions) {
        lists.push_back(clean_caption(row.model_caption));
        lists.push_back(clean_caption(row.human_caption));
    }
    return build_vocabulary(std::span<const std::vector<std::string>>(lists));
}

// ---------------------------------------------------------------------------
// Synthetic critic data: rating = 2 * unigram overlap with a hidden target - 1.

struct SyntheticCriticSet {
    std::vector<FeedbackRecord> train;
    std::vector<FeedbackRecord> held_out;
    FeatureTable features;
    Vocabulary vocab;
};

/// Each image has a hidden target caption; candidate captions are random
/// mixes of target words and distractors. Overlap is the unigram F1 against
/// the target, so ratings span [-1, 1]. Held-out records are new captions for
/// the same images.
inline SyntheticCriticSet synthetic_critic_set(std::uint64_t seed, std::size_t images = 8,
                                               std::size_t per_image_train = 96, std::size_t per_image_test = 8) {
    static constexpr std::array<const char*, 16> kWords = {"dog",  "cat",  "runs", "sits", "grass", "water",
                                                           "red",  "blue", "ball", "park", "man",   "child",
                                                           "jumps", "snow", "road", "tree"};
    Rng rng(seed);
    SyntheticCriticSet s;
    std::vector<std::vector<std::string>> all_tokens;
    for (const char* w : kWords) all_tokens.push_back({w});
    s.vocab = build_vocabulary(std::span<const std::vector<std::string>>(all_tokens));

    for (std::size_t img = 0; img < images; ++img) {
        const std::string id = toy::image_id(img);
        s.features[id] = {id, toy_extract_features(toy::image_bytes(img))};
        std::vector<std::string> target;
        while (target.size() < 4) {
            std::string w = kWords[rng.below(kWords.size())];
            if (std::find(target.begin(), target.end(), w) == target.end()) target.push_back(w);
        }
        auto make = [&](std::size_t count, std::vector<FeedbackRecord>& into) {
            for (std::size_t k = 0; k < count; ++k) {
                std::vector<std::string> words;
                const std::size_t len = 2 + rng.below(4);
                const double keep = rng.uniform();
                for (std::size_t w = 0; w < len; ++w) {
                    words.push_back(rng.uniform() < keep ? target[rng.below(target.size())]
                                                         : std::string(kWords[rng.below(kWords.size())]));
                }
                const double rating = 2.0 * unigram_f1(words, target) - 1.0;
                into.push_back({id, join_words(words), rating, "synthetic", static_cast<double>(into.size())});
            }
        };
        make(per_image_train, s.train);
        make(per_image_test, s.held_out);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Preference set used for the fine-tuning comparison.
//
// Sixteen toy images with three human captions each. The base model is
// trained on all 48 pairs, so each image's caption distribution is a mix of
// the three. The oracle scores a sample by its mean unigram F1 against the
// image's captions, which favors the consensus caption.

struct PreferenceSetup {
    Vocabulary vocab;
    std::size_t max_len = 0;
    CleanCorpus corpus;
    std::vector<CaptionExample> examples;
    std::vector<FinetuneExample> finetune;
    CaptionModelConfig config;
    TrainOptions base_train;
};

inline PreferenceSetup preference_setup() {
    PreferenceSetup s;
    std::map<std::string, std::shared_ptr<const ImageFeature>> features;
    for (const auto& it : toy::preference_set(16)) {
        features[it.image_id] = shared_feature(it.image_id, toy_extract_features(it.bytes));
        for (const auto& c : it.captions) s.corpus[it.image_id].push_back(clean_caption(c));
    }
    s.vocab = build_vocabulary(s.corpus);
    std::vector<std::vector<TokenId>> encoded;
    for (const auto& [id, caps] : s.corpus) {
        for (const auto& c : caps) {
            encoded.push_back(encode_caption(c, s.vocab));
            s.examples.push_back({features.at(id), encoded.back()});
            s.finetune.push_back({features.at(id), encoded.back()});
        }
    }
    s.max_len = choose_max_len(encoded);
    s.config = {kDefaultToyFeatureDim, 32, 64, s.vocab.size(), s.max_len, 7};
    s.base_train.epochs = 300;
    s.base_train.batch_size = 32;
    s.base_train.seed = 11;
    return s;
}

inline FinetuneOptions preference_finetune_options(const PreferenceSetup& s, FinetuneMode mode, std::uint64_t seed) {
    FinetuneOptions o;
    o.mode = mode;
    o.steps = 200;
    o.temperature = 1.0;
    o.max_len = s.max_len;
    o.seed = seed;
    return o;
}

inline constexpr std::size_t kPreferenceEvalSamples = 24;
inline constexpr std::uint64_t kPreferenceEvalSeed = 999;

// ---------------------------------------------------------------------------
// Brute-force BLEU counting, written with explicit index loops.

struct BruteBleuCounts {
    std::vector<std::size_t> matches, totals;
    std::size_t c = 0, r = 0;
};

inline bool same_gram(const Tokens& a, std::size_t i, const Tokens& b, std::size_t j, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
        if (a[i + k] != b[j + k]) return false;
    }
    return true;
}

inline std::size_t occurrences(const Tokens& text, const Tokens& gram_src, std::size_t at, std::size_t n) {
    std::size_t count = 0;
    for (std::size_t j = 0; j + n <= text.size(); ++j) count += same_gram(gram_src, at, text, j, n) ? 1 : 0;
    return count;
}

inline BruteBleuCounts brute_force_bleu_counts(const CandidateSet& cands, const ReferenceSet& refs, std::size_t max_n) {
    BruteBleuCounts out;
    out.matches.assign(max_n, 0);
    out.totals.assign(max_n, 0);
    for (const auto& [id, cand] : cands) {
        const auto& rs = refs.at(id);
        out.c += cand.size();
        std::size_t best = rs[0].size();
        for (const auto& ref : rs) {
            const long d_ref = std::labs(static_cast<long>(ref.size()) - static_cast<long>(cand.size()));
            const long d_best = std::labs(static_cast<long>(best) - static_cast<long>(cand.size()));
            if (d_ref < d_best || (d_ref == d_best && ref.size() < best)) best = ref.size();
        }
        out.r += best;
        for (std::size_t n = 1; n <= max_n; ++n) {
            for (std::size_t i = 0; i + n <= cand.size(); ++i) {
                // Count each distinct n-gram once, at its first position.
                bool first = true;
                for (std::size_t e = 0; e < i; ++e) {
                    if (same_gram(cand, e, cand, i, n)) first = false;
                }
                if (!first) continue;
                const std::size_t in_cand = occurrences(cand, cand, i, n);
                std::size_t in_ref = 0;
                for (const auto& ref : rs) in_ref = std::max(in_ref, occurrences(ref, cand, i, n));
                out.totals[n - 1] += in_cand;
                out.matches[n - 1] += std::min(in_cand, in_ref);
            }
        }
    }
    return out;
}

/// Score from brute-force counts: add-epsilon smoothing, closest-reference
/// brevity penalty, uniform weights, times 100.
inline double brute_force_bleu_score(const BruteBleuCounts& b) {
    const std::size_t max_n = b.matches.size();
    double log_sum = 0.0;
    for (std::size_t n = 0; n < max_n; ++n) {
        double p = 0.0;
        if (b.totals[n] == 0) {
            p = 1e-9;
        } else if (b.matches[n] == 0) {
            p = 1e-9 / static_cast<double>(b.totals[n]);
        } else {
            p = static_cast<double>(b.matches[n]) / static_cast<double>(b.totals[n]);
        }
        log_sum += std::log(p);
    }
    double bp = 0.0;
    if (b.c == 0) {
        bp = 0.0;
    } else if (b.c >= b.r) {
        bp = 1.0;
    } else {
        bp = std::exp(1.0 - static_cast<double>(b.r) / static_cast<double>(b.c));
    }
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

/// Random fixture: up to 3 images, 1..3 references each, at most 5 tokens per
/// caption, drawn from a 4-word alphabet so n-gram matches are common.
inline std::pair<CandidateSet, ReferenceSet> random_bleu_fixture(Rng& rng) {
    static constexpr std::array<const char*, 4> kAlphabet = {"a", "b", "c", "d"};
    auto random_tokens = [&](std::size_t min_len) {
        Tokens t;
        const std::size_t len = min_len + rng.below(6 - min_len);
        for (std::size_t k = 0; k < len; ++k) t.push_back(kAlphabet[rng.below(kAlphabet.size())]);
        return t;
    };
    CandidateSet cands;
    ReferenceSet refs;
    const std::size_t images = 1 + rng.below(3);
    for (std::size_t i = 0; i < images; ++i) {
        const std::string id = "img" + std::to_string(i);
        cands[id] = random_tokens(1);
        const std::size_t nrefs = 1 + rng.below(3);
        for (std::size_t k = 0; k < nrefs; ++k) refs[id].push_back(random_tokens(1));
    }
    return {cands, refs};
}

}  // namespace caprl::testing
