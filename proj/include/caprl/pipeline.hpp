#pragma once

// Joins caption corpora with feature tables into training and fine-tuning sets.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "caprl/caption_model.hpp"
#include "caprl/evaluation.hpp"
#include "caprl/rlhf.hpp"

namespace caprl {

using FeatureIndex = std::map<std::string, std::shared_ptr<const ImageFeature>>;

inline FeatureIndex index_features(const FeatureTable& table) {
    FeatureIndex out;
    for (const auto& [id, f] : table) out[id] = std::make_shared<const ImageFeature>(f);
    return out;
}

/// Longest encoded caption in the corpus, capped at 32.
inline std::size_t corpus_max_len(const CleanCorpus& corpus, const Vocabulary& vocab) {
    std::vector<std::vector<TokenId>> encoded;
    for (const auto& [id, caps] : corpus) {
        for (const auto& c : caps) encoded.push_back(encode_caption(c, vocab));
    }
    return choose_max_len(encoded);
}

struct ExampleSplit {
    std::vector<CaptionExample> train;
    std::vector<CaptionExample> validation;
    std::size_t skipped_long = 0;  // captions longer than max_len
};

/// One example per (image, caption). Every captioned image needs a feature.
/// Captions that do not fit in max_len are left out with a warning. With
/// `split` set, images in the hashed validation fifth go to `validation`.
inline ExampleSplit caption_examples(const CleanCorpus& corpus, const FeatureIndex& features, const Vocabulary& vocab,
                                     std::size_t max_len, bool split, const WarningSink& warnings = stderr_warnings()) {
    ExampleSplit out;
    for (const auto& [id, caps] : corpus) {
        auto f = features.find(id);
        if (f == features.end()) throw MissingFeatureError("no feature for captioned image '" + id + "'");
        auto& bucket = split && in_validation_split(id) ? out.validation : out.train;
        for (const auto& c : caps) {
            auto encoded = encode_caption(c, vocab);
            if (encoded.size() > max_len) {
                ++out.skipped_long;
                continue;
            }
            bucket.push_back({f->second, std::move(encoded)});
        }
    }
    if (out.skipped_long > 0) {
        warn(warnings, "skipped " + std::to_string(out.skipped_long) + " caption(s) longer than max_len " +
                           std::to_string(max_len));
    }
    return out;
}

inline std::vector<FinetuneExample> finetune_examples(std::span<const CaptionExample> examples) {
    std::vector<FinetuneExample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back({ex.feature, ex.caption});
    return out;
}

}  // namespace caprl
