#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "caprl/diagnostics.hpp"
#include "caprl/error.hpp"
#include "caprl/rng.hpp"
#include "caprl/tensor.hpp"
#include "caprl/text.hpp"

namespace caprl {

using TokenId = int;

/// image_id -> raw caption strings, in file order.
using CaptionCorpus = std::map<std::string, std::vector<std::string>>;

/// image_id -> cleaned token lists, in file order.
using CleanCorpus = std::map<std::string, std::vector<std::vector<std::string>>>;

struct CaptionRecord {
    std::string image_id;
    std::string raw_text;
    std::vector<std::string> tokens;
};

// ---------------------------------------------------------------------------
// Caption files: one `name#k<TAB>caption` per line.

inline CaptionCorpus parse_captions(std::istream& in, const std::string& source = "<captions>") {
    CaptionCorpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;

        auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(where() + "missing TAB between image name and caption");
        const std::string key = line.substr(0, tab);
        const auto hash = key.rfind('#');
        if (hash == std::string::npos) throw ParseError(where() + "missing '#<k>' suffix on image name");
        const std::string image_id = key.substr(0, hash);
        const std::string ordinal = key.substr(hash + 1);
        if (image_id.empty()) throw ParseError(where() + "empty image name");
        if (ordinal.empty() || !std::all_of(ordinal.begin(), ordinal.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw ParseError(where() + "caption ordinal after '#' must be digits");
        }
        corpus[image_id].push_back(line.substr(tab + 1));
    }
    if (corpus.empty()) throw EmptyCorpusError(source + ": no captions found");
    return corpus;
}

inline CaptionCorpus load_captions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open caption file " + path.string());
    return parse_captions(in, path.string());
}

inline CleanCorpus clean_corpus(const CaptionCorpus& raw) {
    CleanCorpus out;
    for (const auto& [image_id, captions] : raw) {
        auto& cleaned = out[image_id];
        for (const auto& c : captions) cleaned.push_back(clean_caption(c));
    }
    return out;
}

inline std::vector<CaptionRecord> caption_records(const CaptionCorpus& raw) {
    std::vector<CaptionRecord> out;
    for (const auto& [image_id, captions] : raw) {
        for (const auto& c : captions) out.push_back({image_id, c, clean_caption(c)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kStart = 1;
    static constexpr TokenId kEnd = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr std::size_t kNumSpecial = 4;

    static constexpr const char* kPadWord = "<pad>";
    static constexpr const char* kStartWord = "<start>";
    static constexpr const char* kEndWord = "<end>";
    static constexpr const char* kUnkWord = "<unk>";

    Vocabulary() : Vocabulary(std::vector<std::string>{kPadWord, kStartWord, kEndWord, kUnkWord}) {}

    /// Rebuilds a vocabulary from its index-ordered word list (e.g. a checkpoint).
    explicit Vocabulary(std::vector<std::string> index_to_word) : index_to_word_(std::move(index_to_word)) {
        if (index_to_word_.size() < kNumSpecial || index_to_word_[kPad] != kPadWord ||
            index_to_word_[kStart] != kStartWord || index_to_word_[kEnd] != kEndWord ||
            index_to_word_[kUnk] != kUnkWord) {
            throw ValidationError("vocabulary must begin with <pad>, <start>, <end>, <unk>");
        }
        for (std::size_t k = 0; k < index_to_word_.size(); ++k) {
            if (!word_to_index_.emplace(index_to_word_[k], static_cast<TokenId>(k)).second) {
                throw ValidationError("duplicate vocabulary word '" + index_to_word_[k] + "'");
            }
        }
    }

    std::size_t size() const { return index_to_word_.size(); }
    TokenId pad_index() const { return kPad; }
    TokenId start_index() const { return kStart; }
    TokenId end_index() const { return kEnd; }
    TokenId unk_index() const { return kUnk; }

    bool contains(const std::string& word) const { return word_to_index_.count(word) != 0; }

    /// Index of `word`, or the unk index when it is out of vocabulary.
    TokenId index_of(const std::string& word) const {
        auto it = word_to_index_.find(word);
        return it == word_to_index_.end() ? kUnk : it->second;
    }

    const std::string& word(TokenId index) const {
        if (index < 0 || static_cast<std::size_t>(index) >= size()) {
            throw IndexError("token index " + std::to_string(index) + " outside vocabulary of size " +
                             std::to_string(size()));
        }
        return index_to_word_[static_cast<std::size_t>(index)];
    }

    const std::vector<std::string>& words() const { return index_to_word_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.index_to_word_ == b.index_to_word_; }

private:
    std::vector<std::string> index_to_word_;
    std::unordered_map<std::string, TokenId> word_to_index_;
};

/// Specials take indices 0..3; the remaining unique words follow in
/// lexicographic (byte) order, so the result does not depend on input order.
inline Vocabulary build_vocabulary(std::span<const std::vector<std::string>> token_lists) {
    std::vector<std::string> words;
    for (const auto& tokens : token_lists) words.insert(words.end(), tokens.begin(), tokens.end());
    if (words.empty()) throw EmptyCorpusError("cannot build a vocabulary from an empty corpus");
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());

    std::vector<std::string> all{Vocabulary::kPadWord, Vocabulary::kStartWord, Vocabulary::kEndWord,
                                 Vocabulary::kUnkWord};
    all.insert(all.end(), words.begin(), words.end());
    return Vocabulary(std::move(all));
}

inline Vocabulary build_vocabulary(const CleanCorpus& corpus) {
    std::vector<std::vector<std::string>> lists;
    for (const auto& [id, caps] : corpus) lists.insert(lists.end(), caps.begin(), caps.end());
    return build_vocabulary(std::span<const std::vector<std::string>>(lists));
}

/// [start] ++ word indices (unk for OOV) ++ [end].
inline std::vector<TokenId> encode_caption(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
    std::vector<TokenId> out;
    out.reserve(tokens.size() + 2);
    out.push_back(vocab.start_index());
    for (const auto& t : tokens) out.push_back(vocab.index_of(t));
    out.push_back(vocab.end_index());
    return out;
}

inline std::vector<std::string> decode_caption(std::span<const TokenId> indices, const Vocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(indices.size());
    for (TokenId id : indices) out.push_back(vocab.word(id));
    return out;
}

/// Fixed-length, pad-terminated index sequence.
struct TokenSequence {
    std::vector<TokenId> indices;

    /// Number of entries before the first pad.
    std::size_t content_length() const {
        auto it = std::find(indices.begin(), indices.end(), Vocabulary::kPad);
        return static_cast<std::size_t>(it - indices.begin());
    }

    std::span<const TokenId> content() const { return {indices.data(), content_length()}; }

    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

inline TokenSequence pad_sequence(std::span<const TokenId> indices, std::size_t max_len) {
    if (indices.size() > max_len) {
        throw LengthError("sequence of length " + std::to_string(indices.size()) + " exceeds max_len " +
                          std::to_string(max_len));
    }
    TokenSequence seq;
    seq.indices.assign(indices.begin(), indices.end());
    seq.indices.resize(max_len, Vocabulary::kPad);
    return seq;
}

inline constexpr std::size_t kMaxLenCap = 32;

/// Longest encoded caption, capped at 32.
inline std::size_t choose_max_len(std::span<const std::vector<TokenId>> encoded) {
    std::size_t longest = 0;
    for (const auto& e : encoded) longest = std::max(longest, e.size());
    return std::min(longest, kMaxLenCap);
}

// ---------------------------------------------------------------------------
// Image features

inline constexpr std::size_t kDefaultFeatureDim = 2048;
inline constexpr std::size_t kDefaultToyFeatureDim = 64;

struct ImageFeature {
    std::string image_id;
    Vector vector;

    friend bool operator==(const ImageFeature&, const ImageFeature&) = default;
};

using FeatureTable = std::map<std::string, ImageFeature>;

inline void validate_feature(const ImageFeature& f, std::size_t dim) {
    if (f.image_id.empty()) throw ValidationError("feature with empty image_id");
    if (f.vector.size() != dim) {
        throw DimensionError("feature for '" + f.image_id + "' has length " + std::to_string(f.vector.size()) +
                             ", expected " + std::to_string(dim));
    }
    for (double v : f.vector) {
        if (!std::isfinite(v)) throw ValidationError("feature for '" + f.image_id + "' has a non-finite entry");
    }
}

/// JSON Lines, one {"image_id": string, "vector": [numbers]} per line.
/// A repeated image_id replaces the earlier entry and emits a warning.
inline FeatureTable parse_features(std::istream& in, std::size_t dim, const std::string& source = "<features>",
                                   const WarningSink& warnings = stderr_warnings()) {
    FeatureTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = source + ":" + std::to_string(line_no) + ": ";
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(where + e.what());
        }
        if (!obj.is_object() || !obj.contains("image_id") || !obj["image_id"].is_string() || !obj.contains("vector") ||
            !obj["vector"].is_array()) {
            throw ParseError(where + "expected {\"image_id\": string, \"vector\": [numbers]}");
        }
        ImageFeature f;
        f.image_id = obj["image_id"].get<std::string>();
        for (const auto& v : obj["vector"]) {
            if (!v.is_number()) throw ValidationError(where + "non-numeric vector entry for '" + f.image_id + "'");
            f.vector.push_back(v.get<double>());
        }
        validate_feature(f, dim);
        if (table.count(f.image_id)) {
            warn(warnings, where + "duplicate image_id '" + f.image_id + "', last occurrence wins");
        }
        table[f.image_id] = std::move(f);
    }
    return table;
}

inline FeatureTable load_features(const std::filesystem::path& path, std::size_t dim,
                                  const WarningSink& warnings = stderr_warnings()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file " + path.string());
    return parse_features(in, dim, path.string(), warnings);
}

inline void write_features(std::ostream& out, const FeatureTable& table) {
    for (const auto& [id, f] : table) {
        out << nlohmann::json{{"image_id", id}, {"vector", f.vector}}.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Toy extractor: a deterministic stand-in for a pretrained image encoder.

inline constexpr std::size_t kToyStatsDim = 259;
inline constexpr std::uint64_t kToyProjectionSeed = 0x70795EEDULL;

/// 256-bin normalized byte histogram, then mean/255, population stddev/127.5
/// and (length mod 997)/996; every entry lies in [0, 1].
inline Vector toy_feature_stats(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw ValidationError("toy feature extraction needs a non-empty byte sequence");
    Vector stats(kToyStatsDim, 0.0);
    const double n = static_cast<double>(bytes.size());
    double sum = 0.0;
    for (auto b : bytes) {
        stats[b] += 1.0;
        sum += b;
    }
    for (std::size_t k = 0; k < 256; ++k) stats[k] /= n;
    const double mean = sum / n;
    double var = 0.0;
    for (auto b : bytes) var += (b - mean) * (b - mean);
    var /= n;
    stats[256] = mean / 255.0;
    stats[257] = std::sqrt(var) / 127.5;
    stats[258] = static_cast<double>(bytes.size() % 997) / 996.0;
    return stats;
}

/// 259 x dim matrix, entries uniform(-1, 1) drawn row-major from Rng(kToyProjectionSeed).
inline Tensor2 toy_projection(std::size_t dim) {
    Rng rng(kToyProjectionSeed);
    Tensor2 m(kToyStatsDim, dim);
    for (double& v : m.data) v = rng.uniform(-1.0, 1.0);
    return m;
}

inline Vector toy_extract_features(std::span<const std::uint8_t> bytes, std::size_t dim = kDefaultToyFeatureDim) {
    if (dim == 0) throw ConfigError("feature dimension must be positive");
    const Vector stats = toy_feature_stats(bytes);
    const Tensor2 proj = toy_projection(dim);
    Vector out(dim, 0.0);
    for (std::size_t k = 0; k < kToyStatsDim; ++k) {
        if (stats[k] == 0.0) continue;
        const auto row = proj.row(k);
        for (std::size_t j = 0; j < dim; ++j) out[j] += stats[k] * row[j];
    }
    return out;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace caprl
