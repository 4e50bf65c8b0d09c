#pragma once

// Critic: predicts a human rating in (-1, 1) from an image feature and a caption.
//
//   f     = feature W_f + b_f                       (D -> Hc)
//   m     = mean of caption token embeddings        (Ec)
//   u     = tanh([f, m] W_j + b_j)                  (Hc + Ec -> Hc)
//   score = tanh(u W_h + b_h)                       (Hc -> 1)
//
// Trained by Adam on mean squared error against the recorded ratings.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "caprl/corpus.hpp"
#include "caprl/feedback/record.hpp"
#include "caprl/nn/adam.hpp"
#include "caprl/nn/checkpoint.hpp"
#include "caprl/nn/layers.hpp"

namespace caprl {

struct CriticConfig {
    std::size_t feature_dim = kDefaultFeatureDim;
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t vocab_size = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (feature_dim == 0 || embed_dim == 0 || hidden_dim == 0) {
            throw ConfigError("critic dimensions must all be positive");
        }
        if (vocab_size < Vocabulary::kNumSpecial + 1) throw ConfigError("critic needs vocab_size >= 5");
    }

    friend bool operator==(const CriticConfig&, const CriticConfig&) = default;
};

inline void to_json(nlohmann::json& j, const CriticConfig& c) {
    j = {{"feature_dim", c.feature_dim}, {"embed_dim", c.embed_dim}, {"hidden_dim", c.hidden_dim},
         {"vocab_size", c.vocab_size},   {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, CriticConfig& c) {
    j.at("feature_dim").get_to(c.feature_dim);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("seed").get_to(c.seed);
}

struct CriticParams {
    nn::DenseLayer feature_proj;  // D -> Hc
    Tensor2 embedding;            // V x Ec
    nn::DenseLayer joint;         // Hc + Ec -> Hc
    nn::DenseLayer head;          // Hc -> 1

    std::size_t vocab_size() const { return embedding.rows; }

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        nn::DenseLayer::visit(self.feature_proj, fn, "feature_proj");
        fn("embedding", self.embedding);
        nn::DenseLayer::visit(self.joint, fn, "joint");
        nn::DenseLayer::visit(self.head, fn, "head");
    }

    friend bool operator==(const CriticParams&, const CriticParams&) = default;
};

inline CriticParams build_critic(const CriticConfig& c) {
    c.validate();
    CriticParams p;
    p.feature_proj = nn::DenseLayer(c.feature_dim, c.hidden_dim);
    p.embedding = Tensor2(c.vocab_size, c.embed_dim);
    p.joint = nn::DenseLayer(c.hidden_dim + c.embed_dim, c.hidden_dim);
    p.head = nn::DenseLayer(c.hidden_dim, 1);
    Rng rng(c.seed);
    p.feature_proj.init(rng);
    glorot_uniform(p.embedding, rng);
    p.joint.init(rng);
    p.head.init(rng);
    return p;
}

/// Largest double below 1; keeps the score strictly inside (-1, 1) even when
/// tanh saturates to +-1 in floating point.
inline constexpr double kCriticScoreBound = 0x1.fffffffffffffp-1;

namespace detail {

struct CriticPass {
    Vector projected;   // f
    Vector pooled;      // m
    Vector joint_in;    // [f, m]
    Vector hidden;      // u
    double raw = 0.0;   // tanh before clamping
    double score = 0.0;
    std::vector<TokenId> sorted_tokens;
};

inline CriticPass critic_pass(const CriticParams& p, std::span<const double> feature,
                              std::span<const TokenId> caption) {
    if (caption.empty()) throw ValidationError("critic needs a non-empty caption");
    CriticPass s;
    s.sorted_tokens.assign(caption.begin(), caption.end());
    for (TokenId t : s.sorted_tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= p.vocab_size()) {
            throw IndexError("critic token index " + std::to_string(t) + " outside vocabulary");
        }
    }
    // Summing in sorted order makes the pool independent of token order, bit for bit.
    std::sort(s.sorted_tokens.begin(), s.sorted_tokens.end());

    s.projected = nn::dense_forward(p.feature_proj, feature);
    s.pooled.assign(p.embedding.cols, 0.0);
    for (TokenId t : s.sorted_tokens) {
        const auto row = p.embedding.row(static_cast<std::size_t>(t));
        for (std::size_t k = 0; k < row.size(); ++k) s.pooled[k] += row[k];
    }
    const double inv = 1.0 / static_cast<double>(s.sorted_tokens.size());
    for (double& v : s.pooled) v *= inv;

    s.joint_in = s.projected;
    s.joint_in.insert(s.joint_in.end(), s.pooled.begin(), s.pooled.end());
    s.hidden = nn::dense_forward(p.joint, s.joint_in);
    for (double& v : s.hidden) v = std::tanh(v);
    s.raw = std::tanh(nn::dense_forward(p.head, s.hidden)[0]);
    s.score = std::clamp(s.raw, -kCriticScoreBound, kCriticScoreBound);
    return s;
}

/// Accumulates d(score)/d(params) * dscore into grad.
inline void critic_backward(const CriticParams& p, std::span<const double> feature, const CriticPass& s,
                            double dscore, CriticParams& grad) {
    const double da2 = dscore * (1.0 - s.raw * s.raw);
    const Vector du = nn::dense_backward(p.head, s.hidden, std::span<const double>(&da2, 1), grad.head);
    Vector da1(du.size());
    for (std::size_t k = 0; k < du.size(); ++k) da1[k] = du[k] * (1.0 - s.hidden[k] * s.hidden[k]);
    const Vector djoint = nn::dense_backward(p.joint, s.joint_in, da1, grad.joint);

    const std::size_t hc = s.projected.size();
    nn::dense_backward(p.feature_proj, feature, std::span<const double>(djoint.data(), hc), grad.feature_proj);
    const double inv = 1.0 / static_cast<double>(s.sorted_tokens.size());
    for (TokenId t : s.sorted_tokens) {
        auto row = grad.embedding.row(static_cast<std::size_t>(t));
        for (std::size_t k = 0; k < row.size(); ++k) row[k] += djoint[hc + k] * inv;
    }
}

}  // namespace detail

inline double critic_forward(const CriticParams& p, std::span<const double> feature,
                             std::span<const TokenId> caption) {
    return detail::critic_pass(p, feature, caption).score;
}

/// Caption text as the critic sees it: cleaned and framed with start/end.
inline std::vector<TokenId> critic_tokens(std::string_view caption_text, const Vocabulary& vocab) {
    return encode_caption(clean_caption(caption_text), vocab);
}

struct CriticExample {
    std::shared_ptr<const ImageFeature> feature;
    std::vector<TokenId> caption;
    double rating = 0.0;
};

/// Mean squared error over `examples`; accumulates its gradient when grad != nullptr.
inline double critic_mse(const CriticParams& p, std::span<const CriticExample> examples,
                         CriticParams* grad = nullptr) {
    if (examples.empty()) return 0.0;
    const double n = static_cast<double>(examples.size());
    double total = 0.0;
    for (const auto& ex : examples) {
        const auto s = detail::critic_pass(p, ex.feature->vector, ex.caption);
        const double err = s.score - ex.rating;
        total += err * err;
        if (grad) detail::critic_backward(p, ex.feature->vector, s, 2.0 * err / n, *grad);
    }
    return total / n;
}

/// Resolves records against the feature table and vocabulary.
inline std::vector<CriticExample> critic_examples(std::span<const FeedbackRecord> records,
                                                  const FeatureTable& features, const Vocabulary& vocab) {
    std::vector<CriticExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (!valid_rating(r.rating)) throw ValidationError("rating outside [-1, 1] for image '" + r.image_id + "'");
        auto it = features.find(r.image_id);
        if (it == features.end()) throw MissingFeatureError("no feature for rated image '" + r.image_id + "'");
        out.push_back({std::make_shared<const ImageFeature>(it->second), critic_tokens(r.caption_text, vocab),
                       r.rating});
    }
    return out;
}

struct CriticTrainOptions {
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    nn::AdamConfig adam{};
};

/// Mini-batch Adam on MSE. Returns the per-epoch mean squared error seen
/// during training.
inline std::vector<double> train_critic(CriticParams& params, std::span<const CriticExample> examples,
                                        const CriticTrainOptions& options) {
    if (examples.empty()) throw ValidationError("train_critic: no feedback records");
    if (options.batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

    Rng rng(options.seed);
    auto adam = nn::AdamState::for_params(params, options.adam);
    auto grad = nn::zeros_like(params);
    std::vector<double> curve;
    std::vector<CriticExample> batch;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double sse = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t stop = std::min(order.size(), start + options.batch_size);
            batch.clear();
            for (std::size_t k = start; k < stop; ++k) batch.push_back(examples[order[k]]);
            for (Tensor2* t : nn::tensors_of(grad)) t->fill(0.0);
            sse += critic_mse(params, batch, &grad) * static_cast<double>(batch.size());
            nn::adam_update(adam, params, grad);
        }
        curve.push_back(sse / static_cast<double>(examples.size()));
    }
    return curve;
}

/// Convenience overload: resolves the records, builds and trains a fresh critic.
struct CriticTrainResult {
    CriticParams params;
    std::vector<double> mse_curve;
};

inline CriticTrainResult train_critic(std::span<const FeedbackRecord> records, const FeatureTable& features,
                                      const Vocabulary& vocab, const CriticConfig& config,
                                      const CriticTrainOptions& options) {
    if (records.empty()) throw ValidationError("train_critic: no feedback records");
    const auto examples = critic_examples(records, features, vocab);
    CriticTrainResult result{build_critic(config), {}};
    result.mse_curve = train_critic(result.params, examples, options);
    return result;
}

// ---------------------------------------------------------------------------
// Persistence

struct Critic {
    CriticConfig config;
    CriticParams params;
    Vocabulary vocab;
};

inline constexpr const char* kCriticCheckpointKind = "critic";

inline void save_critic(const std::filesystem::path& path, const Critic& c) {
    nlohmann::json meta = c.config;
    meta["vocabulary"] = c.vocab.words();
    nn::write_json_file(path, nn::make_checkpoint(kCriticCheckpointKind, std::move(meta), nn::tensors_to_json(c.params)));
}

inline Critic load_critic(const std::filesystem::path& path) {
    const auto doc = nn::read_checkpoint(path, kCriticCheckpointKind);
    Critic c;
    try {
        c.config = doc.at("meta").get<CriticConfig>();
        c.vocab = Vocabulary(doc.at("meta").at("vocabulary").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (c.vocab.size() != c.config.vocab_size) throw ParseError(path.string() + ": vocabulary size mismatch");
    c.params = build_critic(c.config);
    nn::tensors_from_json(doc.at("tensors"), c.params);
    return c;
}

}  // namespace caprl
