#pragma once

// Feature-conditioned LSTM caption model.
//
//   h0     = tanh(feature W_p + b_p)          image branch seeds the recurrent state
//   c0     = 0
//   x_t    = E[token_t]                       text branch
//   h_t,c_t = LSTM(x_t, h_{t-1}, c_{t-1})
//   p_t    = softmax(h_t W_o + b_o)           distribution over the next word
//
// Training follows the usual next-word setup: each caption [start, w1..wn, end]
// yields one (prefix -> next word) pair per position, and pairs are shuffled
// into mini-batches with one Adam step per batch.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "caprl/corpus.hpp"
#include "caprl/format.hpp"
#include "caprl/nn/adam.hpp"
#include "caprl/nn/checkpoint.hpp"
#include "caprl/nn/layers.hpp"
#include "caprl/rng.hpp"

namespace caprl {

struct CaptionModelConfig {
    std::size_t feature_dim = kDefaultFeatureDim;
    std::size_t embed_dim = 128;
    std::size_t hidden_dim = 256;
    std::size_t vocab_size = 0;
    std::size_t max_len = kMaxLenCap;
    std::uint64_t seed = 0;

    void validate() const {
        if (feature_dim == 0 || embed_dim == 0 || hidden_dim == 0 || max_len == 0) {
            throw ConfigError("caption model dimensions must all be positive");
        }
        if (vocab_size < Vocabulary::kNumSpecial + 1) {
            throw ConfigError("caption model needs at least one real word (vocab_size >= 5), got " +
                              std::to_string(vocab_size));
        }
        if (max_len < 2) throw ConfigError("max_len must leave room for start and end tokens");
    }

    friend bool operator==(const CaptionModelConfig&, const CaptionModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const CaptionModelConfig& c) {
    j = {{"feature_dim", c.feature_dim}, {"embed_dim", c.embed_dim}, {"hidden_dim", c.hidden_dim},
         {"vocab_size", c.vocab_size},   {"max_len", c.max_len},     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, CaptionModelConfig& c) {
    j.at("feature_dim").get_to(c.feature_dim);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_len").get_to(c.max_len);
    j.at("seed").get_to(c.seed);
}

struct CaptionModelParams {
    nn::DenseLayer feature_proj;  // D -> H
    Tensor2 embedding;            // V x E
    nn::LstmCell lstm;            // E -> H
    nn::DenseLayer output;        // H -> V

    std::size_t vocab_size() const { return embedding.rows; }
    std::size_t hidden_dim() const { return lstm.hidden_dim(); }
    std::size_t feature_dim() const { return feature_proj.in_dim(); }

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        nn::DenseLayer::visit(self.feature_proj, fn, "feature_proj");
        fn("embedding", self.embedding);
        nn::LstmCell::visit(self.lstm, fn, "lstm");
        nn::DenseLayer::visit(self.output, fn, "output");
    }

    friend bool operator==(const CaptionModelParams&, const CaptionModelParams&) = default;
};

/// Closed-form count: DH + H + VE + 4EH + 4H^2 + 4H + HV + V.
inline std::size_t caption_parameter_count(const CaptionModelConfig& c) {
    const std::size_t D = c.feature_dim, E = c.embed_dim, H = c.hidden_dim, V = c.vocab_size;
    return D * H + H + V * E + 4 * E * H + 4 * H * H + 4 * H + H * V + V;
}

inline CaptionModelParams build_model(const CaptionModelConfig& config) {
    config.validate();
    CaptionModelParams p;
    p.feature_proj = nn::DenseLayer(config.feature_dim, config.hidden_dim);
    p.embedding = Tensor2(config.vocab_size, config.embed_dim);
    p.lstm = nn::LstmCell(config.embed_dim, config.hidden_dim);
    p.output = nn::DenseLayer(config.hidden_dim, config.vocab_size);

    Rng rng(config.seed);
    p.feature_proj.init(rng);
    glorot_uniform(p.embedding, rng);
    p.lstm.init(rng);
    p.output.init(rng);
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

inline constexpr TokenId kNoTarget = -1;

namespace detail {

inline void check_token(TokenId t, std::size_t vocab) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
        throw IndexError("token index " + std::to_string(t) + " outside vocabulary of size " + std::to_string(vocab));
    }
}

inline Vector initial_hidden(const CaptionModelParams& p, std::span<const double> feature) {
    Vector h = nn::dense_forward(p.feature_proj, feature);
    for (double& v : h) v = std::tanh(v);
    return h;
}

}  // namespace detail

/// Runs the model over `inputs` (teacher forcing) and scores step t against
/// `targets[t]` unless it is kNoTarget. Returns the summed cross-entropy.
///
/// When `grad` is non-null, grad_scale * d(sum CE)/d(params) is accumulated
/// into it. When `probabilities` is non-null, the predicted distribution of
/// every scored step is appended to it.
inline double teacher_forced(const CaptionModelParams& p, std::span<const double> feature,
                             std::span<const TokenId> inputs, std::span<const TokenId> targets,
                             CaptionModelParams* grad = nullptr, double grad_scale = 1.0,
                             std::vector<Vector>* probabilities = nullptr) {
    const std::size_t V = p.vocab_size();
    require_length(targets.size(), inputs.size(), "teacher_forced targets");
    require_length(feature.size(), p.feature_dim(), "caption model feature");
    if (inputs.empty()) throw ValidationError("teacher_forced needs at least one input token");
    for (TokenId t : inputs) detail::check_token(t, V);
    for (TokenId t : targets) {
        if (t != kNoTarget) detail::check_token(t, V);
    }

    const std::size_t H = p.hidden_dim();
    const Vector h0 = detail::initial_hidden(p, feature);
    std::vector<nn::LstmStepCache> steps;
    steps.reserve(inputs.size());
    std::vector<Vector> probs(inputs.size());

    double loss = 0.0;
    Vector h = h0;
    Vector c(H, 0.0);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        steps.push_back(nn::lstm_step_cached(p.lstm, p.embedding.row(static_cast<std::size_t>(inputs[t])), h, c));
        h = steps.back().h;
        c = steps.back().c;
        if (targets[t] == kNoTarget) continue;
        probs[t] = nn::softmax(nn::dense_forward(p.output, h));
        loss += nn::cross_entropy(static_cast<std::size_t>(targets[t]), probs[t]);
        if (probabilities) probabilities->push_back(probs[t]);
    }

    if (grad == nullptr) return loss;

    Vector dh_next(H, 0.0);
    Vector dc_next(H, 0.0);
    for (std::size_t t = inputs.size(); t-- > 0;) {
        Vector dh = dh_next;
        if (targets[t] != kNoTarget) {
            Vector dlogits = nn::softmax_cross_entropy_grad(probs[t], static_cast<std::size_t>(targets[t]));
            for (double& v : dlogits) v *= grad_scale;
            const Vector dh_out = nn::dense_backward(p.output, steps[t].h, dlogits, grad->output);
            for (std::size_t k = 0; k < H; ++k) dh[k] += dh_out[k];
        }
        auto g = nn::lstm_step_backward(p.lstm, steps[t], dh, dc_next, grad->lstm);
        auto erow = grad->embedding.row(static_cast<std::size_t>(inputs[t]));
        for (std::size_t k = 0; k < g.dx.size(); ++k) erow[k] += g.dx[k];
        dh_next = std::move(g.dh_prev);
        dc_next = std::move(g.dc_prev);
    }
    Vector da0(H);
    for (std::size_t k = 0; k < H; ++k) da0[k] = dh_next[k] * (1.0 - h0[k] * h0[k]);
    nn::dense_backward(p.feature_proj, feature, da0, grad->feature_proj);
    return loss;
}

namespace detail {

inline std::span<const TokenId> checked_prefix(std::span<const TokenId> prefix) {
    auto end = std::find(prefix.begin(), prefix.end(), Vocabulary::kPad);
    std::span<const TokenId> content(prefix.data(), static_cast<std::size_t>(end - prefix.begin()));
    if (content.empty()) throw ValidationError("prefix must be non-empty");
    if (content.front() != Vocabulary::kStart) throw ValidationError("prefix must begin with the start token");
    return content;
}

}  // namespace detail

/// Next-word logits after reading `prefix` (trailing pads ignored).
inline Vector forward_logits(const CaptionModelParams& p, std::span<const double> feature,
                             std::span<const TokenId> prefix) {
    const auto content = detail::checked_prefix(prefix);
    require_length(feature.size(), p.feature_dim(), "caption model feature");
    for (TokenId t : content) detail::check_token(t, p.vocab_size());
    Vector h = detail::initial_hidden(p, feature);
    Vector c(p.hidden_dim(), 0.0);
    for (TokenId t : content) {
        std::tie(h, c) = nn::lstm_step(p.lstm, p.embedding.row(static_cast<std::size_t>(t)), h, c);
    }
    return nn::dense_forward(p.output, h);
}

/// Next-word distribution after reading `prefix`.
inline Vector forward(const CaptionModelParams& p, std::span<const double> feature, std::span<const TokenId> prefix) {
    return nn::softmax(forward_logits(p, feature, prefix));
}

// ---------------------------------------------------------------------------
// Training pairs

struct TrainingPair {
    std::shared_ptr<const ImageFeature> feature;
    TokenSequence prefix;
    TokenId next_word = Vocabulary::kPad;
};

inline void check_encoded_caption(std::span<const TokenId> encoded) {
    if (encoded.size() < 2 || encoded.front() != Vocabulary::kStart || encoded.back() != Vocabulary::kEnd) {
        throw ValidationError("encoded caption must be [start, ..., end] with length >= 2");
    }
}

/// L-1 pairs for an encoded caption of length L: the k-th prefix is the first
/// k tokens and its target is token k (0-based).
inline std::vector<TrainingPair> make_training_pairs(std::shared_ptr<const ImageFeature> feature,
                                                     std::span<const TokenId> encoded, std::size_t max_len) {
    check_encoded_caption(encoded);
    if (encoded.size() > max_len) {
        throw LengthError("caption of length " + std::to_string(encoded.size()) + " exceeds max_len " +
                          std::to_string(max_len));
    }
    std::vector<TrainingPair> pairs;
    pairs.reserve(encoded.size() - 1);
    for (std::size_t k = 1; k < encoded.size(); ++k) {
        pairs.push_back({feature, pad_sequence(encoded.first(k), max_len), encoded[k]});
    }
    return pairs;
}

/// Loss of one pair and, optionally, its scaled gradient.
inline double pair_loss(const CaptionModelParams& p, const TrainingPair& pair, CaptionModelParams* grad = nullptr,
                        double grad_scale = 1.0) {
    const auto prefix = detail::checked_prefix(pair.prefix.indices);
    std::vector<TokenId> targets(prefix.size(), kNoTarget);
    targets.back() = pair.next_word;
    return teacher_forced(p, pair.feature->vector, prefix, targets, grad, grad_scale);
}

// ---------------------------------------------------------------------------
// Base training

/// One (image, encoded caption) training example.
struct CaptionExample {
    std::shared_ptr<const ImageFeature> feature;
    std::vector<TokenId> caption;
};

struct TrainOptions {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    nn::AdamConfig adam{};
};

struct LossCurve {
    std::vector<double> train;
    std::vector<double> validation;

    /// CSV with header `epoch,train_loss,val_loss`; an empty validation split is written as nan.
    void write_csv(std::ostream& out) const {
        out << "epoch,train_loss,val_loss\n";
        for (std::size_t e = 0; e < train.size(); ++e) {
            const double val = e < validation.size() ? validation[e] : std::numeric_limits<double>::quiet_NaN();
            out << e << ',' << format_double(train[e]) << ',' << format_double(val) << '\n';
        }
    }
};

/// Validation fraction 1/5, chosen by hashing the image id.
inline bool in_validation_split(std::string_view image_id) { return fnv1a64(image_id) % 100 < 20; }

/// Mean next-word cross-entropy over every pair of every example.
inline double mean_caption_loss(const CaptionModelParams& p, std::span<const CaptionExample> examples) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& ex : examples) {
        check_encoded_caption(ex.caption);
        std::span<const TokenId> cap(ex.caption);
        total += teacher_forced(p, ex.feature->vector, cap.first(cap.size() - 1), cap.subspan(1));
        count += cap.size() - 1;
    }
    return count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

namespace detail {

// Pairs sorted by (image, caption, position) so the outcome does not depend
// on the order the dataset was supplied in.
inline std::vector<TrainingPair> canonical_pairs(std::span<const CaptionExample> examples, std::size_t max_len) {
    std::vector<const CaptionExample*> order;
    for (const auto& ex : examples) order.push_back(&ex);
    std::stable_sort(order.begin(), order.end(), [](const CaptionExample* a, const CaptionExample* b) {
        return std::tie(a->feature->image_id, a->caption) < std::tie(b->feature->image_id, b->caption);
    });
    std::vector<TrainingPair> pairs;
    for (const auto* ex : order) {
        auto more = make_training_pairs(ex->feature, ex->caption, max_len);
        pairs.insert(pairs.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
    }
    return pairs;
}

}  // namespace detail

/// Mini-batch Adam on mean next-word cross-entropy. The train curve holds the
/// mean pair loss seen during each epoch; validation is evaluated after it.
inline LossCurve train_base(CaptionModelParams& params, std::span<const CaptionExample> train,
                            std::span<const CaptionExample> validation, const TrainOptions& options,
                            std::size_t max_len) {
    if (train.empty()) throw ValidationError("train_base: empty training set");
    if (options.batch_size == 0) throw ConfigError("batch_size must be positive");

    auto pairs = detail::canonical_pairs(train, max_len);
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

    Rng rng(options.seed);
    auto adam = nn::AdamState::for_params(params, options.adam);
    auto grad = nn::zeros_like(params);
    LossCurve curve;

    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t stop = std::min(order.size(), start + options.batch_size);
            const double scale = 1.0 / static_cast<double>(stop - start);
            for (Tensor2* t : nn::tensors_of(grad)) t->fill(0.0);
            for (std::size_t k = start; k < stop; ++k) epoch_loss += pair_loss(params, pairs[order[k]], &grad, scale);
            nn::adam_update(adam, params, grad);
        }
        curve.train.push_back(epoch_loss / static_cast<double>(pairs.size()));
        curve.validation.push_back(mean_caption_loss(params, validation));
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Generation

struct Generation {
    /// Every token fed or emitted: starts with start, ends with end if one was sampled.
    std::vector<TokenId> trajectory;
    /// The caption proper: trajectory without start/end tokens.
    std::vector<TokenId> words;
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (v[k] > v[best]) best = k;
    }
    return best;
}

/// Draws from softmax(logits / temperature); temperature 0 is argmax and
/// consumes no randomness.
inline TokenId sample_token(std::span<const double> logits, double temperature, Rng& rng) {
    if (temperature < 0.0 || std::isnan(temperature)) throw ValidationError("temperature must be >= 0");
    if (temperature == 0.0) return static_cast<TokenId>(argmax(logits));
    const double m = *std::max_element(logits.begin(), logits.end());
    Vector w(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        w[k] = std::exp((logits[k] - m) / temperature);
        total += w[k];
    }
    double u = rng.uniform() * total;
    for (std::size_t k = 0; k < w.size(); ++k) {
        if (u < w[k]) return static_cast<TokenId>(k);
        u -= w[k];
    }
    // Rounding can leave u just above the last weight.
    for (std::size_t k = w.size(); k-- > 0;) {
        if (w[k] > 0.0) return static_cast<TokenId>(k);
    }
    return 0;
}

/// Samples word by word from [start] until end is drawn or max_len - 2 words exist.
inline Generation generate_indices(const CaptionModelParams& p, std::span<const double> feature, double temperature,
                                   std::size_t max_len, Rng& rng) {
    if (temperature < 0.0 || std::isnan(temperature)) throw ValidationError("temperature must be >= 0");
    require_length(feature.size(), p.feature_dim(), "caption model feature");
    Generation out;
    out.trajectory.push_back(Vocabulary::kStart);
    const std::size_t budget = max_len >= 2 ? max_len - 2 : 0;

    Vector h = detail::initial_hidden(p, feature);
    Vector c(p.hidden_dim(), 0.0);
    std::size_t emitted = 0;
    while (emitted < budget) {
        const auto x = p.embedding.row(static_cast<std::size_t>(out.trajectory.back()));
        std::tie(h, c) = nn::lstm_step(p.lstm, x, h, c);
        const Vector logits = nn::dense_forward(p.output, h);
        const TokenId next = sample_token(logits, temperature, rng);
        out.trajectory.push_back(next);
        if (next == Vocabulary::kEnd) break;
        ++emitted;
        if (next != Vocabulary::kStart) out.words.push_back(next);
    }
    return out;
}

inline std::vector<std::string> generate_caption(const CaptionModelParams& p, const Vocabulary& vocab,
                                                 std::span<const double> feature, double temperature,
                                                 std::size_t max_len, Rng& rng) {
    const auto g = generate_indices(p, feature, temperature, max_len, rng);
    return decode_caption(g.words, vocab);
}

// ---------------------------------------------------------------------------
// Persistence

/// A trained caption model together with what is needed to use it.
struct CaptionModel {
    CaptionModelConfig config;
    CaptionModelParams params;
    Vocabulary vocab;
};

inline constexpr const char* kCaptionCheckpointKind = "caption_model";

inline nlohmann::json caption_model_to_json(const CaptionModel& m) {
    nlohmann::json meta = m.config;
    meta["vocabulary"] = m.vocab.words();
    return nn::make_checkpoint(kCaptionCheckpointKind, std::move(meta), nn::tensors_to_json(m.params));
}

inline void save_caption_model(const std::filesystem::path& path, const CaptionModel& m) {
    nn::write_json_file(path, caption_model_to_json(m));
}

inline CaptionModel load_caption_model(const std::filesystem::path& path) {
    const auto doc = nn::read_checkpoint(path, kCaptionCheckpointKind);
    CaptionModel m;
    try {
        m.config = doc.at("meta").get<CaptionModelConfig>();
        m.vocab = Vocabulary(doc.at("meta").at("vocabulary").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (m.vocab.size() != m.config.vocab_size) throw ParseError(path.string() + ": vocabulary size mismatch");
    m.params = build_model(m.config);
    nn::tensors_from_json(doc.at("tensors"), m.params);
    return m;
}

}  // namespace caprl
