#pragma once

// Fine-tuning a caption model against human-preferred captions and feedback.
//
// The per-image loss is
//
//     Loss = -(1/N) * sum_i sum_j y_ij * log(p_ij) - Feedback
//
// where row i of y is the one-hot i-th word of the human caption (N counts its
// words plus the end token), p_ij is the model's teacher-forced prediction for
// that position, and Feedback in [-1, 1] comes from a critic or a rater.
//
// Feedback does not depend on the parameters, so differentiating the loss as
// written gives the plain cross-entropy gradient. Two update rules exist:
//
//   literal    gradient of the expression above (feedback only shifts the
//              reported loss)
//   advantage  additionally subtracts Feedback * grad log p(sampled caption),
//              a REINFORCE-style term that lets the critic steer learning
//
// The reported loss is identical in both modes.

#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "caprl/caption_model.hpp"
#include "caprl/critic.hpp"
#include "caprl/diagnostics.hpp"
#include "caprl/evaluation.hpp"

namespace caprl {

/// One-hot targets, N x M.
class TargetMatrix {
public:
    TargetMatrix(std::span<const TokenId> targets, std::size_t vocab_size) : ones_(targets.size(), vocab_size) {
        if (targets.empty()) throw ValidationError("target matrix needs at least one row");
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const TokenId t = targets[i];
            if (t < 0 || static_cast<std::size_t>(t) >= vocab_size) throw IndexError("target index outside vocabulary");
            ones_(i, static_cast<std::size_t>(t)) = 1.0;
        }
    }

    /// Targets of an encoded [start, w1..wn, end] caption: rows w1..wn, end.
    static TargetMatrix from_caption(std::span<const TokenId> encoded, std::size_t vocab_size) {
        check_encoded_caption(encoded);
        return TargetMatrix(encoded.subspan(1), vocab_size);
    }

    std::size_t rows() const { return ones_.rows; }
    std::size_t cols() const { return ones_.cols; }
    std::span<const double> row(std::size_t i) const { return ones_.row(i); }
    const Tensor2& dense() const { return ones_; }

private:
    Tensor2 ones_;
};

/// Row-stochastic predictions, N x M.
class PredictionMatrix {
public:
    explicit PredictionMatrix(std::vector<Vector> rows) {
        if (rows.empty()) throw ValidationError("prediction matrix needs at least one row");
        const std::size_t m = rows.front().size();
        probs_ = Tensor2(rows.size(), m);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            require_length(rows[i].size(), m, "prediction row");
            double sum = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                if (!(rows[i][j] >= 0.0)) throw ValidationError("prediction entries must be non-negative");
                probs_(i, j) = rows[i][j];
                sum += rows[i][j];
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("prediction row does not sum to 1");
        }
    }

    std::size_t rows() const { return probs_.rows; }
    std::size_t cols() const { return probs_.cols; }
    std::span<const double> row(std::size_t i) const { return probs_.row(i); }

private:
    Tensor2 probs_;
};

enum class FeedbackSource { human, critic };

struct FeedbackScore {
    double value = 0.0;
    FeedbackSource source = FeedbackSource::critic;

    FeedbackScore() = default;
    FeedbackScore(double v, FeedbackSource s) : value(v), source(s) {
        if (!valid_rating(v)) throw ValidationError("feedback must lie in [-1, 1]");
    }
};

inline double rlhf_loss(const TargetMatrix& y, const PredictionMatrix& p, const FeedbackScore& feedback) {
    if (y.rows() != p.rows() || y.cols() != p.cols()) {
        throw ShapeError("rlhf_loss: targets are " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                         ", predictions " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const auto yi = y.row(i);
        const auto pi = p.row(i);
        for (std::size_t j = 0; j < yi.size(); ++j) {
            if (yi[j] != 0.0) sum += yi[j] * std::log(std::max(pi[j], nn::kLogClip));
        }
    }
    return -sum / static_cast<double>(y.rows()) - feedback.value;
}

/// Teacher-forced predictions over an encoded human caption, one row per target.
inline PredictionMatrix teacher_forced_predictions(const CaptionModelParams& params, std::span<const double> feature,
                                                   std::span<const TokenId> encoded) {
    check_encoded_caption(encoded);
    std::vector<Vector> rows;
    teacher_forced(params, feature, encoded.first(encoded.size() - 1), encoded.subspan(1), nullptr, 1.0, &rows);
    return PredictionMatrix(std::move(rows));
}

// ---------------------------------------------------------------------------
// Fine-tuning loop

enum class FinetuneMode { literal, advantage };

inline const char* to_string(FinetuneMode m) { return m == FinetuneMode::literal ? "literal" : "advantage"; }

inline FinetuneMode parse_finetune_mode(std::string_view s) {
    if (s == "literal") return FinetuneMode::literal;
    if (s == "advantage") return FinetuneMode::advantage;
    throw ConfigError("unknown finetune mode '" + std::string(s) + "' (expected literal or advantage)");
}

struct FinetuneExample {
    std::shared_ptr<const ImageFeature> feature;
    std::vector<TokenId> human_caption;  // encoded [start, ..., end]
};

/// Scores a generated caption for an example.
using FeedbackFn = std::function<FeedbackScore(const FinetuneExample&, const Generation&)>;

struct FinetuneOptions {
    FinetuneMode mode = FinetuneMode::literal;
    std::size_t steps = 0;  // 0 means one pass over the dataset
    double temperature = 1.0;
    std::size_t max_len = kMaxLenCap;
    std::uint64_t seed = 0;
    nn::AdamConfig adam{};
};

struct TraceRow {
    std::size_t step = 0;
    std::string image_id;
    double ce = 0.0;
    double feedback = 0.0;
    double loss = 0.0;
    FinetuneMode mode = FinetuneMode::literal;
    std::vector<TokenId> generated;
};

struct FinetuneTrace {
    std::vector<TraceRow> rows;

    /// CSV with header `step,image_id,ce,feedback,loss,mode`.
    void write_csv(std::ostream& out) const {
        out << "step,image_id,ce,feedback,loss,mode\n";
        for (const auto& r : rows) {
            out << r.step << ',' << r.image_id << ',' << format_double(r.ce) << ',' << format_double(r.feedback) << ','
                << format_double(r.loss) << ',' << to_string(r.mode) << '\n';
        }
    }
};

/// Visits images in a freshly shuffled order each pass. Per step: sample a
/// caption, score it, compute the loss on the human caption and take one
/// Adam step.
inline FinetuneTrace finetune(CaptionModelParams& params, std::span<const FinetuneExample> dataset,
                              const FeedbackFn& feedback, const FinetuneOptions& options) {
    if (dataset.empty()) throw ValidationError("finetune: empty dataset");
    if (!feedback) throw ConfigError("finetune: no feedback source");
    for (const auto& ex : dataset) check_encoded_caption(ex.human_caption);

    Rng order_rng(options.seed);
    Rng sample_rng(options.seed ^ 0x5A3D1E5ULL);
    auto adam = nn::AdamState::for_params(params, options.adam);
    auto grad = nn::zeros_like(params);
    const std::size_t steps = options.steps ? options.steps : dataset.size();

    std::vector<std::size_t> order(dataset.size());
    FinetuneTrace trace;
    for (std::size_t step = 0; step < steps; ++step) {
        const std::size_t pos = step % dataset.size();
        if (pos == 0) {
            for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
            order_rng.shuffle(std::span<std::size_t>(order));
        }
        const FinetuneExample& ex = dataset[order[pos]];
        const auto& feature = ex.feature->vector;

        const Generation sampled = generate_indices(params, feature, options.temperature, options.max_len, sample_rng);
        const FeedbackScore score = feedback(ex, sampled);

        std::span<const TokenId> human(ex.human_caption);
        const double n = static_cast<double>(human.size() - 1);
        for (Tensor2* t : nn::tensors_of(grad)) t->fill(0.0);
        const double ce = teacher_forced(params, feature, human.first(human.size() - 1), human.subspan(1), &grad, 1.0 / n) / n;

        if (options.mode == FinetuneMode::advantage && score.value != 0.0 && sampled.trajectory.size() >= 2) {
            std::span<const TokenId> traj(sampled.trajectory);
            teacher_forced(params, feature, traj.first(traj.size() - 1), traj.subspan(1), &grad, score.value);
        }
        nn::adam_update(adam, params, grad);

        trace.rows.push_back({step, ex.feature->image_id, ce, score.value, ce - score.value, options.mode,
                              sampled.words});
    }
    return trace;
}

/// Feedback from a trained critic. The generated words are decoded with the
/// caption model's vocabulary and re-encoded with the critic's.
inline FeedbackFn critic_feedback(const CriticParams& critic, const Vocabulary& critic_vocab,
                                  const Vocabulary& caption_vocab, const WarningSink& warnings = stderr_warnings()) {
    if (nn::all_zero(critic)) warn(warnings, "critic parameters are all zero; feedback will be constant 0");
    return [critic, critic_vocab, caption_vocab](const FinetuneExample& ex, const Generation& g) {
        const auto words = decode_caption(g.words, caption_vocab);
        std::vector<TokenId> tokens = encode_caption(words, critic_vocab);
        return FeedbackScore(critic_forward(critic, ex.feature->vector, tokens), FeedbackSource::critic);
    };
}

/// Synthetic critic for experiments without human raters: the score is
/// 2 * F1 - 1, where F1 is the unigram F1 of the generated words against the
/// image's human captions, averaged over those captions. With a single human
/// caption per image this is simply 2 * F1(generated, human) - 1.
inline FeedbackFn overlap_feedback(ReferenceSet references, const Vocabulary& caption_vocab) {
    return [refs = std::move(references), caption_vocab](const FinetuneExample& ex, const Generation& g) {
        auto it = refs.find(ex.feature->image_id);
        if (it == refs.end() || it->second.empty()) {
            throw MissingReferenceError("no human captions for image '" + ex.feature->image_id + "'");
        }
        const auto words = decode_caption(g.words, caption_vocab);
        double f1 = 0.0;
        for (const auto& ref : it->second) f1 += unigram_f1(words, ref);
        f1 /= static_cast<double>(it->second.size());
        return FeedbackScore(std::clamp(2.0 * f1 - 1.0, -1.0, 1.0), FeedbackSource::critic);
    };
}

struct QualityReport {
    double mean = 0.0;
    std::map<std::string, double> per_image;  // mean score of each image's samples
};

/// Mean feedback over `samples` generated captions per distinct image of
/// `dataset`. Sampling runs round by round over the images in id order from
/// Rng(seed), so two models evaluated with the same seed see the same draws
/// wherever their distributions agree.
inline QualityReport generation_quality(const CaptionModelParams& params, std::span<const FinetuneExample> dataset,
                                        const FeedbackFn& feedback, double temperature, std::size_t samples,
                                        std::size_t max_len, std::uint64_t seed) {
    if (dataset.empty()) throw ValidationError("generation_quality: empty dataset");
    if (samples == 0) throw ConfigError("generation_quality: samples must be positive");
    std::map<std::string, const FinetuneExample*> images;
    for (const auto& ex : dataset) images.try_emplace(ex.feature->image_id, &ex);

    Rng rng(seed);
    QualityReport report;
    double total = 0.0;
    for (std::size_t round = 0; round < samples; ++round) {
        for (const auto& [id, ex] : images) {
            const auto g = generate_indices(params, ex->feature->vector, temperature, max_len, rng);
            const double score = feedback(*ex, g).value;
            report.per_image[id] += score;
            total += score;
        }
    }
    for (auto& [id, v] : report.per_image) v /= static_cast<double>(samples);
    report.mean = total / static_cast<double>(samples * images.size());
    return report;
}

}  // namespace caprl
