#pragma once

// Finite-difference suites over every hand-written backward pass.
//
// Each suite draws random small shapes (at most 8 units per dimension), builds
// a scalar loss with fixed random weights on the outputs, and compares the
// analytic gradient of all parameters and inputs with central differences.
// The analytic side is the double-precision production code. The numeric side
// differentiates the long double reference passes, so rounding in the loss
// does not swamp gradient entries near the relative-error floor.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "caprl/caption_model.hpp"
#include "caprl/critic.hpp"
#include "caprl/nn/gradcheck.hpp"
#include "caprl/rlhf.hpp"
#include "caprl/wide_reference.hpp"

namespace caprl {

struct GradcheckSuiteResult {
    std::string name;
    std::size_t trials = 0;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    std::string worst;  // "trial 3: lstm.bias[7]"
    double seconds = 0.0;
};

struct GradcheckSuiteOptions {
    std::size_t trials = 10;
    double h = 1e-5;
    std::uint64_t seed = 0;
    std::size_t max_units = 8;
};

namespace detail {

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Tensor2 t(rows, cols);
    for (double& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

inline std::size_t units(Rng& rng, std::size_t max_units) { return 1 + rng.below(max_units); }

inline wide::Real dot(std::span<const double> a, const wide::Vec& b) {
    wide::Real s = 0.0L;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

struct DenseProbe {
    nn::DenseLayer layer;
    Tensor2 x;

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        nn::DenseLayer::visit(self.layer, fn, "dense");
        fn("x", self.x);
    }
};

struct LstmProbe {
    nn::LstmCell cell;
    Tensor2 x, h_prev, c_prev;

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        nn::LstmCell::visit(self.cell, fn, "lstm");
        fn("x", self.x);
        fn("h_prev", self.h_prev);
        fn("c_prev", self.c_prev);
    }
};

struct LogitProbe {
    Tensor2 logits;

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        fn("logits", self.logits);
    }
};

inline void fold(GradcheckSuiteResult& acc, const nn::GradcheckResult& r, std::size_t trial) {
    acc.checked += r.checked;
    if (r.checked > 0 && (acc.worst.empty() || r.max_rel_error > acc.max_rel_error)) {
        acc.max_rel_error = r.max_rel_error;
        acc.worst = "trial " + std::to_string(trial) + ": " + r.worst_tensor + "[" + std::to_string(r.worst_index) + "]";
    }
}

inline std::vector<TokenId> random_caption(Rng& rng, std::size_t vocab, std::size_t max_words) {
    std::vector<TokenId> c{Vocabulary::kStart};
    const std::size_t n = 1 + rng.below(max_words);
    for (std::size_t k = 0; k < n; ++k) {
        c.push_back(static_cast<TokenId>(Vocabulary::kEnd + 1 + rng.below(vocab - Vocabulary::kEnd - 1)));
    }
    c.push_back(Vocabulary::kEnd);
    return c;
}

}  // namespace detail

inline nn::GradcheckResult gradcheck_dense_trial(Rng& rng, const GradcheckSuiteOptions& o) {
    const std::size_t in = detail::units(rng, o.max_units), out = detail::units(rng, o.max_units);
    detail::DenseProbe probe{nn::DenseLayer(in, out), detail::random_tensor(1, in, rng)};
    probe.layer.init(rng);
    for (double& b : probe.layer.bias.data) b = rng.uniform(-0.5, 0.5);
    const Vector r = detail::random_tensor(1, out, rng).data;

    auto loss = [&](const detail::DenseProbe& p) { return detail::dot(r, wide::dense(p.layer, wide::widen(p.x.data))); };
    auto grad = nn::zeros_like(probe);
    grad.x.data = nn::dense_backward(probe.layer, probe.x.data, r, grad.layer);
    return nn::finite_diff_gradcheck(loss, probe, grad, o.h);
}

inline nn::GradcheckResult gradcheck_lstm_trial(Rng& rng, const GradcheckSuiteOptions& o) {
    const std::size_t in = detail::units(rng, o.max_units), h = detail::units(rng, o.max_units);
    detail::LstmProbe probe{nn::LstmCell(in, h), detail::random_tensor(1, in, rng), detail::random_tensor(1, h, rng),
                            detail::random_tensor(1, h, rng)};
    probe.cell.init(rng);
    const Vector rh = detail::random_tensor(1, h, rng).data;
    const Vector rc = detail::random_tensor(1, h, rng).data;

    auto loss = [&](const detail::LstmProbe& p) {
        const auto out = wide::lstm(p.cell, wide::widen(p.x.data), wide::widen(p.h_prev.data), wide::widen(p.c_prev.data));
        return detail::dot(rh, out.h) + detail::dot(rc, out.c);
    };
    auto grad = nn::zeros_like(probe);
    const auto cache = nn::lstm_step_cached(probe.cell, probe.x.data, probe.h_prev.data, probe.c_prev.data);
    auto g = nn::lstm_step_backward(probe.cell, cache, rh, rc, grad.cell);
    grad.x.data = g.dx;
    grad.h_prev.data = g.dh_prev;
    grad.c_prev.data = g.dc_prev;
    return nn::finite_diff_gradcheck(loss, probe, grad, o.h);
}

inline nn::GradcheckResult gradcheck_softmax_ce_trial(Rng& rng, const GradcheckSuiteOptions& o) {
    const std::size_t m = 2 + rng.below(o.max_units - 1);
    const std::size_t target = rng.below(m);
    detail::LogitProbe probe{detail::random_tensor(1, m, rng, 2.0)};

    auto loss = [&](const detail::LogitProbe& p) {
        return wide::cross_entropy(target, wide::softmax(wide::widen(p.logits.data)));
    };
    detail::LogitProbe grad{Tensor2(1, m, nn::softmax_cross_entropy_grad(nn::softmax(probe.logits.data), target))};
    return nn::finite_diff_gradcheck(loss, probe, grad, o.h);
}

inline nn::GradcheckResult gradcheck_caption_model_trial(Rng& rng, const GradcheckSuiteOptions& o) {
    CaptionModelConfig c;
    c.feature_dim = detail::units(rng, o.max_units);
    c.embed_dim = detail::units(rng, o.max_units);
    c.hidden_dim = detail::units(rng, o.max_units);
    c.vocab_size = Vocabulary::kNumSpecial + 1 + rng.below(o.max_units - Vocabulary::kNumSpecial);
    c.max_len = 8;
    c.seed = rng.next_u64();
    auto params = build_model(c);
    const Vector feature = detail::random_tensor(1, c.feature_dim, rng).data;
    const auto caption = detail::random_caption(rng, c.vocab_size, 4);
    std::span<const TokenId> cap(caption);
    const auto inputs = cap.first(cap.size() - 1);
    const auto targets = cap.subspan(1);

    auto loss = [&](const CaptionModelParams& p) { return wide::caption_nll(p, feature, inputs, targets); };
    auto grad = nn::zeros_like(params);
    teacher_forced(params, feature, inputs, targets, &grad, 1.0);
    return nn::finite_diff_gradcheck(loss, params, grad, o.h);
}

/// The fine-tuning loss: mean cross-entropy over the human caption minus the
/// feedback. Its gradient is the one literal-mode fine-tuning applies.
inline nn::GradcheckResult gradcheck_rlhf_ce_trial(Rng& rng, const GradcheckSuiteOptions& o) {
    CaptionModelConfig c;
    c.feature_dim = detail::units(rng, o.max_units);
    c.embed_dim = detail::units(rng, o.max_units);
    c.hidden_dim = detail::units(rng, o.max_units);
    c.vocab_size = Vocabulary::kNumSpecial + 1 + rng.below(o.max_units - Vocabulary::kNumSpecial);
    c.seed = rng.next_u64();
    auto params = build_model(c);
    const Vector feature = detail::random_tensor(1, c.feature_dim, rng).data;
    const auto caption = detail::random_caption(rng, c.vocab_size, 4);
    const FeedbackScore feedback(rng.uniform(-1.0, 1.0), FeedbackSource::critic);
    std::span<const TokenId> cap(caption);
    const auto n = static_cast<wide::Real>(cap.size() - 1);

    auto loss = [&](const CaptionModelParams& p) {
        return wide::caption_nll(p, feature, cap.first(cap.size() - 1), cap.subspan(1)) / n - feedback.value;
    };
    auto grad = nn::zeros_like(params);
    teacher_forced(params, feature, cap.first(cap.size() - 1), cap.subspan(1), &grad,
                   1.0 / static_cast<double>(cap.size() - 1));
    return nn::finite_diff_gradcheck(loss, params, grad, o.h);
}

inline nn::GradcheckResult gradcheck_critic_trial(Rng& rng, const GradcheckSuiteOptions& o) {
    CriticConfig c;
    c.feature_dim = detail::units(rng, o.max_units);
    c.embed_dim = detail::units(rng, o.max_units);
    c.hidden_dim = detail::units(rng, o.max_units);
    c.vocab_size = Vocabulary::kNumSpecial + 1 + rng.below(o.max_units - Vocabulary::kNumSpecial);
    c.seed = rng.next_u64();
    auto params = build_critic(c);

    std::vector<CriticExample> examples;
    const std::size_t n = 1 + rng.below(3);
    for (std::size_t k = 0; k < n; ++k) {
        auto f = std::make_shared<ImageFeature>();
        f->image_id = "probe" + std::to_string(k);
        f->vector = detail::random_tensor(1, c.feature_dim, rng).data;
        examples.push_back({f, detail::random_caption(rng, c.vocab_size, 4), rng.uniform(-1.0, 1.0)});
    }
    auto loss = [&](const CriticParams& p) { return wide::critic_mse(p, examples); };
    auto grad = nn::zeros_like(params);
    critic_mse(params, examples, &grad);
    return nn::finite_diff_gradcheck(loss, params, grad, o.h);
}

using GradcheckTrial = std::function<nn::GradcheckResult(Rng&, const GradcheckSuiteOptions&)>;

inline std::vector<std::pair<std::string, GradcheckTrial>> gradcheck_suite_table() {
    return {
        {"dense", gradcheck_dense_trial},
        {"lstm", gradcheck_lstm_trial},
        {"softmax_ce", gradcheck_softmax_ce_trial},
        {"caption_model", gradcheck_caption_model_trial},
        {"rlhf_ce", gradcheck_rlhf_ce_trial},
        {"critic", gradcheck_critic_trial},
    };
}

inline GradcheckSuiteResult run_gradcheck_suite(const std::string& name, const GradcheckTrial& trial,
                                                const GradcheckSuiteOptions& o) {
    if (o.max_units < Vocabulary::kNumSpecial + 1) throw ConfigError("gradcheck max_units must be at least 5");
    GradcheckSuiteResult acc;
    acc.name = name;
    acc.trials = o.trials;
    const auto start = std::chrono::steady_clock::now();
    Rng root(o.seed ^ fnv1a64(name));
    for (std::size_t t = 0; t < o.trials; ++t) {
        Rng rng = root.fork(t);
        detail::fold(acc, trial(rng, o), t);
    }
    acc.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return acc;
}

inline std::vector<GradcheckSuiteResult> run_gradcheck_suites(const GradcheckSuiteOptions& o) {
    std::vector<GradcheckSuiteResult> out;
    for (const auto& [name, trial] : gradcheck_suite_table()) out.push_back(run_gradcheck_suite(name, trial, o));
    return out;
}

}  // namespace caprl
