#pragma once

// Straight-line forward passes in long double.
//
// These mirror the double-precision model code without sharing any of it.
// Finite differences taken through them lose far less to rounding, which
// matters for gradient entries close to the 1e-8 relative-error floor. They
// also serve as an independent check on the production forward passes.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "caprl/caption_model.hpp"
#include "caprl/critic.hpp"

namespace caprl::wide {

using Real = long double;
using Vec = std::vector<Real>;

inline Vec widen(std::span<const double> v) { return Vec(v.begin(), v.end()); }

inline Vec dense(const nn::DenseLayer& layer, const Vec& x) {
    const std::size_t out = layer.out_dim();
    Vec y(out);
    for (std::size_t j = 0; j < out; ++j) {
        Real acc = layer.bias.data[j];
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * static_cast<Real>(layer.weight(i, j));
        y[j] = acc;
    }
    return y;
}

inline Real sigmoid(Real z) { return 1.0L / (1.0L + std::exp(-z)); }

struct LstmOut {
    Vec h, c;
};

inline LstmOut lstm(const nn::LstmCell& cell, const Vec& x, const Vec& h_prev, const Vec& c_prev) {
    const std::size_t H = cell.hidden_dim();
    LstmOut out{Vec(H), Vec(H)};
    for (std::size_t k = 0; k < H; ++k) {
        Real z[4];
        for (std::size_t gate = 0; gate < 4; ++gate) {
            const std::size_t col = gate * H + k;
            Real acc = cell.bias.data[col];
            for (std::size_t r = 0; r < x.size(); ++r) acc += x[r] * static_cast<Real>(cell.input_weight(r, col));
            for (std::size_t r = 0; r < H; ++r) acc += h_prev[r] * static_cast<Real>(cell.hidden_weight(r, col));
            z[gate] = acc;
        }
        const Real i = sigmoid(z[0]), f = sigmoid(z[1]), g = std::tanh(z[2]), o = sigmoid(z[3]);
        out.c[k] = f * c_prev[k] + i * g;
        out.h[k] = o * std::tanh(out.c[k]);
    }
    return out;
}

inline Vec softmax(const Vec& z) {
    const Real m = *std::max_element(z.begin(), z.end());
    Vec p(z.size());
    Real sum = 0.0L;
    for (std::size_t k = 0; k < z.size(); ++k) sum += (p[k] = std::exp(z[k] - m));
    for (Real& v : p) v /= sum;
    return p;
}

inline Real cross_entropy(std::size_t target, const Vec& p) {
    return -std::log(std::max(p[target], static_cast<Real>(nn::kLogClip)));
}

/// Summed cross-entropy of the teacher-forced caption model.
inline Real caption_nll(const CaptionModelParams& p, std::span<const double> feature, std::span<const TokenId> inputs,
                        std::span<const TokenId> targets) {
    Vec h = dense(p.feature_proj, widen(feature));
    for (Real& v : h) v = std::tanh(v);
    Vec c(h.size(), 0.0L);
    Real loss = 0.0L;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto step = lstm(p.lstm, widen(p.embedding.row(static_cast<std::size_t>(inputs[t]))), h, c);
        h = std::move(step.h);
        c = std::move(step.c);
        if (targets[t] == kNoTarget) continue;
        loss += cross_entropy(static_cast<std::size_t>(targets[t]), softmax(dense(p.output, h)));
    }
    return loss;
}

inline Real critic_score(const CriticParams& p, std::span<const double> feature, std::span<const TokenId> caption) {
    std::vector<TokenId> sorted(caption.begin(), caption.end());
    std::sort(sorted.begin(), sorted.end());
    Vec joint_in = dense(p.feature_proj, widen(feature));
    Vec pooled(p.embedding.cols, 0.0L);
    for (TokenId t : sorted) {
        for (std::size_t k = 0; k < pooled.size(); ++k) pooled[k] += p.embedding(static_cast<std::size_t>(t), k);
    }
    for (Real& v : pooled) v /= static_cast<Real>(sorted.size());
    joint_in.insert(joint_in.end(), pooled.begin(), pooled.end());
    Vec u = dense(p.joint, joint_in);
    for (Real& v : u) v = std::tanh(v);
    return std::tanh(dense(p.head, u)[0]);
}

inline Real critic_mse(const CriticParams& p, std::span<const CriticExample> examples) {
    Real total = 0.0L;
    for (const auto& ex : examples) {
        const Real err = critic_score(p, ex.feature->vector, ex.caption) - static_cast<Real>(ex.rating);
        total += err * err;
    }
    return total / static_cast<Real>(examples.size());
}

}  // namespace caprl::wide
