#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <utility>

#include "caprl/nn/params.hpp"
#include "caprl/tensor.hpp"

namespace caprl::nn {

/// Floor applied to every probability before taking its log.
inline constexpr double kLogClip = 1e-12;

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Dense

/// y = x W + b, with W stored in x out.
struct DenseLayer {
    Tensor2 weight;
    Tensor2 bias;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out) : weight(in, out), bias(1, out) {}

    std::size_t in_dim() const { return weight.rows; }
    std::size_t out_dim() const { return weight.cols; }

    void init(Rng& rng) {
        glorot_uniform(weight, rng);
        bias.fill(0.0);
    }

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn, std::string_view prefix) {
        fn(join_name(prefix, "weight"), self.weight);
        fn(join_name(prefix, "bias"), self.bias);
    }

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        visit(self, fn, "");
    }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

inline void check_dense(const DenseLayer& layer) {
    require_shape(layer.bias, 1, layer.out_dim(), "dense bias");
}

inline Vector dense_forward(const DenseLayer& layer, std::span<const double> x) {
    check_dense(layer);
    require_length(x.size(), layer.in_dim(), "dense input");
    const std::size_t out = layer.out_dim();
    Vector y(layer.bias.data.begin(), layer.bias.data.end());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const auto w = layer.weight.row(i);
        for (std::size_t j = 0; j < out; ++j) y[j] += xi * w[j];
    }
    return y;
}

/// Accumulates dW, db into `grad` and returns dL/dx.
inline Vector dense_backward(const DenseLayer& layer, std::span<const double> x, std::span<const double> dy,
                             DenseLayer& grad) {
    require_length(x.size(), layer.in_dim(), "dense input");
    require_length(dy.size(), layer.out_dim(), "dense output gradient");
    const std::size_t out = layer.out_dim();
    Vector dx(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const auto w = layer.weight.row(i);
        auto gw = grad.weight.row(i);
        const double xi = x[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) {
            gw[j] += xi * dy[j];
            acc += w[j] * dy[j];
        }
        dx[i] = acc;
    }
    for (std::size_t j = 0; j < out; ++j) grad.bias.data[j] += dy[j];
    return dx;
}

// ---------------------------------------------------------------------------
// LSTM

/// Gate blocks are laid out [input, forget, cell-candidate, output] along the 4h axis.
struct LstmCell {
    Tensor2 input_weight;   // in x 4h
    Tensor2 hidden_weight;  // h x 4h
    Tensor2 bias;           // 1 x 4h

    LstmCell() = default;
    LstmCell(std::size_t in, std::size_t hidden)
        : input_weight(in, 4 * hidden), hidden_weight(hidden, 4 * hidden), bias(1, 4 * hidden) {}

    std::size_t in_dim() const { return input_weight.rows; }
    std::size_t hidden_dim() const { return hidden_weight.rows; }

    void init(Rng& rng) {
        glorot_uniform(input_weight, rng);
        glorot_uniform(hidden_weight, rng);
        bias.fill(0.0);
        const std::size_t h = hidden_dim();
        for (std::size_t k = h; k < 2 * h; ++k) bias.data[k] = 1.0;
    }

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn, std::string_view prefix) {
        fn(join_name(prefix, "input_weight"), self.input_weight);
        fn(join_name(prefix, "hidden_weight"), self.hidden_weight);
        fn(join_name(prefix, "bias"), self.bias);
    }

    template <class Self, class Fn>
    static void visit(Self& self, Fn&& fn) {
        visit(self, fn, "");
    }

    friend bool operator==(const LstmCell&, const LstmCell&) = default;
};

/// Everything the backward pass of one step needs.
struct LstmStepCache {
    Vector x, h_prev, c_prev;
    Vector i, f, g, o;
    Vector c, tanh_c, h;
};

inline void check_lstm(const LstmCell& cell) {
    const std::size_t h = cell.hidden_dim();
    require_shape(cell.hidden_weight, h, 4 * h, "lstm hidden weight");
    require_shape(cell.input_weight, cell.in_dim(), 4 * h, "lstm input weight");
    require_shape(cell.bias, 1, 4 * h, "lstm bias");
}

inline LstmStepCache lstm_step_cached(const LstmCell& cell, std::span<const double> x, std::span<const double> h_prev,
                                      std::span<const double> c_prev) {
    check_lstm(cell);
    const std::size_t h = cell.hidden_dim();
    require_length(x.size(), cell.in_dim(), "lstm input");
    require_length(h_prev.size(), h, "lstm h_prev");
    require_length(c_prev.size(), h, "lstm c_prev");

    Vector z(cell.bias.data.begin(), cell.bias.data.end());
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        const auto w = cell.input_weight.row(r);
        for (std::size_t k = 0; k < 4 * h; ++k) z[k] += xr * w[k];
    }
    for (std::size_t r = 0; r < h; ++r) {
        const double hr = h_prev[r];
        if (hr == 0.0) continue;
        const auto w = cell.hidden_weight.row(r);
        for (std::size_t k = 0; k < 4 * h; ++k) z[k] += hr * w[k];
    }

    LstmStepCache s;
    s.x.assign(x.begin(), x.end());
    s.h_prev.assign(h_prev.begin(), h_prev.end());
    s.c_prev.assign(c_prev.begin(), c_prev.end());
    s.i.resize(h);
    s.f.resize(h);
    s.g.resize(h);
    s.o.resize(h);
    s.c.resize(h);
    s.tanh_c.resize(h);
    s.h.resize(h);
    for (std::size_t k = 0; k < h; ++k) {
        s.i[k] = sigmoid(z[k]);
        s.f[k] = sigmoid(z[h + k]);
        s.g[k] = std::tanh(z[2 * h + k]);
        s.o[k] = sigmoid(z[3 * h + k]);
        s.c[k] = s.f[k] * c_prev[k] + s.i[k] * s.g[k];
        s.tanh_c[k] = std::tanh(s.c[k]);
        s.h[k] = s.o[k] * s.tanh_c[k];
    }
    return s;
}

inline std::pair<Vector, Vector> lstm_step(const LstmCell& cell, std::span<const double> x,
                                           std::span<const double> h_prev, std::span<const double> c_prev) {
    auto s = lstm_step_cached(cell, x, h_prev, c_prev);
    return {std::move(s.h), std::move(s.c)};
}

struct LstmStepGrads {
    Vector dx, dh_prev, dc_prev;
};

/// Backprop through one step. `dh` and `dc` are the total upstream gradients
/// arriving at this step's h and c outputs.
inline LstmStepGrads lstm_step_backward(const LstmCell& cell, const LstmStepCache& s, std::span<const double> dh,
                                        std::span<const double> dc, LstmCell& grad) {
    const std::size_t h = cell.hidden_dim();
    require_length(dh.size(), h, "lstm dh");
    require_length(dc.size(), h, "lstm dc");

    Vector dz(4 * h);
    LstmStepGrads out;
    out.dc_prev.resize(h);
    for (std::size_t k = 0; k < h; ++k) {
        const double dct = dc[k] + dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
        const double d_o = dh[k] * s.tanh_c[k];
        const double d_i = dct * s.g[k];
        const double d_g = dct * s.i[k];
        const double d_f = dct * s.c_prev[k];
        out.dc_prev[k] = dct * s.f[k];
        dz[k] = d_i * s.i[k] * (1.0 - s.i[k]);
        dz[h + k] = d_f * s.f[k] * (1.0 - s.f[k]);
        dz[2 * h + k] = d_g * (1.0 - s.g[k] * s.g[k]);
        dz[3 * h + k] = d_o * s.o[k] * (1.0 - s.o[k]);
    }

    out.dx.assign(s.x.size(), 0.0);
    for (std::size_t r = 0; r < s.x.size(); ++r) {
        const auto w = cell.input_weight.row(r);
        auto gw = grad.input_weight.row(r);
        double acc = 0.0;
        for (std::size_t k = 0; k < 4 * h; ++k) {
            gw[k] += s.x[r] * dz[k];
            acc += w[k] * dz[k];
        }
        out.dx[r] = acc;
    }
    out.dh_prev.assign(h, 0.0);
    for (std::size_t r = 0; r < h; ++r) {
        const auto w = cell.hidden_weight.row(r);
        auto gw = grad.hidden_weight.row(r);
        double acc = 0.0;
        for (std::size_t k = 0; k < 4 * h; ++k) {
            gw[k] += s.h_prev[r] * dz[k];
            acc += w[k] * dz[k];
        }
        out.dh_prev[r] = acc;
    }
    for (std::size_t k = 0; k < 4 * h; ++k) grad.bias.data[k] += dz[k];
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

inline Vector softmax(std::span<const double> z) {
    Vector p(z.size());
    if (z.empty()) return p;
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        p[k] = std::exp(z[k] - m);
        sum += p[k];
    }
    for (double& v : p) v /= sum;
    return p;
}

/// -log(max(p[target], 1e-12)). The one-hot target is given by index.
inline double cross_entropy(std::size_t target, std::span<const double> p) {
    if (target >= p.size()) throw ShapeError("cross_entropy: target index outside distribution");
    return -std::log(std::max(p[target], kLogClip));
}

/// Same loss with an explicit one-hot vector, as written in the loss formula.
inline double cross_entropy(std::span<const double> y, std::span<const double> p) {
    require_length(p.size(), y.size(), "cross_entropy");
    double loss = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        if (y[k] != 0.0) loss -= y[k] * std::log(std::max(p[k], kLogClip));
    }
    return loss;
}

/// d CE / d logits for p = softmax(logits). Zero when the clip is active,
/// since the clipped loss is then flat in the logits.
inline Vector softmax_cross_entropy_grad(std::span<const double> p, std::size_t target) {
    Vector d(p.begin(), p.end());
    if (p[target] < kLogClip) {
        std::fill(d.begin(), d.end(), 0.0);
        return d;
    }
    d[target] -= 1.0;
    return d;
}

}  // namespace caprl::nn
