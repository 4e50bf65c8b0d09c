#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "caprl/nn/params.hpp"

namespace caprl::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Moment accumulators mirror the parameter tensors one-to-one, in visit order.
struct AdamState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<Tensor2> first_moment;
    std::vector<Tensor2> second_moment;

    AdamState() = default;
    explicit AdamState(AdamConfig cfg) : config(cfg) {}

    template <ParameterSet P>
    static AdamState for_params(const P& params, AdamConfig cfg = {}) {
        AdamState s(cfg);
        s.ensure_shapes(params);
        return s;
    }

    template <ParameterSet P>
    void ensure_shapes(const P& params) {
        const auto ts = tensors_of(params);
        if (first_moment.empty()) {
            for (const Tensor2* t : ts) {
                first_moment.emplace_back(t->rows, t->cols);
                second_moment.emplace_back(t->rows, t->cols);
            }
            return;
        }
        require_length(first_moment.size(), ts.size(), "adam moment count");
        for (std::size_t k = 0; k < ts.size(); ++k) {
            require_shape(first_moment[k], ts[k]->rows, ts[k]->cols, "adam first moment");
            require_shape(second_moment[k], ts[k]->rows, ts[k]->cols, "adam second moment");
        }
    }
};

/// One bias-corrected Adam step; `state.step` advances by one.
///
/// An all-zero gradient still advances the step count and decays the moments,
/// but leaves the parameters untouched.
template <ParameterSet P>
void adam_update(AdamState& state, P& params, const P& grads) {
    state.ensure_shapes(params);
    auto ps = tensors_of(params);
    auto gs = tensors_of(grads);
    require_length(gs.size(), ps.size(), "adam gradient count");

    bool any_nonzero = false;
    for (std::size_t k = 0; k < ps.size(); ++k) {
        require_shape(*gs[k], ps[k]->rows, ps[k]->cols, "adam gradient");
        for (double g : gs[k]->data) any_nonzero = any_nonzero || g != 0.0;
    }

    const AdamConfig& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);

    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto& m = state.first_moment[k].data;
        auto& v = state.second_moment[k].data;
        const auto& g = gs[k]->data;
        auto& p = ps[k]->data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            if (!any_nonzero) continue;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
        }
    }
}

}  // namespace caprl::nn
