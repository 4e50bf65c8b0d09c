#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "caprl/nn/params.hpp"

namespace caprl::nn {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

/// Compares `analytic` against central differences of `loss_fn` for every
/// scalar in `params`. `params` is perturbed in place and restored exactly.
/// The difference is taken in whatever floating type `loss_fn` returns, so a
/// long double loss keeps its extra precision until the final quotient.
template <ParameterSet P, class LossFn>
GradcheckResult finite_diff_gradcheck(LossFn&& loss_fn, P params, const P& analytic, double h) {
    if (!(h > 0.0)) throw ValidationError("gradcheck step h must be positive");

    std::vector<std::string> names = tensor_names(params);
    auto ps = tensors_of(params);
    auto gs = tensors_of(analytic);
    require_length(gs.size(), ps.size(), "gradcheck tensor count");

    using Real = std::decay_t<decltype(loss_fn(static_cast<const P&>(params)))>;
    static_assert(std::is_floating_point_v<Real>, "gradcheck loss must return a floating-point value");

    GradcheckResult result;
    for (std::size_t k = 0; k < ps.size(); ++k) {
        require_shape(*gs[k], ps[k]->rows, ps[k]->cols, "gradcheck analytic gradient");
        for (std::size_t i = 0; i < ps[k]->size(); ++i) {
            double& theta = ps[k]->data[i];
            const double saved = theta;
            theta = saved + h;
            const Real up = loss_fn(static_cast<const P&>(params));
            theta = saved - h;
            const Real down = loss_fn(static_cast<const P&>(params));
            theta = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("gradcheck: non-finite loss while perturbing " + names[k]);
            }
            const double numeric = static_cast<double>((up - down) / (Real(2) * Real(h)));
            const double a = gs[k]->data[i];
            const double err = relative_error(a, numeric);
            ++result.checked;
            if (result.checked == 1 || err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_tensor = names[k];
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace caprl::nn
