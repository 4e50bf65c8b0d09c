#pragma once

#include <concepts>
#include <string>
#include <string_view>
#include <vector>

#include "caprl/tensor.hpp"

namespace caprl::nn {

/// A parameter set is any struct that can enumerate its tensors by name.
/// The same type doubles as its own gradient container.
template <class P>
concept ParameterSet = std::copy_constructible<P> && requires(P& p, const P& cp) {
    P::visit(p, [](std::string_view, Tensor2&) {});
    P::visit(cp, [](std::string_view, const Tensor2&) {});
};

inline std::string join_name(std::string_view prefix, std::string_view leaf) {
    if (prefix.empty()) return std::string(leaf);
    std::string out(prefix);
    out += '.';
    out += leaf;
    return out;
}

template <ParameterSet P>
std::vector<Tensor2*> tensors_of(P& params) {
    std::vector<Tensor2*> out;
    P::visit(params, [&](std::string_view, Tensor2& t) { out.push_back(&t); });
    return out;
}

template <ParameterSet P>
std::vector<const Tensor2*> tensors_of(const P& params) {
    std::vector<const Tensor2*> out;
    P::visit(params, [&](std::string_view, const Tensor2& t) { out.push_back(&t); });
    return out;
}

template <ParameterSet P>
std::vector<std::string> tensor_names(const P& params) {
    std::vector<std::string> out;
    P::visit(params, [&](std::string_view name, const Tensor2&) { out.emplace_back(name); });
    return out;
}

template <ParameterSet P>
P zeros_like(const P& params) {
    P out = params;
    P::visit(out, [](std::string_view, Tensor2& t) { t.fill(0.0); });
    return out;
}

template <ParameterSet P>
std::size_t parameter_count(const P& params) {
    std::size_t n = 0;
    P::visit(params, [&](std::string_view, const Tensor2& t) { n += t.size(); });
    return n;
}

template <ParameterSet P>
bool all_zero(const P& params) {
    bool zero = true;
    P::visit(params, [&](std::string_view, const Tensor2& t) {
        for (double v : t.data) zero = zero && v == 0.0;
    });
    return zero;
}

template <ParameterSet P>
void scale_in_place(P& params, double factor) {
    P::visit(params, [&](std::string_view, Tensor2& t) {
        for (double& v : t.data) v *= factor;
    });
}

/// dst += factor * src, tensor by tensor.
template <ParameterSet P>
void add_scaled(P& dst, const P& src, double factor) {
    auto d = tensors_of(dst);
    auto s = tensors_of(src);
    require_length(s.size(), d.size(), "add_scaled tensor count");
    for (std::size_t k = 0; k < d.size(); ++k) {
        require_shape(*s[k], d[k]->rows, d[k]->cols, "add_scaled");
        for (std::size_t i = 0; i < d[k]->size(); ++i) d[k]->data[i] += factor * s[k]->data[i];
    }
}

}  // namespace caprl::nn
