#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "caprl/error.hpp"
#include "caprl/rng.hpp"

namespace caprl {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Every trainable array is one of these;
/// biases are stored as 1 x n.
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Tensor2(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != rows * cols) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    std::size_t size() const { return data.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    void fill(double value) { std::fill(data.begin(), data.end(), value); }

    bool same_shape(const Tensor2& other) const { return rows == other.rows && cols == other.cols; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

/// Glorot-style uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Tensor2& t, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
    for (double& v : t.data) v = rng.uniform(-s, s);
}

inline std::string shape_string(const Tensor2& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline void require_shape(const Tensor2& t, std::size_t rows, std::size_t cols, const char* what) {
    if (t.rows != rows || t.cols != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + shape_string(t));
    }
}

inline void require_length(std::size_t got, std::size_t expected, const char* what) {
    if (got != expected) {
        throw ShapeError(std::string(what) + ": expected length " + std::to_string(expected) + ", got " +
                         std::to_string(got));
    }
}

}  // namespace caprl
