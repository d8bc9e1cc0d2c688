#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lrppo/common.hpp"

namespace lrppo::ad {

// Dense row-major matrix of doubles. Column vectors are rows x 1.
struct Tensor2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2D() = default;
    Tensor2D(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Tensor2D column(std::span<const double> v) {
        Tensor2D t(v.size(), 1);
        for (std::size_t i = 0; i < v.size(); ++i) t.data[i] = v[i];
        return t;
    }

    static Tensor2D scalar(double v) {
        Tensor2D t(1, 1);
        t.data[0] = v;
        return t;
    }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return rows * cols; }
    bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

}  // namespace lrppo::ad
