#pragma once

// Independent oracles kept deliberately separate from the library code
// paths they check: a straight-line two-layer forward pass, a naive NDCG
// transcription, and a closed-form ridge fit for the domain-gap check.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "lrppo/mlp.hpp"

namespace testsupport {

// Unrolled tanh MLP with exactly one hidden layer, written with explicit
// index arithmetic and no shared helpers.
inline double straight_line_two_layer(const lrppo::ad::ScorerParams& params,
                                      std::span<const double> input) {
    const auto& w0 = params.layers.at(0).weight;
    const auto& b0 = params.layers.at(0).bias;
    const auto& w1 = params.layers.at(1).weight;
    const auto& b1 = params.layers.at(1).bias;
    std::vector<double> hidden(w0.rows);
    for (std::size_t r = 0; r < w0.rows; ++r) {
        double acc = b0[r];
        for (std::size_t c = 0; c < w0.cols; ++c) acc += w0.data[r * w0.cols + c] * input[c];
        hidden[r] = std::tanh(acc);
    }
    double out = b1[0];
    for (std::size_t c = 0; c < w1.cols; ++c) out += w1.data[c] * hidden[c];
    return out;
}

// Direct transcription of the DCG/IDCG/NDCG formulas with a selection sort
// for the ideal ordering and the same all-zero convention as the library.
inline double naive_dcg(const std::vector<int>& grades_in_order, std::size_t k) {
    double dcg = 0.0;
    for (std::size_t i = 0; i < grades_in_order.size() && i < k; ++i) {
        dcg += (std::pow(2.0, grades_in_order[i]) - 1.0) / (std::log(static_cast<double>(i) + 2.0) /
                                                            std::log(2.0));
    }
    return dcg;
}

inline double naive_ndcg(const std::vector<int>& grades, const std::vector<std::size_t>& order,
                         std::size_t k) {
    std::vector<int> ranked;
    ranked.reserve(order.size());
    for (std::size_t idx : order) ranked.push_back(grades[idx]);

    std::vector<int> ideal = grades;
    for (std::size_t i = 0; i < ideal.size(); ++i) {  // selection sort, descending
        std::size_t best = i;
        for (std::size_t j = i + 1; j < ideal.size(); ++j) {
            if (ideal[j] > ideal[best]) best = j;
        }
        std::swap(ideal[i], ideal[best]);
    }
    const double idcg = naive_dcg(ideal, k);
    if (idcg == 0.0) return 1.0;
    return naive_dcg(ranked, k) / idcg;
}

// Closed-form ridge regression via Gauss-Jordan on the normal equations.
// Returns weights for [features, 1] -> grade.
inline std::vector<double> ridge_fit(const std::vector<std::vector<double>>& xs,
                                     const std::vector<double>& ys, double lambda = 1e-3) {
    const std::size_t d = xs.front().size() + 1;  // bias column
    std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
    for (std::size_t s = 0; s < xs.size(); ++s) {
        std::vector<double> row(xs[s]);
        row.push_back(1.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) a[i][j] += row[i] * row[j];
            a[i][d] += row[i] * ys[s];
        }
    }
    for (std::size_t i = 0; i < d; ++i) a[i][i] += lambda;

    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        }
        std::swap(a[col], a[pivot]);
        const double p = a[col][col];
        for (std::size_t j = col; j <= d; ++j) a[col][j] /= p;
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (std::size_t j = col; j <= d; ++j) a[r][j] -= f * a[col][j];
        }
    }
    std::vector<double> w(d);
    for (std::size_t i = 0; i < d; ++i) w[i] = a[i][d];
    return w;
}

inline double ridge_predict(const std::vector<double>& w, std::span<const double> x) {
    double acc = w.back();
    for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
    return acc;
}

}  // namespace testsupport
