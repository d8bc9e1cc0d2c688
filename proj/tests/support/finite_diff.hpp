#pragma once

// Central finite-difference gradient checks against the tape. The loss is
// any callable over the current parameter values; parameters are perturbed
// through the flat view so the check covers every component.

#include <cmath>
#include <functional>
#include <vector>

#include "lrppo/mlp.hpp"

namespace testsupport {

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

// rel err = |a - b| / max(|a|, |b|, guard); the guard keeps noise on
// near-zero components from registering as disagreement.
inline double rel_err(double a, double b, double guard = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), guard});
}

template <class LossFn>
FdReport check_gradients(lrppo::ad::ScorerParams& params, const lrppo::ad::ModelGrads& analytic,
                         LossFn&& loss, double h = 1e-5) {
    FdReport report;
    std::size_t flat = 0;
    for (std::size_t layer = 0; layer < params.layers.size(); ++layer) {
        const std::size_t wn = params.layers[layer].weight.size();
        const std::size_t bn = params.layers[layer].bias.size();
        for (std::size_t i = 0; i < wn + bn; ++i, ++flat) {
            const double saved = params.get_flat(flat);
            params.set_flat(flat, saved + h);
            const double up = loss();
            params.set_flat(flat, saved - h);
            const double down = loss();
            params.set_flat(flat, saved);
            const double numeric = (up - down) / (2.0 * h);
            const double a = i < wn ? analytic[layer].weight.data[i] : analytic[layer].bias[i - wn];
            const double err = rel_err(a, numeric);
            if (err > report.max_rel_err) {
                report.max_rel_err = err;
                report.worst_index = flat;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace testsupport
