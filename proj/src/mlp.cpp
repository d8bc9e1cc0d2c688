#include "lrppo/mlp.hpp"

#include <cmath>
#include <string>

namespace lrppo::ad {

ScorerParams ScorerParams::random_mlp(const std::vector<std::size_t>& widths, Rng& rng,
                                      double init_scale) {
    if (widths.size() < 2) throw ConfigError("random_mlp: need at least input and output widths");
    ScorerParams p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t in = widths[l];
        const std::size_t out = widths[l + 1];
        if (in == 0 || out == 0) throw ConfigError("random_mlp: zero layer width");
        Layer layer;
        layer.weight = Tensor2D(out, in);
        const double s = init_scale / std::sqrt(static_cast<double>(in));
        for (double& w : layer.weight.data) w = rng.uniform(-s, s);
        layer.bias.assign(out, 0.0);
        p.layers.push_back(std::move(layer));

        AdamMoments mom;
        mom.m_weight = Tensor2D(out, in);
        mom.v_weight = Tensor2D(out, in);
        mom.m_bias.assign(out, 0.0);
        mom.v_bias.assign(out, 0.0);
        p.moments.push_back(std::move(mom));
    }
    return p;
}

std::size_t ScorerParams::input_width() const {
    if (layers.empty()) throw ShapeError("ScorerParams: no layers");
    return layers.front().weight.cols;
}

std::size_t ScorerParams::output_width() const {
    if (layers.empty()) throw ShapeError("ScorerParams: no layers");
    return layers.back().weight.rows;
}

std::size_t ScorerParams::parameter_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

double ScorerParams::get_flat(std::size_t i) const {
    for (const Layer& l : layers) {
        if (i < l.weight.size()) return l.weight.data[i];
        i -= l.weight.size();
        if (i < l.bias.size()) return l.bias[i];
        i -= l.bias.size();
    }
    throw ShapeError("get_flat: index out of range");
}

void ScorerParams::set_flat(std::size_t i, double v) {
    ++version;
    for (Layer& l : layers) {
        if (i < l.weight.size()) {
            l.weight.data[i] = v;
            return;
        }
        i -= l.weight.size();
        if (i < l.bias.size()) {
            l.bias[i] = v;
            return;
        }
        i -= l.bias.size();
    }
    throw ShapeError("set_flat: index out of range");
}

bool ScorerParams::same_shape(const ScorerParams& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (!layers[l].weight.same_shape(o.layers[l].weight)) return false;
        if (layers[l].bias.size() != o.layers[l].bias.size()) return false;
    }
    return true;
}

ModelGrads zero_grads_like(const ScorerParams& params) {
    ModelGrads grads;
    grads.reserve(params.layers.size());
    for (const Layer& l : params.layers) {
        LayerGrads g;
        g.weight = Tensor2D(l.weight.rows, l.weight.cols);
        g.bias.assign(l.bias.size(), 0.0);
        grads.push_back(std::move(g));
    }
    return grads;
}

std::vector<double> mlp_eval(const ScorerParams& params, std::span<const double> input,
                             Activation activation) {
    std::vector<double> x(input.begin(), input.end());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const Layer& layer = params.layers[l];
        if (x.size() != layer.weight.cols) {
            throw ShapeError("mlp layer " + std::to_string(l) + ": expects input width " +
                             std::to_string(layer.weight.cols) + ", got " + std::to_string(x.size()));
        }
        std::vector<double> y(layer.weight.rows);
        for (std::size_t r = 0; r < layer.weight.rows; ++r) {
            double acc = layer.bias[r];
            const double* wr = &layer.weight.data[r * layer.weight.cols];
            for (std::size_t c = 0; c < layer.weight.cols; ++c) acc += wr[c] * x[c];
            y[r] = acc;
        }
        if (l + 1 < params.layers.size()) {
            for (double& v : y) v = activation == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
        }
        x = std::move(y);
    }
    return x;
}

void adam_step(ScorerParams& params, const ModelGrads& grads, const AdamConfig& cfg) {
    if (grads.size() != params.layers.size()) {
        throw ShapeError("adam_step: gradient layer count mismatch");
    }
    for (std::size_t l = 0; l < grads.size(); ++l) {
        if (!grads[l].weight.same_shape(params.layers[l].weight) ||
            grads[l].bias.size() != params.layers[l].bias.size()) {
            throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(l));
        }
        if (!grads[l].weight.all_finite()) {
            throw NumericError("adam_step: non-finite weight gradient at layer " + std::to_string(l));
        }
        for (double g : grads[l].bias) {
            if (!std::isfinite(g)) {
                throw NumericError("adam_step: non-finite bias gradient at layer " +
                                   std::to_string(l));
            }
        }
    }

    params.step += 1;
    params.version += 1;
    const double t = static_cast<double>(params.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);

    auto update_one = [&](double& w, double& m, double& v, double g) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        w -= cfg.lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * w);
    };

    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Layer& layer = params.layers[l];
        AdamMoments& mom = params.moments[l];
        for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
            update_one(layer.weight.data[i], mom.m_weight.data[i], mom.v_weight.data[i],
                       grads[l].weight.data[i]);
        }
        for (std::size_t i = 0; i < layer.bias.size(); ++i) {
            update_one(layer.bias[i], mom.m_bias[i], mom.v_bias[i], grads[l].bias[i]);
        }
    }
}

}  // namespace lrppo::ad
