#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lrppo/common.hpp"
#include "lrppo/tensor.hpp"

namespace lrppo::ad {

enum class Activation { relu, tanh };

struct Layer {
    Tensor2D weight;           // out x in
    std::vector<double> bias;  // out
};

// Gradients aligned with ScorerParams::layers.
struct LayerGrads {
    Tensor2D weight;
    std::vector<double> bias;
};
using ModelGrads = std::vector<LayerGrads>;

struct AdamMoments {
    Tensor2D m_weight, v_weight;
    std::vector<double> m_bias, v_bias;
};

// Flattened trainable parameters of one MLP plus its optimizer state.
// `version` is bumped on every mutation so a tape recorded against stale
// parameters can refuse to run backward.
struct ScorerParams {
    std::vector<Layer> layers;
    std::vector<AdamMoments> moments;
    std::uint64_t step = 0;
    std::uint64_t version = 0;

    // widths = {input, hidden..., output}; weights U(-s, s) with
    // s = init_scale / sqrt(fan_in), biases zero.
    static ScorerParams random_mlp(const std::vector<std::size_t>& widths, Rng& rng,
                                   double init_scale = 1.0);

    std::size_t input_width() const;
    std::size_t output_width() const;
    std::size_t parameter_count() const;

    // Flat parameter access in a fixed order (layer 0 weight row-major,
    // layer 0 bias, layer 1 weight, ...). Used by finite-difference tests
    // and by checkpoint comparison.
    double get_flat(std::size_t i) const;
    void set_flat(std::size_t i, double v);  // bumps version

    bool same_shape(const ScorerParams& o) const;
};

ModelGrads zero_grads_like(const ScorerParams& params);

// Plain inference pass, no tape. Safe to call concurrently on a shared
// const model.
std::vector<double> mlp_eval(const ScorerParams& params, std::span<const double> input,
                             Activation activation);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// AdamW step: bias-corrected moments, decoupled weight decay applied
// directly to the weights. Throws NumericError on non-finite gradients
// before touching any parameter.
void adam_step(ScorerParams& params, const ModelGrads& grads, const AdamConfig& cfg);

}  // namespace lrppo::ad
