#include <cmath>

#include "doctest.h"
#include "lrppo/checkpoint.hpp"
#include "lrppo/mlp.hpp"
#include "lrppo/tape.hpp"
#include "support/finite_diff.hpp"
#include "support/oracles.hpp"

using namespace lrppo;
using namespace lrppo::ad;

namespace {

ScorerParams identity_1layer() {
    Rng rng(0);
    ScorerParams p = ScorerParams::random_mlp({1, 1}, rng);
    p.layers[0].weight.data[0] = 1.0;
    p.layers[0].bias[0] = 0.0;
    return p;
}

}  // namespace

TEST_CASE("mlp_forward: identity net reproduces its input") {
    ScorerParams p = identity_1layer();
    const auto res = mlp_forward(p, std::vector<double>{0.5}, Activation::tanh);
    CHECK(res.output.size() == 1);
    CHECK(res.output[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("mlp_forward: zero-weight net returns the bias vector") {
    Rng rng(1);
    ScorerParams p = ScorerParams::random_mlp({3, 2}, rng);
    for (double& w : p.layers[0].weight.data) w = 0.0;
    p.layers[0].bias = {1.25, -0.5};
    const auto res = mlp_forward(p, std::vector<double>{4.0, -1.0, 2.0}, Activation::relu);
    CHECK(res.output[0] == 1.25);
    CHECK(res.output[1] == -0.5);
}

TEST_CASE("mlp_forward: seed-42 two-layer net matches the straight-line oracle") {
    Rng rng(42);
    ScorerParams p = ScorerParams::random_mlp({2, 8, 1}, rng);
    const std::vector<double> input{1.0, 0.0};
    const auto res = mlp_forward(p, input, Activation::tanh);
    const double expected = testsupport::straight_line_two_layer(p, input);
    CHECK(res.output[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("mlp_forward: shape mismatch names the layer") {
    Rng rng(2);
    ScorerParams p = ScorerParams::random_mlp({4, 3, 1}, rng);
    CHECK_THROWS_WITH_AS(mlp_forward(p, std::vector<double>{1.0, 2.0}, Activation::tanh),
                         doctest::Contains("layer 0"), ShapeError);
}

TEST_CASE("backward: linear function w*x has gradient x") {
    Rng rng(3);
    ScorerParams p = ScorerParams::random_mlp({1, 1}, rng);
    p.layers[0].weight.data[0] = 0.7;
    p.layers[0].bias[0] = 0.0;
    Tape tape;
    const NodeId out = mlp_on_tape(tape, p, tape.input(std::vector<double>{2.0}), Activation::tanh);
    tape.backward(out);
    const ModelGrads grads = tape.grads_for(p);
    CHECK(grads[0].weight.data[0] == doctest::Approx(2.0));
    CHECK(grads[0].bias[0] == doctest::Approx(1.0));
}

TEST_CASE("backward: relu blocks gradient at negative pre-activation") {
    Rng rng(4);
    ScorerParams p = ScorerParams::random_mlp({1, 1, 1}, rng);
    p.layers[0].weight.data[0] = 1.0;
    p.layers[0].bias[0] = 0.0;
    p.layers[1].weight.data[0] = 1.0;
    p.layers[1].bias[0] = 0.0;
    Tape tape;
    const NodeId out = mlp_on_tape(tape, p, tape.input(std::vector<double>{-3.0}), Activation::relu);
    tape.backward(out);
    const ModelGrads grads = tape.grads_for(p);
    CHECK(grads[0].weight.data[0] == 0.0);
    CHECK(grads[0].bias[0] == 0.0);
    // The second layer still sees the (zero) activation.
    CHECK(grads[1].bias[0] == 1.0);
}

TEST_CASE("backward: analytic gradient matches central differences on a random 2-layer net") {
    Rng rng(42);
    ScorerParams p = ScorerParams::random_mlp({3, 6, 1}, rng);
    const std::vector<double> input{0.3, -0.8, 1.1};

    Tape tape;
    const NodeId out = mlp_on_tape(tape, p, tape.input(input), Activation::tanh);
    tape.backward(out);
    const ModelGrads analytic = tape.grads_for(p);

    const auto report = testsupport::check_gradients(
        p, analytic, [&] { return mlp_eval(p, input, Activation::tanh)[0]; });
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("backward: tape reuse after parameter mutation is rejected") {
    Rng rng(5);
    ScorerParams p = ScorerParams::random_mlp({2, 1}, rng);
    Tape tape;
    const NodeId out = mlp_on_tape(tape, p, tape.input(std::vector<double>{1.0, 2.0}),
                                   Activation::tanh);
    adam_step(p, zero_grads_like(p), AdamConfig{});  // bumps the version
    CHECK_THROWS_AS(tape.backward(out), NumericError);
}

TEST_CASE("backward: untouched parameter slots get zero gradients") {
    Rng rng(6);
    ScorerParams used = ScorerParams::random_mlp({2, 1}, rng);
    ScorerParams untouched = ScorerParams::random_mlp({2, 1}, rng);
    Tape tape;
    const NodeId out =
        mlp_on_tape(tape, used, tape.input(std::vector<double>{1.0, -1.0}), Activation::tanh);
    tape.backward(out);
    const ModelGrads grads = tape.grads_for(untouched);
    CHECK(grads[0].weight.data[0] == 0.0);
    CHECK(grads[0].weight.data[1] == 0.0);
    CHECK(grads[0].bias[0] == 0.0);
}

TEST_CASE("backward: sum of tapes equals sum of backwards (linearity)") {
    Rng rng(7);
    ScorerParams p = ScorerParams::random_mlp({2, 4, 1}, rng);
    const std::vector<double> a{0.2, 0.4};
    const std::vector<double> b{-0.6, 1.0};

    Tape joint;
    const NodeId sum = joint.add(mlp_on_tape(joint, p, joint.input(a), Activation::tanh),
                                 mlp_on_tape(joint, p, joint.input(b), Activation::tanh));
    joint.backward(sum);
    const ModelGrads joint_grads = joint.grads_for(p);

    Tape ta, tb;
    const NodeId oa = mlp_on_tape(ta, p, ta.input(a), Activation::tanh);
    ta.backward(oa);
    const NodeId ob = mlp_on_tape(tb, p, tb.input(b), Activation::tanh);
    tb.backward(ob);
    const ModelGrads ga = ta.grads_for(p);
    const ModelGrads gb = tb.grads_for(p);

    for (std::size_t l = 0; l < joint_grads.size(); ++l) {
        for (std::size_t i = 0; i < joint_grads[l].weight.data.size(); ++i) {
            CHECK(joint_grads[l].weight.data[i] ==
                  doctest::Approx(ga[l].weight.data[i] + gb[l].weight.data[i]).epsilon(1e-12));
        }
        for (std::size_t i = 0; i < joint_grads[l].bias.size(); ++i) {
            CHECK(joint_grads[l].bias[i] ==
                  doctest::Approx(ga[l].bias[i] + gb[l].bias[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("determinism: identical seed and inputs give bitwise-identical outputs and gradients") {
    auto run = [] {
        Rng rng(99);
        ScorerParams p = ScorerParams::random_mlp({4, 8, 1}, rng);
        Tape tape;
        const NodeId out = mlp_on_tape(
            tape, p, tape.input(std::vector<double>{0.1, 0.2, 0.3, 0.4}), Activation::tanh);
        tape.backward(out);
        auto grads = tape.grads_for(p);
        return std::make_pair(tape.scalar_value(out), grads[0].weight.data);
    };
    const auto [v1, g1] = run();
    const auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("forward/backward keep values finite on finite inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        ScorerParams p = ScorerParams::random_mlp({5, 9, 3}, rng);
        std::vector<double> input(5);
        for (double& v : input) v = rng.uniform(-5.0, 5.0);
        Tape tape;
        const NodeId out = mlp_on_tape(tape, p, tape.input(input), Activation::tanh);
        const NodeId loss = tape.mean(tape.mul(out, out));
        CHECK(tape.value(out).all_finite());
        tape.backward(loss);
        const ModelGrads grads = tape.grads_for(p);
        for (const LayerGrads& g : grads) {
            CHECK(g.weight.all_finite());
            for (double b : g.bias) CHECK(std::isfinite(b));
        }
    }
}

TEST_CASE("adam_step: zero gradient and zero decay leave parameters unchanged") {
    Rng rng(8);
    ScorerParams p = ScorerParams::random_mlp({2, 2}, rng);
    const auto before = p.layers[0].weight.data;
    adam_step(p, zero_grads_like(p), AdamConfig{0.1});
    CHECK(p.layers[0].weight.data == before);
    CHECK(p.step == 1);
}

TEST_CASE("adam_step: hand-evaluated first step on a scalar") {
    // m-hat = v-hat = 1 after bias correction, so the update is lr/(1+eps).
    Rng rng(9);
    ScorerParams p = ScorerParams::random_mlp({1, 1}, rng);
    p.layers[0].weight.data[0] = 1.0;
    ModelGrads g = zero_grads_like(p);
    g[0].weight.data[0] = 1.0;
    adam_step(p, g, AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
    CHECK(p.layers[0].weight.data[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adam_step: decoupled weight decay with zero gradient") {
    Rng rng(10);
    ScorerParams p = ScorerParams::random_mlp({1, 1}, rng);
    p.layers[0].weight.data[0] = 1.0;
    adam_step(p, zero_grads_like(p), AdamConfig{0.1, 0.9, 0.999, 1e-8, 0.01});
    CHECK(p.layers[0].weight.data[0] == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("adam_step: non-finite gradient leaves parameters untouched") {
    Rng rng(12);
    ScorerParams p = ScorerParams::random_mlp({2, 1}, rng);
    const auto before = p.layers[0].weight.data;
    ModelGrads g = zero_grads_like(p);
    g[0].weight.data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(p, g, AdamConfig{}), NumericError);
    CHECK(p.layers[0].weight.data == before);
    CHECK(p.step == 0);
}

TEST_CASE("adam_step: step counter increases by one per step") {
    Rng rng(13);
    ScorerParams p = ScorerParams::random_mlp({2, 1}, rng);
    for (std::uint64_t i = 1; i <= 5; ++i) {
        adam_step(p, zero_grads_like(p), AdamConfig{});
        CHECK(p.step == i);
    }
}

TEST_CASE("checkpoint: parameter container round-trips losslessly") {
    Rng rng(14);
    ScorerParams p = ScorerParams::random_mlp({3, 5, 2}, rng);
    ModelGrads g = zero_grads_like(p);
    for (auto& layer : g) {
        for (double& w : layer.weight.data) w = 0.123;
        for (double& b : layer.bias) b = -0.7;
    }
    adam_step(p, g, AdamConfig{1e-3});
    const auto j = params_to_json(p);
    const ScorerParams q = params_from_json(j);
    CHECK(q.step == p.step);
    REQUIRE(q.layers.size() == p.layers.size());
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        CHECK(q.layers[l].weight.data == p.layers[l].weight.data);
        CHECK(q.layers[l].bias == p.layers[l].bias);
        CHECK(q.moments[l].m_weight.data == p.moments[l].m_weight.data);
        CHECK(q.moments[l].v_weight.data == p.moments[l].v_weight.data);
    }
}

TEST_CASE("checkpoint: wrong container is rejected") {
    CHECK_THROWS_AS(params_from_json(nlohmann::json{{"container", "something-else"}}), DataError);
}
