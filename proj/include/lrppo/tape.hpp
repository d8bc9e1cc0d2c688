#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <tuple>
#include <vector>

#include "lrppo/mlp.hpp"
#include "lrppo/tensor.hpp"

namespace lrppo::ad {

using NodeId = std::int32_t;

enum class OpKind : std::uint8_t {
    constant,   // leaf, no gradient
    parameter,  // leaf bound to a ScorerParams slot
    affine,     // W x + b          (in: W, x, b)
    relu,
    tanh,
    softmax,    // 1-D, numerically stabilised
    log,
    add,        // elementwise, same shape
    sub,
    mul,        // elementwise (Hadamard)
    scale,      // x * c0
    add_const,  // x + c0
    max_const,  // max(x, c0); gradient follows the linear branch at the kink
    mean,       // all elements -> 1x1
    concat,     // stack two column vectors
    pick,       // select element c0 of a column vector -> 1x1
};

// Define-by-run reverse-mode tape. Values are computed eagerly at record
// time; one backward() sweep fills gradients for every parameter slot
// touched during the forward sweep.
class Tape {
public:
    NodeId constant(Tensor2D value);
    NodeId input(std::span<const double> v) { return constant(Tensor2D::column(v)); }
    NodeId scalar_const(double v) { return constant(Tensor2D::scalar(v)); }

    // Binds layer `layer` of `params` (part 0 = weight, 1 = bias). Repeated
    // binds of the same slot return the same node so gradients accumulate.
    NodeId parameter(const ScorerParams& params, std::size_t layer, int part);

    NodeId affine(NodeId w, NodeId x, NodeId b);
    NodeId relu(NodeId x);
    NodeId tanh(NodeId x);
    NodeId softmax(NodeId x);
    NodeId log(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId x, double c);
    NodeId add_const(NodeId x, double c);
    NodeId max_const(NodeId x, double c);
    NodeId mean(NodeId x);
    NodeId concat(NodeId a, NodeId b);
    NodeId pick(NodeId x, std::size_t index);

    const Tensor2D& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    double scalar_value(NodeId id) const;

    // Reverse sweep from a scalar root. Throws NumericError if any touched
    // parameter set was mutated since it was recorded.
    void backward(NodeId root);

    // Gradient of the last backward() root with respect to `params`;
    // zero-filled for slots the forward sweep never touched.
    ModelGrads grads_for(const ScorerParams& params) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        OpKind kind;
        std::array<NodeId, 3> in{-1, -1, -1};
        double c0 = 0.0;
        Tensor2D value;
        Tensor2D grad;
    };

    NodeId push(Node n);
    Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    void check_versions() const;

    std::vector<Node> nodes_;
    // (params, layer, part) -> node; plus the version seen at bind time.
    std::map<std::tuple<const ScorerParams*, std::size_t, int>, NodeId> param_nodes_;
    std::map<const ScorerParams*, std::uint64_t> bound_versions_;
    bool ran_backward_ = false;
};

// MLP forward recorded on an existing tape; returns the output node.
NodeId mlp_on_tape(Tape& tape, const ScorerParams& params, NodeId input, Activation activation);

// Convenience forward that owns its tape, matching the one-call contract:
// output vector plus the tape that replays the computation.
struct ForwardResult {
    std::vector<double> output;
    Tape tape;
    NodeId output_node;
};
ForwardResult mlp_forward(const ScorerParams& params, std::span<const double> input,
                          Activation activation);

}  // namespace lrppo::ad
