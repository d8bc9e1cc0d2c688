#include "lrppo/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lrppo::ad {

namespace {

void require_same_shape(const Tensor2D& a, const Tensor2D& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols) + ")");
    }
}

void require_column(const Tensor2D& t, const char* op) {
    if (t.cols != 1) {
        throw ShapeError(std::string(op) + ": expected a column vector, got " +
                         std::to_string(t.rows) + "x" + std::to_string(t.cols));
    }
}

}  // namespace

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::constant(Tensor2D value) {
    Node n;
    n.kind = OpKind::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Tape::parameter(const ScorerParams& params, std::size_t layer, int part) {
    if (layer >= params.layers.size()) {
        throw ShapeError("parameter: layer " + std::to_string(layer) + " out of range");
    }
    const auto key = std::make_tuple(&params, layer, part);
    if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return it->second;
    Node n;
    n.kind = OpKind::parameter;
    if (part == 0) {
        n.value = params.layers[layer].weight;
    } else {
        n.value = Tensor2D::column(params.layers[layer].bias);
    }
    const NodeId id = push(std::move(n));
    param_nodes_.emplace(key, id);
    bound_versions_.emplace(&params, params.version);
    return id;
}

NodeId Tape::affine(NodeId w, NodeId x, NodeId b) {
    const Tensor2D& W = value(w);
    const Tensor2D& X = value(x);
    const Tensor2D& B = value(b);
    require_column(X, "affine");
    require_column(B, "affine");
    if (W.cols != X.rows || W.rows != B.rows) {
        throw ShapeError("affine: weight " + std::to_string(W.rows) + "x" + std::to_string(W.cols) +
                         " incompatible with input " + std::to_string(X.rows) + " / bias " +
                         std::to_string(B.rows));
    }
    Node n;
    n.kind = OpKind::affine;
    n.in = {w, x, b};
    n.value = Tensor2D(W.rows, 1);
    for (std::size_t r = 0; r < W.rows; ++r) {
        double acc = B.data[r];
        const double* wr = &W.data[r * W.cols];
        for (std::size_t c = 0; c < W.cols; ++c) acc += wr[c] * X.data[c];
        n.value.data[r] = acc;
    }
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.kind = OpKind::relu;
    n.in[0] = x;
    n.value = value(x);
    for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
    Node n;
    n.kind = OpKind::tanh;
    n.in[0] = x;
    n.value = value(x);
    for (double& v : n.value.data) v = std::tanh(v);
    return push(std::move(n));
}

NodeId Tape::softmax(NodeId x) {
    const Tensor2D& X = value(x);
    require_column(X, "softmax");
    Node n;
    n.kind = OpKind::softmax;
    n.in[0] = x;
    n.value = X;
    const double mx = *std::max_element(X.data.begin(), X.data.end());
    double sum = 0.0;
    for (double& v : n.value.data) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : n.value.data) v /= sum;
    return push(std::move(n));
}

NodeId Tape::log(NodeId x) {
    Node n;
    n.kind = OpKind::log;
    n.in[0] = x;
    n.value = value(x);
    for (double& v : n.value.data) v = std::log(v);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    require_same_shape(value(a), value(b), "add");
    Node n;
    n.kind = OpKind::add;
    n.in = {a, b, -1};
    n.value = value(a);
    const Tensor2D& B = value(b);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += B.data[i];
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    require_same_shape(value(a), value(b), "sub");
    Node n;
    n.kind = OpKind::sub;
    n.in = {a, b, -1};
    n.value = value(a);
    const Tensor2D& B = value(b);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] -= B.data[i];
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    require_same_shape(value(a), value(b), "mul");
    Node n;
    n.kind = OpKind::mul;
    n.in = {a, b, -1};
    n.value = value(a);
    const Tensor2D& B = value(b);
    for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= B.data[i];
    return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double c) {
    Node n;
    n.kind = OpKind::scale;
    n.in[0] = x;
    n.c0 = c;
    n.value = value(x);
    for (double& v : n.value.data) v *= c;
    return push(std::move(n));
}

NodeId Tape::add_const(NodeId x, double c) {
    Node n;
    n.kind = OpKind::add_const;
    n.in[0] = x;
    n.c0 = c;
    n.value = value(x);
    for (double& v : n.value.data) v += c;
    return push(std::move(n));
}

NodeId Tape::max_const(NodeId x, double c) {
    Node n;
    n.kind = OpKind::max_const;
    n.in[0] = x;
    n.c0 = c;
    n.value = value(x);
    for (double& v : n.value.data) v = v > c ? v : c;
    return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
    const Tensor2D& X = value(x);
    if (X.size() == 0) throw ShapeError("mean: empty tensor");
    Node n;
    n.kind = OpKind::mean;
    n.in[0] = x;
    double acc = 0.0;
    for (double v : X.data) acc += v;
    n.value = Tensor2D::scalar(acc / static_cast<double>(X.size()));
    return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const Tensor2D& A = value(a);
    const Tensor2D& B = value(b);
    require_column(A, "concat");
    require_column(B, "concat");
    Node n;
    n.kind = OpKind::concat;
    n.in = {a, b, -1};
    n.value = Tensor2D(A.rows + B.rows, 1);
    std::copy(A.data.begin(), A.data.end(), n.value.data.begin());
    std::copy(B.data.begin(), B.data.end(), n.value.data.begin() + static_cast<std::ptrdiff_t>(A.rows));
    return push(std::move(n));
}

NodeId Tape::pick(NodeId x, std::size_t index) {
    const Tensor2D& X = value(x);
    require_column(X, "pick");
    if (index >= X.rows) throw ShapeError("pick: index out of range");
    Node n;
    n.kind = OpKind::pick;
    n.in[0] = x;
    n.c0 = static_cast<double>(index);
    n.value = Tensor2D::scalar(X.data[index]);
    return push(std::move(n));
}

double Tape::scalar_value(NodeId id) const {
    const Tensor2D& v = value(id);
    if (v.size() != 1) throw ShapeError("scalar_value: node is not scalar");
    return v.data[0];
}

void Tape::check_versions() const {
    for (const auto& [params, version] : bound_versions_) {
        if (params->version != version) {
            throw NumericError(
                "tape reuse after parameter mutation: parameters changed since the forward pass");
        }
    }
}

void Tape::backward(NodeId root) {
    check_versions();
    if (value(root).size() != 1) throw ShapeError("backward: root must be scalar");

    for (Node& n : nodes_) {
        n.grad = Tensor2D(n.value.rows, n.value.cols);
    }
    node(root).grad.data[0] = 1.0;

    // Creation order is topological, so one reverse pass suffices.
    for (std::int32_t id = static_cast<std::int32_t>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = node(id);
        bool any = false;
        for (double g : n.grad.data) {
            if (g != 0.0) {
                any = true;
                break;
            }
        }
        if (!any) continue;
        switch (n.kind) {
            case OpKind::constant:
            case OpKind::parameter:
                break;
            case OpKind::affine: {
                Node& W = node(n.in[0]);
                Node& X = node(n.in[1]);
                Node& B = node(n.in[2]);
                const std::size_t out = W.value.rows;
                const std::size_t in = W.value.cols;
                for (std::size_t r = 0; r < out; ++r) {
                    const double g = n.grad.data[r];
                    if (g == 0.0) continue;
                    B.grad.data[r] += g;
                    double* wgr = &W.grad.data[r * in];
                    const double* wr = &W.value.data[r * in];
                    for (std::size_t c = 0; c < in; ++c) {
                        wgr[c] += g * X.value.data[c];
                        X.grad.data[c] += g * wr[c];
                    }
                }
                break;
            }
            case OpKind::relu: {
                Node& X = node(n.in[0]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    if (X.value.data[i] > 0.0) X.grad.data[i] += n.grad.data[i];
                }
                break;
            }
            case OpKind::tanh: {
                Node& X = node(n.in[0]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    const double y = n.value.data[i];
                    X.grad.data[i] += n.grad.data[i] * (1.0 - y * y);
                }
                break;
            }
            case OpKind::softmax: {
                Node& X = node(n.in[0]);
                double dot = 0.0;
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    dot += n.grad.data[i] * n.value.data[i];
                }
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    X.grad.data[i] += n.value.data[i] * (n.grad.data[i] - dot);
                }
                break;
            }
            case OpKind::log: {
                Node& X = node(n.in[0]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    X.grad.data[i] += n.grad.data[i] / X.value.data[i];
                }
                break;
            }
            case OpKind::add: {
                Node& A = node(n.in[0]);
                Node& B = node(n.in[1]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    A.grad.data[i] += n.grad.data[i];
                    B.grad.data[i] += n.grad.data[i];
                }
                break;
            }
            case OpKind::sub: {
                Node& A = node(n.in[0]);
                Node& B = node(n.in[1]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    A.grad.data[i] += n.grad.data[i];
                    B.grad.data[i] -= n.grad.data[i];
                }
                break;
            }
            case OpKind::mul: {
                Node& A = node(n.in[0]);
                Node& B = node(n.in[1]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    A.grad.data[i] += n.grad.data[i] * B.value.data[i];
                    B.grad.data[i] += n.grad.data[i] * A.value.data[i];
                }
                break;
            }
            case OpKind::scale: {
                Node& X = node(n.in[0]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    X.grad.data[i] += n.grad.data[i] * n.c0;
                }
                break;
            }
            case OpKind::add_const: {
                Node& X = node(n.in[0]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    X.grad.data[i] += n.grad.data[i];
                }
                break;
            }
            case OpKind::max_const: {
                // Subgradient at x == c0 follows the linear branch.
                Node& X = node(n.in[0]);
                for (std::size_t i = 0; i < n.grad.data.size(); ++i) {
                    if (X.value.data[i] >= n.c0) X.grad.data[i] += n.grad.data[i];
                }
                break;
            }
            case OpKind::mean: {
                Node& X = node(n.in[0]);
                const double g = n.grad.data[0] / static_cast<double>(X.value.size());
                for (double& xg : X.grad.data) xg += g;
                break;
            }
            case OpKind::concat: {
                Node& A = node(n.in[0]);
                Node& B = node(n.in[1]);
                for (std::size_t i = 0; i < A.grad.data.size(); ++i) A.grad.data[i] += n.grad.data[i];
                for (std::size_t i = 0; i < B.grad.data.size(); ++i) {
                    B.grad.data[i] += n.grad.data[A.grad.data.size() + i];
                }
                break;
            }
            case OpKind::pick: {
                Node& X = node(n.in[0]);
                X.grad.data[static_cast<std::size_t>(n.c0)] += n.grad.data[0];
                break;
            }
        }
    }
    ran_backward_ = true;
}

ModelGrads Tape::grads_for(const ScorerParams& params) const {
    ModelGrads grads = zero_grads_like(params);
    if (!ran_backward_) return grads;
    for (std::size_t layer = 0; layer < params.layers.size(); ++layer) {
        for (int part = 0; part < 2; ++part) {
            auto it = param_nodes_.find(std::make_tuple(&params, layer, part));
            if (it == param_nodes_.end()) continue;
            const Node& n = node(it->second);
            if (part == 0) {
                grads[layer].weight = n.grad;
            } else {
                grads[layer].bias = n.grad.data;
            }
        }
    }
    return grads;
}

NodeId mlp_on_tape(Tape& tape, const ScorerParams& params, NodeId input, Activation activation) {
    NodeId x = input;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const Layer& layer = params.layers[l];
        if (tape.value(x).rows != layer.weight.cols) {
            throw ShapeError("mlp layer " + std::to_string(l) + ": expects input width " +
                             std::to_string(layer.weight.cols) + ", got " +
                             std::to_string(tape.value(x).rows));
        }
        const NodeId w = tape.parameter(params, l, 0);
        const NodeId b = tape.parameter(params, l, 1);
        x = tape.affine(w, x, b);
        if (l + 1 < params.layers.size()) {
            x = activation == Activation::relu ? tape.relu(x) : tape.tanh(x);
        }
    }
    return x;
}

ForwardResult mlp_forward(const ScorerParams& params, std::span<const double> input,
                          Activation activation) {
    ForwardResult res;
    const NodeId in = res.tape.input(input);
    res.output_node = mlp_on_tape(res.tape, params, in, activation);
    res.output = res.tape.value(res.output_node).data;
    return res;
}

}  // namespace lrppo::ad
