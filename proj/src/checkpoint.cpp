#include "lrppo/checkpoint.hpp"

namespace lrppo::ad {

using nlohmann::json;

json params_to_json(const ScorerParams& params) {
    json layers = json::array();
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const Layer& layer = params.layers[l];
        const AdamMoments& mom = params.moments[l];
        layers.push_back({
            {"out", layer.weight.rows},
            {"in", layer.weight.cols},
            {"weight", layer.weight.data},
            {"bias", layer.bias},
            {"m_weight", mom.m_weight.data},
            {"v_weight", mom.v_weight.data},
            {"m_bias", mom.m_bias},
            {"v_bias", mom.v_bias},
        });
    }
    return json{{"container", "scorer-params"}, {"version", 1}, {"step", params.step},
                {"layers", layers}};
}

ScorerParams params_from_json(const json& j) {
    if (!j.is_object() || j.value("container", "") != "scorer-params") {
        throw DataError("params_from_json: not a scorer-params container");
    }
    if (j.value("version", 0) != 1) {
        throw DataError("params_from_json: unsupported container version");
    }
    ScorerParams p;
    p.step = j.at("step").get<std::uint64_t>();
    for (const json& jl : j.at("layers")) {
        const auto out = jl.at("out").get<std::size_t>();
        const auto in = jl.at("in").get<std::size_t>();
        Layer layer;
        layer.weight = Tensor2D(out, in);
        layer.weight.data = jl.at("weight").get<std::vector<double>>();
        layer.bias = jl.at("bias").get<std::vector<double>>();
        if (layer.weight.data.size() != out * in || layer.bias.size() != out) {
            throw DataError("params_from_json: layer payload size mismatch");
        }
        AdamMoments mom;
        mom.m_weight = Tensor2D(out, in);
        mom.m_weight.data = jl.at("m_weight").get<std::vector<double>>();
        mom.v_weight = Tensor2D(out, in);
        mom.v_weight.data = jl.at("v_weight").get<std::vector<double>>();
        mom.m_bias = jl.at("m_bias").get<std::vector<double>>();
        mom.v_bias = jl.at("v_bias").get<std::vector<double>>();
        if (mom.m_weight.data.size() != out * in || mom.v_weight.data.size() != out * in ||
            mom.m_bias.size() != out || mom.v_bias.size() != out) {
            throw DataError("params_from_json: moment payload size mismatch");
        }
        p.layers.push_back(std::move(layer));
        p.moments.push_back(std::move(mom));
    }
    if (p.layers.empty()) throw DataError("params_from_json: no layers");
    return p;
}

}  // namespace lrppo::ad
