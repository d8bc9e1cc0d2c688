#include "lrppo/models.hpp"

#include <cmath>

#include "lrppo/checkpoint.hpp"

namespace lrppo::models {

using nlohmann::json;

std::vector<double> encode_pair(std::span<const double> first, std::span<const double> second) {
    std::vector<double> enc;
    enc.reserve(first.size() + second.size());
    enc.insert(enc.end(), first.begin(), first.end());
    enc.insert(enc.end(), second.begin(), second.end());
    return enc;
}

ActorModel ActorModel::init(const ModelConfig& config, Rng& rng) {
    ActorModel m;
    m.activation = config.activation;
    m.params = ScorerParams::random_mlp({config.feature_dim, config.actor_hidden, 1}, rng);
    return m;
}

double ActorModel::score(std::span<const double> features) const {
    return ad::mlp_eval(params, features, activation)[0];
}

RewardModel RewardModel::init(const ModelConfig& config, Rng& rng) {
    RewardModel m;
    m.activation = config.activation;
    m.trunk = ScorerParams::random_mlp(
        {2 * config.feature_dim, config.trunk_hidden, config.trunk_dim}, rng);
    m.head = ScorerParams::random_mlp({2 * config.trunk_dim, config.head_hidden, 1}, rng);
    return m;
}

CriticModel CriticModel::init(const ModelConfig& config, Rng& rng) {
    CriticModel m;
    m.activation = config.activation;
    m.trunk = ScorerParams::random_mlp(
        {2 * config.feature_dim, config.trunk_hidden, config.trunk_dim}, rng);
    m.head = ScorerParams::random_mlp({config.trunk_dim, 1}, rng, 0.01);
    return m;
}

std::pair<double, double> actor_scores(const ActorModel& actor, const PairState& state) {
    return {actor.score(state.first), actor.score(state.second)};
}

PolicyDist policy_distribution(double p1, double p2, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("policy_distribution: temperature must be > 0");
    const double a = p1 / temperature;
    const double b = p2 / temperature;
    const double mx = a > b ? a : b;
    const double ea = std::exp(a - mx);
    const double eb = std::exp(b - mx);
    return {ea / (ea + eb), eb / (ea + eb)};
}

double reward_forward(const RewardModel& model, const PairState& initial,
                      const PairState& candidate) {
    const auto trunk_initial =
        ad::mlp_eval(model.trunk, encode_pair(initial.first, initial.second), model.activation);
    const auto trunk_candidate =
        ad::mlp_eval(model.trunk, encode_pair(candidate.first, candidate.second), model.activation);
    return ad::mlp_eval(model.head, encode_pair(trunk_initial, trunk_candidate),
                        model.activation)[0];
}

double critic_value(const CriticModel& critic, const PairState& state) {
    const auto trunk =
        ad::mlp_eval(critic.trunk, encode_pair(state.first, state.second), critic.activation);
    return ad::mlp_eval(critic.head, trunk, critic.activation)[0];
}

CriticModel init_critic_from_reward(const RewardModel& reward, std::uint64_t seed) {
    CriticModel critic;
    critic.activation = reward.activation;
    critic.trunk = reward.trunk;  // deep copy; mutating one leaves the other intact
    critic.trunk.step = 0;
    critic.trunk.version = 0;
    for (ad::AdamMoments& mom : critic.trunk.moments) {
        std::fill(mom.m_weight.data.begin(), mom.m_weight.data.end(), 0.0);
        std::fill(mom.v_weight.data.begin(), mom.v_weight.data.end(), 0.0);
        std::fill(mom.m_bias.begin(), mom.m_bias.end(), 0.0);
        std::fill(mom.v_bias.begin(), mom.v_bias.end(), 0.0);
    }
    Rng rng(mix_seed(seed, 0xc417));
    critic.head = ScorerParams::random_mlp({reward.trunk.output_width(), 1}, rng, 0.01);
    return critic;
}

ad::NodeId actor_score_node(ad::Tape& tape, const ActorModel& actor,
                            std::span<const double> features) {
    const ad::NodeId in = tape.input(features);
    return ad::mlp_on_tape(tape, actor.params, in, actor.activation);
}

ad::NodeId reward_node(ad::Tape& tape, const RewardModel& model, const PairState& initial,
                       const PairState& candidate) {
    const ad::NodeId enc_initial = tape.input(encode_pair(initial.first, initial.second));
    const ad::NodeId enc_candidate = tape.input(encode_pair(candidate.first, candidate.second));
    const ad::NodeId trunk_initial = ad::mlp_on_tape(tape, model.trunk, enc_initial, model.activation);
    const ad::NodeId trunk_candidate =
        ad::mlp_on_tape(tape, model.trunk, enc_candidate, model.activation);
    const ad::NodeId both = tape.concat(trunk_initial, trunk_candidate);
    return ad::mlp_on_tape(tape, model.head, both, model.activation);
}

ad::NodeId critic_node(ad::Tape& tape, const CriticModel& critic, const PairState& state) {
    const ad::NodeId enc = tape.input(encode_pair(state.first, state.second));
    const ad::NodeId trunk = ad::mlp_on_tape(tape, critic.trunk, enc, critic.activation);
    return ad::mlp_on_tape(tape, critic.head, trunk, critic.activation);
}

namespace {

constexpr int kCheckpointVersion = 1;

json model_container(const std::string& kind) {
    return json{{"container", "model-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind}};
}

void check_kind(const json& j, const std::string& kind) {
    if (!j.is_object() || j.value("container", "") != "model-checkpoint") {
        throw DataError("model checkpoint: not a model container");
    }
    if (j.value("version", 0) != kCheckpointVersion) {
        throw DataError("model checkpoint: unsupported version");
    }
    const std::string got = j.value("kind", "");
    if (got != kind) {
        throw DataError("model checkpoint: expected kind '" + kind + "', got '" + got + "'");
    }
}

json activation_tag(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_tag(const json& j) {
    const std::string s = j.get<std::string>();
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw DataError("model checkpoint: unknown activation '" + s + "'");
}

}  // namespace

json actor_to_json(const ActorModel& m) {
    json j = model_container("actor");
    j["activation"] = activation_tag(m.activation);
    j["params"] = ad::params_to_json(m.params);
    return j;
}

json reward_to_json(const RewardModel& m) {
    json j = model_container("reward");
    j["activation"] = activation_tag(m.activation);
    j["trunk"] = ad::params_to_json(m.trunk);
    j["head"] = ad::params_to_json(m.head);
    return j;
}

json critic_to_json(const CriticModel& m) {
    json j = model_container("critic");
    j["activation"] = activation_tag(m.activation);
    j["trunk"] = ad::params_to_json(m.trunk);
    j["head"] = ad::params_to_json(m.head);
    return j;
}

ActorModel actor_from_json(const json& j) {
    check_kind(j, "actor");
    ActorModel m;
    m.activation = activation_from_tag(j.at("activation"));
    m.params = ad::params_from_json(j.at("params"));
    return m;
}

RewardModel reward_from_json(const json& j) {
    check_kind(j, "reward");
    RewardModel m;
    m.activation = activation_from_tag(j.at("activation"));
    m.trunk = ad::params_from_json(j.at("trunk"));
    m.head = ad::params_from_json(j.at("head"));
    return m;
}

CriticModel critic_from_json(const json& j) {
    check_kind(j, "critic");
    CriticModel m;
    m.activation = activation_from_tag(j.at("activation"));
    m.trunk = ad::params_from_json(j.at("trunk"));
    m.head = ad::params_from_json(j.at("head"));
    return m;
}

}  // namespace lrppo::models
