#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrppo/mlp.hpp"
#include "lrppo/tape.hpp"

namespace lrppo::models {

using ad::Activation;
using ad::ScorerParams;

struct ModelConfig {
    std::size_t feature_dim = 16;
    std::size_t actor_hidden = 64;
    std::size_t trunk_hidden = 64;
    std::size_t trunk_dim = 64;
    std::size_t head_hidden = 64;
    Activation activation = Activation::tanh;
};

// Pair state: item features of the two slots, in state order. Swapping the
// slots swaps the encoding halves; there is no symmetrisation.
struct PairState {
    std::vector<double> first;
    std::vector<double> second;
};

std::vector<double> encode_pair(std::span<const double> first, std::span<const double> second);

// Per-item relevance scorer; the only network used at inference time.
struct ActorModel {
    ScorerParams params;  // feature_dim -> hidden -> 1
    Activation activation = Activation::tanh;

    static ActorModel init(const ModelConfig& config, Rng& rng);
    double score(std::span<const double> features) const;
};

// Scores a (initial pair, candidate ordering) transition. The trunk embeds
// one pair encoding; the head consumes both trunk outputs concatenated.
struct RewardModel {
    ScorerParams trunk;  // 2*feature_dim -> hidden -> trunk_dim
    ScorerParams head;   // 2*trunk_dim -> hidden -> 1
    Activation activation = Activation::tanh;

    static RewardModel init(const ModelConfig& config, Rng& rng);
};

// State value estimator. Shares the trunk shape with RewardModel so it can
// be initialised from a trained reward model.
struct CriticModel {
    ScorerParams trunk;  // 2*feature_dim -> hidden -> trunk_dim
    ScorerParams head;   // trunk_dim -> 1
    Activation activation = Activation::tanh;

    static CriticModel init(const ModelConfig& config, Rng& rng);
};

// Independent per-item evaluation of both slots of a pair state.
std::pair<double, double> actor_scores(const ActorModel& actor, const PairState& state);

// Two-way categorical over pair orderings {keep, swap} with logits
// (p1, p2) / temperature.
struct PolicyDist {
    double keep = 0.5;  // probability the first item stays first
    double swap = 0.5;
};

enum class PairAction : std::uint8_t { keep = 0, swap = 1 };

PolicyDist policy_distribution(double p1, double p2, double temperature);

double reward_forward(const RewardModel& model, const PairState& initial,
                      const PairState& candidate);
double critic_value(const CriticModel& critic, const PairState& state);

// Deep-copies the reward trunk; the value head is freshly initialised with
// small weights so early value estimates stay near zero.
CriticModel init_critic_from_reward(const RewardModel& reward, std::uint64_t seed);

// Tape builders used by the training loops. One tape may host many of
// these; parameter slots are shared so gradients accumulate.
ad::NodeId actor_score_node(ad::Tape& tape, const ActorModel& actor,
                            std::span<const double> features);
ad::NodeId reward_node(ad::Tape& tape, const RewardModel& model, const PairState& initial,
                       const PairState& candidate);
ad::NodeId critic_node(ad::Tape& tape, const CriticModel& critic, const PairState& state);

// Checkpoint containers with a model-kind tag; loading a checkpoint into
// the wrong kind throws DataError.
nlohmann::json actor_to_json(const ActorModel& m);
nlohmann::json reward_to_json(const RewardModel& m);
nlohmann::json critic_to_json(const CriticModel& m);
ActorModel actor_from_json(const nlohmann::json& j);
RewardModel reward_from_json(const nlohmann::json& j);
CriticModel critic_from_json(const nlohmann::json& j);

}  // namespace lrppo::models
