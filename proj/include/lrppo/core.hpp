#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrppo/common.hpp"
#include "lrppo/models.hpp"

namespace lrppo::core {

using models::ActorModel;
using models::CriticModel;
using models::PairAction;
using models::PairState;
using models::PolicyDist;
using models::RewardModel;

enum class RatioMode : std::uint8_t { partial_order, original, original_clipped };
enum class KlPlacement : std::uint8_t { in_loss, subtracted_from_reward };

struct PPOConfig {
    double gamma = 0.0;
    std::size_t timesteps = 1;        // T
    std::size_t n_trajectories = 200;  // per iteration
    std::size_t k_epochs = 1;
    std::size_t minibatch = 24;
    std::size_t n_iterations = 50;
    double margin = 1.0;         // m, partial order hinge
    double reward_margin = 1.0;  // m_R, stage 2 hinge
    double delta = -0.1;         // advantage threshold
    double c1 = 1.0;
    double c2 = 1e-3;
    double c3 = 1e-3;
    double clip_epsilon = 0.2;  // ablation only
    RatioMode ratio_mode = RatioMode::partial_order;
    KlPlacement kl_placement = KlPlacement::subtracted_from_reward;
    double temperature = 1.0;

    void validate() const;
};

// One PPO sample. With T = 1 a trajectory is a single record.
struct TrajectoryRecord {
    std::string instance_id;
    std::size_t first_index = 0;   // state order
    std::size_t second_index = 0;
    PairState state;               // s_t, in state order
    PairAction action = PairAction::keep;
    double reward = 0.0;
    double old_prob = 0.0;        // pi_old(a_t | s_t)
    PolicyDist old_dist;          // full old distribution over {keep, swap}
    double old_value = 0.0;       // V_old(s_t)
    double old_terminal_value = 0.0;  // V_old(s_T)
    double target_value = 0.0;
    double advantage = 0.0;
};

// ---- scalar loss/quantity definitions ------------------------------------

double smooth_l1(double predicted, double truth, double beta);
double reward_margin_loss(double reward_correct, double reward_flipped, double margin);

// Discounted return bootstrap: sum_i gamma^i r_{t+i} + gamma^{T-t} V_old(s_T).
double target_value(std::span<const double> rewards, double gamma, double v_old_terminal);
double advantage(double v_target, double v_old_state);

// Hinge on the score gap: max(0, margin - (p1 - p2)).
double partial_order(double p1, double p2, double margin);

// Signed hinge replacing the importance ratio: the branch flips with the
// sign of (advantage - delta), with the boundary taking the >= branch.
double partial_order_ratio(double p1, double p2, double advantage, double delta, double margin);

double policy_loss_partial(std::span<const double> ratios, std::span<const double> advantages);

double original_ratio(double pi_new, double pi_old);
double clipped_policy_loss(std::span<const double> ratios, std::span<const double> advantages,
                           double epsilon);

double value_loss(std::span<const double> values, std::span<const double> targets);

// Natural-log entropy of one two-way categorical (0 log 0 := 0).
double entropy(const PolicyDist& dist);
double entropy_bonus(std::span<const PolicyDist> dists);

// KL(old || new); throws on support violation.
double kl_divergence(const PolicyDist& old_dist, const PolicyDist& new_dist);
double kl_penalty(std::span<const PolicyDist> old_dists, std::span<const PolicyDist> new_dists);

// Combined objective. With kl_placement = subtracted_from_reward the KL
// term is omitted here because the rewards feeding the targets were
// already adjusted by r_t <- r_t - c3 * KL_t.
double total_loss(double policy_loss, double value_loss, double entropy, double kl,
                  const PPOConfig& config);

// ---- tape compositions ----------------------------------------------------
// The training loops assemble their objectives from these; unit tests
// finite-difference them against the scalar definitions above.

// Smooth-L1 with the branch picked define-by-run; the kink follows the
// linear branch.
ad::NodeId smooth_l1_node(ad::Tape& tape, ad::NodeId predicted, double truth, double beta);

// max(0, margin - (hi - lo)).
ad::NodeId hinge_node(ad::Tape& tape, ad::NodeId hi, ad::NodeId lo, double margin);

// softmax over the two scores at the given temperature.
ad::NodeId policy_dist_node(ad::Tape& tape, ad::NodeId p1, ad::NodeId p2, double temperature);

// -sum p log p over a probability vector node.
ad::NodeId entropy_node(ad::Tape& tape, ad::NodeId dist);

// KL(old || new) with the old distribution held constant.
ad::NodeId kl_node(ad::Tape& tape, const PolicyDist& old_dist, ad::NodeId new_dist);

// clamp(x, lo, hi) built from max-with-constant.
ad::NodeId clamp_node(ad::Tape& tape, ad::NodeId x, double lo, double hi);

ad::NodeId min_node(ad::Tape& tape, ad::NodeId a, ad::NodeId b);

// mean of a list of scalar nodes.
ad::NodeId mean_of_nodes(ad::Tape& tape, const std::vector<ad::NodeId>& nodes);

// ---- trajectory collection and optimisation ------------------------------

// A stage-3 pair with its features resolved, in dataset order.
struct PairContext {
    std::string instance_id;
    std::size_t first_index = 0;
    std::size_t second_index = 0;
    std::vector<double> first_features;
    std::vector<double> second_features;
};

// Runs the current policy for config.timesteps on config.n_trajectories
// pairs sampled from the pool. Old probabilities/values are recorded from
// the models as passed, which therefore act as the "old" networks of the
// next update. Deterministic for a fixed rng state and independent of
// n_threads (per-trajectory RNG streams).
std::vector<TrajectoryRecord> collect_trajectories(const ActorModel& actor,
                                                   const RewardModel& reward_model,
                                                   const CriticModel& critic,
                                                   std::span<const PairContext> pool,
                                                   const PPOConfig& config, Rng& rng,
                                                   std::size_t n_threads = 1);

struct IterationDiagnostics {
    std::size_t iteration = 0;
    double mean_reward = 0.0;
    double mean_advantage = 0.0;
    double mean_abs_advantage = 0.0;
    double policy_loss = 0.0;  // mean over minibatches
    double value_loss = 0.0;
    double entropy = 0.0;
    double kl = 0.0;
    double max_score_gap = 0.0;  // max |p1 - p2| seen in the update
    bool policy_bound_ok = true;  // |L_PF| <= mean|A| * (margin + max|p1-p2|) per minibatch
};

// The combined training objective of one minibatch, recorded on `tape`.
// Advantages and value targets enter as constants (re-adjusted by the
// per-record KL when the config subtracts it from the reward); gradients
// flow through the ratio, value, entropy and KL terms only.
struct MinibatchObjective {
    ad::NodeId total = -1;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double kl = 0.0;
    double max_score_gap = 0.0;
    double mean_abs_advantage = 0.0;
    bool policy_bound_ok = true;
    std::vector<double> effective_advantages;
    std::vector<double> effective_targets;
};

MinibatchObjective build_minibatch_objective(ad::Tape& tape,
                                             std::span<const TrajectoryRecord> records,
                                             std::span<const std::size_t> batch,
                                             const ActorModel& actor, const CriticModel& critic,
                                             const PPOConfig& config);

// K epochs of minibatch updates over the records (Algorithm-style: floor
// division into batches of exactly `minibatch`). Throws NumericError with
// diagnostics attached on a non-finite loss.
IterationDiagnostics ppo_iteration(std::span<const TrajectoryRecord> records, ActorModel& actor,
                                   CriticModel& critic, const PPOConfig& config,
                                   const ad::AdamConfig& actor_opt,
                                   const ad::AdamConfig& critic_opt, Rng& rng);

}  // namespace lrppo::core
