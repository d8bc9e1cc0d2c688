#include "lrppo/core.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "lrppo/tape.hpp"

namespace lrppo::core {

void PPOConfig::validate() const {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("ppo: gamma must be in [0,1]");
    if (timesteps < 1) throw ConfigError("ppo: timesteps must be >= 1");
    if (n_trajectories < 1) throw ConfigError("ppo: n_trajectories must be >= 1");
    if (k_epochs < 1) throw ConfigError("ppo: k_epochs must be >= 1");
    if (minibatch < 1) throw ConfigError("ppo: minibatch must be >= 1");
    if (minibatch > n_trajectories * timesteps) {
        throw ConfigError("ppo: minibatch must not exceed n_trajectories * timesteps");
    }
    if (!(margin > 0.0)) throw ConfigError("ppo: margin must be > 0");
    if (!(reward_margin > 0.0)) throw ConfigError("ppo: reward_margin must be > 0");
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
        throw ConfigError("ppo: clip_epsilon must be in (0,1)");
    }
    if (!(temperature > 0.0)) throw ConfigError("ppo: temperature must be > 0");
}

double smooth_l1(double predicted, double truth, double beta) {
    if (!(beta > 0.0)) throw ConfigError("smooth_l1: beta must be > 0");
    const double diff = std::abs(predicted - truth);
    if (diff < beta) return 0.5 * diff * diff / beta;
    return diff - 0.5 * beta;
}

double reward_margin_loss(double reward_correct, double reward_flipped, double margin) {
    if (!(margin > 0.0)) throw ConfigError("reward_margin_loss: margin must be > 0");
    return std::max(0.0, margin - (reward_correct - reward_flipped));
}

double target_value(std::span<const double> rewards, double gamma, double v_old_terminal) {
    if (rewards.empty()) throw DataError("target_value: empty reward list");
    double acc = 0.0;
    double discount = 1.0;
    for (double r : rewards) {
        acc += discount * r;
        discount *= gamma;
    }
    return acc + discount * v_old_terminal;
}

double advantage(double v_target, double v_old_state) { return v_target - v_old_state; }

double partial_order(double p1, double p2, double margin) {
    if (!(margin > 0.0)) throw ConfigError("partial_order: margin must be > 0");
    return std::max(0.0, margin - (p1 - p2));
}

double partial_order_ratio(double p1, double p2, double advantage, double delta, double margin) {
    if (advantage >= delta) return -partial_order(p1, p2, margin);
    return -partial_order(p2, p1, margin);
}

double policy_loss_partial(std::span<const double> ratios, std::span<const double> advantages) {
    if (ratios.size() != advantages.size()) {
        throw DataError("policy_loss_partial: ratio/advantage length mismatch");
    }
    if (ratios.empty()) throw DataError("policy_loss_partial: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) acc += ratios[i] * std::abs(advantages[i]);
    return -acc / static_cast<double>(ratios.size());
}

double original_ratio(double pi_new, double pi_old) {
    if (!(pi_old > 0.0)) throw NumericError("original_ratio: old probability must be > 0");
    return pi_new / pi_old;
}

double clipped_policy_loss(std::span<const double> ratios, std::span<const double> advantages,
                           double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) {
        throw ConfigError("clipped_policy_loss: epsilon must be in (0,1)");
    }
    if (ratios.size() != advantages.size()) {
        throw DataError("clipped_policy_loss: ratio/advantage length mismatch");
    }
    if (ratios.empty()) throw DataError("clipped_policy_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double clipped = std::clamp(ratios[i], 1.0 - epsilon, 1.0 + epsilon);
        acc += std::min(ratios[i] * advantages[i], clipped * advantages[i]);
    }
    return -acc / static_cast<double>(ratios.size());
}

double value_loss(std::span<const double> values, std::span<const double> targets) {
    if (values.size() != targets.size()) throw DataError("value_loss: length mismatch");
    if (values.empty()) throw DataError("value_loss: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double d = values[i] - targets[i];
        acc += d * d;
    }
    return acc / static_cast<double>(values.size());
}

namespace {

void check_dist(const PolicyDist& d, const char* who) {
    if (d.keep < 0.0 || d.swap < 0.0) {
        throw NumericError(std::string(who) + ": negative probability");
    }
    if (std::abs(d.keep + d.swap - 1.0) > 1e-9) {
        throw NumericError(std::string(who) + ": probabilities must sum to 1");
    }
}

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

}  // namespace

double entropy(const PolicyDist& dist) {
    check_dist(dist, "entropy");
    return -(xlogx(dist.keep) + xlogx(dist.swap));
}

double entropy_bonus(std::span<const PolicyDist> dists) {
    if (dists.empty()) throw DataError("entropy_bonus: empty batch");
    double acc = 0.0;
    for (const PolicyDist& d : dists) acc += entropy(d);
    return acc / static_cast<double>(dists.size());
}

double kl_divergence(const PolicyDist& old_dist, const PolicyDist& new_dist) {
    check_dist(old_dist, "kl_divergence(old)");
    check_dist(new_dist, "kl_divergence(new)");
    double acc = 0.0;
    const double olds[2] = {old_dist.keep, old_dist.swap};
    const double news[2] = {new_dist.keep, new_dist.swap};
    for (int i = 0; i < 2; ++i) {
        if (olds[i] == 0.0) continue;
        if (news[i] <= 0.0) {
            throw NumericError("kl_divergence: new distribution lacks support where old is positive");
        }
        acc += olds[i] * std::log(olds[i] / news[i]);
    }
    return acc;
}

double kl_penalty(std::span<const PolicyDist> old_dists, std::span<const PolicyDist> new_dists) {
    if (old_dists.size() != new_dists.size()) throw DataError("kl_penalty: length mismatch");
    if (old_dists.empty()) throw DataError("kl_penalty: empty batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < old_dists.size(); ++i) {
        acc += kl_divergence(old_dists[i], new_dists[i]);
    }
    return acc / static_cast<double>(old_dists.size());
}

double total_loss(double policy_loss, double value_loss, double entropy, double kl,
                  const PPOConfig& config) {
    double loss = policy_loss + config.c1 * value_loss - config.c2 * entropy;
    if (config.kl_placement == KlPlacement::in_loss) loss += config.c3 * kl;
    return loss;
}

ad::NodeId smooth_l1_node(ad::Tape& tape, ad::NodeId predicted, double truth, double beta) {
    if (!(beta > 0.0)) throw ConfigError("smooth_l1: beta must be > 0");
    const double p = tape.scalar_value(predicted);
    const ad::NodeId diff = tape.add_const(predicted, -truth);
    if (std::abs(p - truth) < beta) {
        return tape.scale(tape.mul(diff, diff), 0.5 / beta);
    }
    const double sign = p - truth >= 0.0 ? 1.0 : -1.0;
    return tape.add_const(tape.scale(diff, sign), -0.5 * beta);
}

ad::NodeId hinge_node(ad::Tape& tape, ad::NodeId hi, ad::NodeId lo, double margin) {
    if (!(margin > 0.0)) throw ConfigError("hinge: margin must be > 0");
    return tape.max_const(tape.add_const(tape.scale(tape.sub(hi, lo), -1.0), margin), 0.0);
}

ad::NodeId policy_dist_node(ad::Tape& tape, ad::NodeId p1, ad::NodeId p2, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("policy_dist: temperature must be > 0");
    return tape.softmax(tape.scale(tape.concat(p1, p2), 1.0 / temperature));
}

ad::NodeId entropy_node(ad::Tape& tape, ad::NodeId dist) {
    const double n = static_cast<double>(tape.value(dist).size());
    return tape.scale(tape.mean(tape.mul(dist, tape.log(dist))), -n);
}

ad::NodeId kl_node(ad::Tape& tape, const PolicyDist& old_dist, ad::NodeId new_dist) {
    const double old_self = xlogx(old_dist.keep) + xlogx(old_dist.swap);
    const ad::NodeId old_node = tape.input(std::vector<double>{old_dist.keep, old_dist.swap});
    const ad::NodeId cross = tape.scale(tape.mean(tape.mul(old_node, tape.log(new_dist))), 2.0);
    return tape.add_const(tape.scale(cross, -1.0), old_self);
}

ad::NodeId clamp_node(ad::Tape& tape, ad::NodeId x, double lo, double hi) {
    const ad::NodeId raised = tape.max_const(x, lo);
    return tape.scale(tape.max_const(tape.scale(raised, -1.0), -hi), -1.0);
}

ad::NodeId min_node(ad::Tape& tape, ad::NodeId a, ad::NodeId b) {
    // min(a, b) = -(max(-a, -b)); max(x, y) = x + max(y - x, 0).
    const ad::NodeId na = tape.scale(a, -1.0);
    const ad::NodeId nb = tape.scale(b, -1.0);
    const ad::NodeId mx = tape.add(na, tape.max_const(tape.sub(nb, na), 0.0));
    return tape.scale(mx, -1.0);
}

ad::NodeId mean_of_nodes(ad::Tape& tape, const std::vector<ad::NodeId>& nodes) {
    if (nodes.empty()) throw DataError("mean_of_nodes: empty list");
    ad::NodeId acc = nodes.front();
    for (std::size_t i = 1; i < nodes.size(); ++i) acc = tape.add(acc, nodes[i]);
    return tape.scale(acc, 1.0 / static_cast<double>(nodes.size()));
}

namespace {

PairState swapped(const PairState& s) { return PairState{s.second, s.first}; }

void run_one_trajectory(const ActorModel& actor, const RewardModel& reward_model,
                        const CriticModel& critic, std::span<const PairContext> pool,
                        const PPOConfig& config, std::uint64_t stream_seed,
                        TrajectoryRecord* out) {
    Rng rng(stream_seed);
    const PairContext& ctx = pool[rng.index(pool.size())];

    PairState state{ctx.first_features, ctx.second_features};
    std::size_t first = ctx.first_index;
    std::size_t second = ctx.second_index;

    std::vector<double> rewards(config.timesteps);
    for (std::size_t t = 0; t < config.timesteps; ++t) {
        TrajectoryRecord& rec = out[t];
        rec.instance_id = ctx.instance_id;
        rec.first_index = first;
        rec.second_index = second;
        rec.state = state;
        const auto [p1, p2] = actor_scores(actor, rec.state);
        rec.old_dist = models::policy_distribution(p1, p2, config.temperature);
        const double u = rng.uniform01();
        rec.action = u < rec.old_dist.keep ? PairAction::keep : PairAction::swap;
        rec.old_prob = rec.action == PairAction::keep ? rec.old_dist.keep : rec.old_dist.swap;
        rec.old_value = models::critic_value(critic, rec.state);

        const PairState candidate = rec.action == PairAction::keep ? state : swapped(state);
        rec.reward = models::reward_forward(reward_model, rec.state, candidate);
        rewards[t] = rec.reward;

        if (rec.action == PairAction::swap) std::swap(first, second);
        state = candidate;
    }
    const double v_terminal = models::critic_value(critic, state);
    for (std::size_t t = 0; t < config.timesteps; ++t) {
        TrajectoryRecord& rec = out[t];
        rec.old_terminal_value = v_terminal;
        rec.target_value = target_value(std::span(rewards).subspan(t), config.gamma, v_terminal);
        rec.advantage = advantage(rec.target_value, rec.old_value);
    }
}

}  // namespace

std::vector<TrajectoryRecord> collect_trajectories(const ActorModel& actor,
                                                   const RewardModel& reward_model,
                                                   const CriticModel& critic,
                                                   std::span<const PairContext> pool,
                                                   const PPOConfig& config, Rng& rng,
                                                   std::size_t n_threads) {
    config.validate();
    if (pool.empty()) throw DataError("collect_trajectories: empty pair pool");

    // One master draw; per-trajectory streams keep results independent of
    // the thread count.
    const std::uint64_t base = rng.next_u64();
    std::vector<TrajectoryRecord> records(config.n_trajectories * config.timesteps);

    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            run_one_trajectory(actor, reward_model, critic, pool, config, mix_seed(base, k),
                               &records[k * config.timesteps]);
        }
    };

    if (n_threads <= 1 || config.n_trajectories < 2) {
        worker(0, config.n_trajectories);
    } else {
        const std::size_t threads = std::min(n_threads, config.n_trajectories);
        std::vector<std::thread> workers;
        workers.reserve(threads);
        const std::size_t chunk = (config.n_trajectories + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(begin + chunk, config.n_trajectories);
            if (begin >= end) break;
            workers.emplace_back(worker, begin, end);
        }
        for (std::thread& th : workers) th.join();
    }
    return records;
}

MinibatchObjective build_minibatch_objective(ad::Tape& tape,
                                             std::span<const TrajectoryRecord> records,
                                             std::span<const std::size_t> batch,
                                             const ActorModel& actor, const CriticModel& critic,
                                             const PPOConfig& config) {
    if (batch.empty()) throw DataError("build_minibatch_objective: empty batch");
    const double n = static_cast<double>(batch.size());

    std::vector<ad::NodeId> policy_terms, value_terms, entropy_terms, kl_terms;
    policy_terms.reserve(batch.size());
    value_terms.reserve(batch.size());
    entropy_terms.reserve(batch.size());
    kl_terms.reserve(batch.size());

    MinibatchObjective obj;
    double kl_scalar_acc = 0.0;
    double abs_adv_acc = 0.0;

    for (const std::size_t idx : batch) {
        const TrajectoryRecord& rec = records[idx];
        const ad::NodeId p1 = models::actor_score_node(tape, actor, rec.state.first);
        const ad::NodeId p2 = models::actor_score_node(tape, actor, rec.state.second);
        const ad::NodeId dist = policy_dist_node(tape, p1, p2, config.temperature);

        const PolicyDist new_dist{tape.value(dist).data[0], tape.value(dist).data[1]};
        const double kl_t = kl_divergence(rec.old_dist, new_dist);
        kl_scalar_acc += kl_t;

        // Effective target/advantage. With the KL subtracted from the
        // reward, the record's own reward is adjusted before the discounted
        // bootstrap; the advantage follows. Both enter as constants.
        double v_target_eff = rec.target_value;
        if (config.kl_placement == KlPlacement::subtracted_from_reward) {
            v_target_eff -= config.c3 * kl_t;
        }
        const double adv_eff = advantage(v_target_eff, rec.old_value);
        obj.effective_targets.push_back(v_target_eff);
        obj.effective_advantages.push_back(adv_eff);
        abs_adv_acc += std::abs(adv_eff);

        const double gap = std::abs(tape.scalar_value(p1) - tape.scalar_value(p2));
        obj.max_score_gap = std::max(obj.max_score_gap, gap);

        switch (config.ratio_mode) {
            case RatioMode::partial_order: {
                // Scores in candidate order: the ordering the reward judged.
                const ad::NodeId cand_first = rec.action == PairAction::keep ? p1 : p2;
                const ad::NodeId cand_second = rec.action == PairAction::keep ? p2 : p1;
                const bool keep_branch = adv_eff >= config.delta;
                const ad::NodeId hi = keep_branch ? cand_first : cand_second;
                const ad::NodeId lo = keep_branch ? cand_second : cand_first;
                const ad::NodeId ratio = tape.scale(hinge_node(tape, hi, lo, config.margin), -1.0);
                policy_terms.push_back(tape.scale(ratio, std::abs(adv_eff)));
                break;
            }
            case RatioMode::original: {
                const ad::NodeId prob = tape.pick(dist, rec.action == PairAction::keep ? 0 : 1);
                const ad::NodeId ratio = tape.scale(prob, 1.0 / rec.old_prob);
                policy_terms.push_back(tape.scale(ratio, adv_eff));
                break;
            }
            case RatioMode::original_clipped: {
                const ad::NodeId prob = tape.pick(dist, rec.action == PairAction::keep ? 0 : 1);
                const ad::NodeId ratio = tape.scale(prob, 1.0 / rec.old_prob);
                const ad::NodeId clipped =
                    clamp_node(tape, ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
                policy_terms.push_back(min_node(tape, tape.scale(ratio, adv_eff),
                                                tape.scale(clipped, adv_eff)));
                break;
            }
        }

        const ad::NodeId v = models::critic_node(tape, critic, rec.state);
        const ad::NodeId v_diff = tape.add_const(v, -v_target_eff);
        value_terms.push_back(tape.mul(v_diff, v_diff));

        entropy_terms.push_back(entropy_node(tape, dist));

        if (config.kl_placement == KlPlacement::in_loss) {
            kl_terms.push_back(kl_node(tape, rec.old_dist, dist));
        }
    }

    const ad::NodeId policy_mean = tape.scale(mean_of_nodes(tape, policy_terms), -1.0);
    const ad::NodeId value_mean = mean_of_nodes(tape, value_terms);
    const ad::NodeId entropy_mean = mean_of_nodes(tape, entropy_terms);

    ad::NodeId total = tape.add(policy_mean, tape.scale(value_mean, config.c1));
    total = tape.sub(total, tape.scale(entropy_mean, config.c2));
    if (config.kl_placement == KlPlacement::in_loss) {
        const ad::NodeId kl_mean = mean_of_nodes(tape, kl_terms);
        total = tape.add(total, tape.scale(kl_mean, config.c3));
        obj.kl = tape.scalar_value(kl_mean);
    } else {
        obj.kl = kl_scalar_acc / n;
    }
    obj.total = total;

    obj.policy_loss = tape.scalar_value(policy_mean);
    obj.value_loss = tape.scalar_value(value_mean);
    obj.entropy = tape.scalar_value(entropy_mean);
    obj.mean_abs_advantage = abs_adv_acc / n;

    if (config.ratio_mode == RatioMode::partial_order) {
        const double bound = obj.mean_abs_advantage * (config.margin + obj.max_score_gap) + 1e-12;
        obj.policy_bound_ok = std::abs(obj.policy_loss) <= bound;
    }
    return obj;
}

namespace {

MinibatchObjective update_minibatch(std::span<const TrajectoryRecord> records,
                                    std::span<const std::size_t> batch, ActorModel& actor,
                                    CriticModel& critic, const PPOConfig& config,
                                    const ad::AdamConfig& actor_opt,
                                    const ad::AdamConfig& critic_opt) {
    ad::Tape tape;
    const MinibatchObjective obj =
        build_minibatch_objective(tape, records, batch, actor, critic, config);

    if (!std::isfinite(tape.scalar_value(obj.total))) {
        throw NumericError("ppo_iteration: non-finite total loss (policy=" +
                           format_double(obj.policy_loss) + ", value=" +
                           format_double(obj.value_loss) + ", entropy=" +
                           format_double(obj.entropy) + ", kl=" + format_double(obj.kl) + ")");
    }

    tape.backward(obj.total);
    const ad::ModelGrads actor_grads = tape.grads_for(actor.params);
    const ad::ModelGrads trunk_grads = tape.grads_for(critic.trunk);
    const ad::ModelGrads head_grads = tape.grads_for(critic.head);
    ad::adam_step(actor.params, actor_grads, actor_opt);
    ad::adam_step(critic.trunk, trunk_grads, critic_opt);
    ad::adam_step(critic.head, head_grads, critic_opt);
    return obj;
}

}  // namespace

IterationDiagnostics ppo_iteration(std::span<const TrajectoryRecord> records, ActorModel& actor,
                                   CriticModel& critic, const PPOConfig& config,
                                   const ad::AdamConfig& actor_opt,
                                   const ad::AdamConfig& critic_opt, Rng& rng) {
    config.validate();
    if (records.size() < config.minibatch) {
        throw DataError("ppo_iteration: need at least one full minibatch of records");
    }

    IterationDiagnostics diag;
    for (const TrajectoryRecord& rec : records) {
        diag.mean_reward += rec.reward;
        diag.mean_advantage += rec.advantage;
        diag.mean_abs_advantage += std::abs(rec.advantage);
    }
    const double n_records = static_cast<double>(records.size());
    diag.mean_reward /= n_records;
    diag.mean_advantage /= n_records;
    diag.mean_abs_advantage /= n_records;

    const std::size_t num_batches = records.size() / config.minibatch;
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::size_t batches_done = 0;
    for (std::size_t epoch = 0; epoch < config.k_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t b = 0; b < num_batches; ++b) {
            const std::span<const std::size_t> batch(order.data() + b * config.minibatch,
                                                     config.minibatch);
            const MinibatchObjective stats =
                update_minibatch(records, batch, actor, critic, config, actor_opt, critic_opt);
            diag.policy_loss += stats.policy_loss;
            diag.value_loss += stats.value_loss;
            diag.entropy += stats.entropy;
            diag.kl += stats.kl;
            diag.max_score_gap = std::max(diag.max_score_gap, stats.max_score_gap);
            diag.policy_bound_ok = diag.policy_bound_ok && stats.policy_bound_ok;
            ++batches_done;
        }
    }
    if (batches_done > 0) {
        diag.policy_loss /= static_cast<double>(batches_done);
        diag.value_loss /= static_cast<double>(batches_done);
        diag.entropy /= static_cast<double>(batches_done);
        diag.kl /= static_cast<double>(batches_done);
    }
    return diag;
}

}  // namespace lrppo::core
