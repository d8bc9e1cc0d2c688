#include <cmath>
#include <limits>

#include "doctest.h"
#include "lrppo/core.hpp"
#include "lrppo/tape.hpp"
#include "support/finite_diff.hpp"

using namespace lrppo;
using namespace lrppo::core;

namespace {

constexpr std::size_t kDim = 3;

struct TestRig {
    models::ActorModel actor;
    models::RewardModel reward;
    models::CriticModel critic;
    std::vector<PairContext> pool;
};

TestRig make_rig(std::uint64_t seed, std::size_t n_pairs = 12) {
    models::ModelConfig cfg;
    cfg.feature_dim = kDim;
    cfg.actor_hidden = 5;
    cfg.trunk_hidden = 5;
    cfg.trunk_dim = 4;
    cfg.head_hidden = 5;
    Rng rng(seed);
    TestRig rig{models::ActorModel::init(cfg, rng), models::RewardModel::init(cfg, rng),
                models::CriticModel::init(cfg, rng), {}};
    for (std::size_t i = 0; i < n_pairs; ++i) {
        PairContext ctx;
        ctx.instance_id = "q" + std::to_string(i / 4);
        ctx.first_index = 2 * (i % 4);
        ctx.second_index = ctx.first_index + 1;
        ctx.first_features.resize(kDim);
        ctx.second_features.resize(kDim);
        for (double& v : ctx.first_features) v = rng.uniform(-1.0, 1.0);
        for (double& v : ctx.second_features) v = rng.uniform(-1.0, 1.0);
        rig.pool.push_back(std::move(ctx));
    }
    return rig;
}

PPOConfig small_ppo(std::size_t n_trajs = 16, std::size_t minibatch = 8) {
    PPOConfig cfg;
    cfg.n_trajectories = n_trajs;
    cfg.minibatch = minibatch;
    cfg.n_iterations = 1;
    return cfg;
}

}  // namespace

TEST_CASE("collect_trajectories: record count is n_trajectories * timesteps") {
    TestRig rig = make_rig(1);
    PPOConfig cfg = small_ppo();
    Rng rng(7);
    CHECK(collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng).size() ==
          16);
    cfg.timesteps = 3;
    cfg.minibatch = 8;
    Rng rng2(7);
    CHECK(collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng2).size() ==
          48);
}

TEST_CASE("collect_trajectories: gamma 0 and T 1 reduce the target to the reward") {
    TestRig rig = make_rig(2);
    const PPOConfig cfg = small_ppo();
    Rng rng(3);
    for (const TrajectoryRecord& rec :
         collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng)) {
        CHECK(rec.target_value == rec.reward);
        CHECK(rec.advantage == rec.target_value - rec.old_value);
        CHECK(rec.old_prob > 0.0);
        CHECK(rec.old_prob < 1.0);
        CHECK(rec.old_dist.keep + rec.old_dist.swap == doctest::Approx(1.0).epsilon(1e-12));
        const double expected_prob =
            rec.action == models::PairAction::keep ? rec.old_dist.keep : rec.old_dist.swap;
        CHECK(rec.old_prob == expected_prob);
    }
}

TEST_CASE("collect_trajectories: multi-step targets follow the discounted bootstrap") {
    TestRig rig = make_rig(3);
    PPOConfig cfg = small_ppo();
    cfg.timesteps = 3;
    cfg.gamma = 0.9;
    Rng rng(5);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    for (std::size_t k = 0; k < cfg.n_trajectories; ++k) {
        std::vector<double> rewards;
        for (std::size_t t = 0; t < cfg.timesteps; ++t) {
            rewards.push_back(records[k * cfg.timesteps + t].reward);
        }
        for (std::size_t t = 0; t < cfg.timesteps; ++t) {
            const TrajectoryRecord& rec = records[k * cfg.timesteps + t];
            const double expected = target_value(std::span(rewards).subspan(t), cfg.gamma,
                                                 rec.old_terminal_value);
            CHECK(rec.target_value == doctest::Approx(expected).epsilon(1e-12));
        }
        // All records of one trajectory share the terminal value.
        CHECK(records[k * cfg.timesteps].old_terminal_value ==
              records[k * cfg.timesteps + 2].old_terminal_value);
    }
}

TEST_CASE("collect_trajectories: deterministic under a fixed rng seed") {
    TestRig rig = make_rig(4);
    const PPOConfig cfg = small_ppo();
    Rng rng_a(11);
    Rng rng_b(11);
    const auto a = collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng_a);
    const auto b = collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng_b);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].reward == b[i].reward);
        CHECK(a[i].action == b[i].action);
        CHECK(a[i].advantage == b[i].advantage);
        CHECK(a[i].instance_id == b[i].instance_id);
    }
}

TEST_CASE("collect_trajectories: results are independent of the thread count") {
    TestRig rig = make_rig(5);
    const PPOConfig cfg = small_ppo(32, 8);
    Rng rng_a(13);
    Rng rng_b(13);
    const auto seq =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng_a, 1);
    const auto par =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng_b, 4);
    REQUIRE(seq.size() == par.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        CHECK(seq[i].reward == par[i].reward);
        CHECK(seq[i].old_value == par[i].old_value);
        CHECK(seq[i].action == par[i].action);
    }
}

TEST_CASE("collect_trajectories: empty pool is an error") {
    TestRig rig = make_rig(6);
    Rng rng(1);
    CHECK_THROWS_AS(
        collect_trajectories(rig.actor, rig.reward, rig.critic, {}, small_ppo(), rng),
        DataError);
}

TEST_CASE("minibatch objective: KL is zero and advantages unchanged right after collection") {
    TestRig rig = make_rig(7);
    const PPOConfig cfg = small_ppo();
    Rng rng(2);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    std::vector<std::size_t> batch(records.size());
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;

    ad::Tape tape;
    const MinibatchObjective obj =
        build_minibatch_objective(tape, records, batch, rig.actor, rig.critic, cfg);
    CHECK(obj.kl == 0.0);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(obj.effective_advantages[i] == records[batch[i]].advantage);
        CHECK(obj.effective_targets[i] == records[batch[i]].target_value);
    }
}

TEST_CASE("minibatch objective: policy loss matches the scalar partial-order composition") {
    TestRig rig = make_rig(8);
    const PPOConfig cfg = small_ppo();
    Rng rng(9);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    std::vector<std::size_t> batch(records.size());
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;

    ad::Tape tape;
    const MinibatchObjective obj =
        build_minibatch_objective(tape, records, batch, rig.actor, rig.critic, cfg);

    std::vector<double> ratios, advs;
    for (const TrajectoryRecord& rec : records) {
        const auto [p1, p2] = models::actor_scores(rig.actor, rec.state);
        const double cand_first = rec.action == models::PairAction::keep ? p1 : p2;
        const double cand_second = rec.action == models::PairAction::keep ? p2 : p1;
        ratios.push_back(
            partial_order_ratio(cand_first, cand_second, rec.advantage, cfg.delta, cfg.margin));
        advs.push_back(rec.advantage);
    }
    CHECK(obj.policy_loss == doctest::Approx(policy_loss_partial(ratios, advs)).epsilon(1e-12));

    // Branch consistency: flipping the sign of (advantage - delta) flips
    // which hinge the sample contributes.
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto [p1, p2] = models::actor_scores(rig.actor, records[i].state);
        const double cf = records[i].action == models::PairAction::keep ? p1 : p2;
        const double cs = records[i].action == models::PairAction::keep ? p2 : p1;
        const double expected = records[i].advantage >= cfg.delta ? -partial_order(cf, cs, 1.0)
                                                                  : -partial_order(cs, cf, 1.0);
        CHECK(ratios[i] == expected);
    }
}

TEST_CASE("minibatch objective: satisfied-margin samples contribute zero policy loss") {
    TestRig rig = make_rig(9, 4);
    // Blow up the output layer so score gaps comfortably exceed the margin.
    for (double& w : rig.actor.params.layers.back().weight.data) w *= 40.0;

    const PPOConfig cfg = small_ppo(4, 4);
    Rng rng(3);
    auto records = collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    bool found = false;
    for (TrajectoryRecord& rec : records) {
        const auto [p1, p2] = models::actor_scores(rig.actor, rec.state);
        const double cf = rec.action == models::PairAction::keep ? p1 : p2;
        const double cs = rec.action == models::PairAction::keep ? p2 : p1;
        if (cf - cs < cfg.margin + 0.1) continue;
        rec.advantage = 0.5;  // >= delta branch
        rec.target_value = rec.old_value + 0.5;
        found = true;

        const std::vector<std::size_t> batch{
            static_cast<std::size_t>(&rec - records.data())};
        PPOConfig in_loss_cfg = cfg;
        in_loss_cfg.kl_placement = KlPlacement::in_loss;  // keep the stored advantage exact
        in_loss_cfg.minibatch = 1;
        in_loss_cfg.n_trajectories = 1;
        ad::Tape tape;
        const MinibatchObjective obj =
            build_minibatch_objective(tape, records, batch, rig.actor, rig.critic, in_loss_cfg);
        CHECK(obj.policy_loss == 0.0);
    }
    CHECK(found);
}

TEST_CASE("ppo_iteration: K=1 with a single full batch takes exactly one optimizer step") {
    TestRig rig = make_rig(10);
    const PPOConfig cfg = small_ppo(16, 16);
    Rng rng(4);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    ppo_iteration(records, rig.actor, rig.critic, cfg, ad::AdamConfig{1e-3}, ad::AdamConfig{1e-3},
                  rng);
    CHECK(rig.actor.params.step == 1);
    CHECK(rig.critic.trunk.step == 1);
    CHECK(rig.critic.head.step == 1);
}

TEST_CASE("ppo_iteration: K epochs over B batches take K*B steps") {
    TestRig rig = make_rig(11);
    PPOConfig cfg = small_ppo(16, 8);
    cfg.k_epochs = 3;
    Rng rng(6);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    ppo_iteration(records, rig.actor, rig.critic, cfg, ad::AdamConfig{1e-3}, ad::AdamConfig{1e-3},
                  rng);
    CHECK(rig.actor.params.step == 6);  // 3 epochs * floor(16/8) batches
}

TEST_CASE("ppo_iteration: deterministic diagnostics under a fixed seed") {
    auto run = [] {
        TestRig rig = make_rig(12);
        const PPOConfig cfg = small_ppo();
        Rng rng(21);
        const auto records =
            collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
        return ppo_iteration(records, rig.actor, rig.critic, cfg, ad::AdamConfig{1e-3},
                             ad::AdamConfig{1e-3}, rng);
    };
    const IterationDiagnostics a = run();
    const IterationDiagnostics b = run();
    CHECK(a.policy_loss == b.policy_loss);
    CHECK(a.value_loss == b.value_loss);
    CHECK(a.entropy == b.entropy);
    CHECK(a.kl == b.kl);
    CHECK(a.mean_reward == b.mean_reward);
}

TEST_CASE("ppo_iteration: fewer records than one minibatch is an error") {
    TestRig rig = make_rig(13);
    PPOConfig cfg = small_ppo(4, 4);
    Rng rng(1);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    cfg.minibatch = 5;
    cfg.n_trajectories = 5;
    CHECK_THROWS_AS(ppo_iteration(std::span(records).first(4), rig.actor, rig.critic, cfg,
                                  ad::AdamConfig{}, ad::AdamConfig{}, rng),
                    DataError);
}

TEST_CASE("ppo_iteration: non-finite loss aborts with diagnostics") {
    TestRig rig = make_rig(14);
    const PPOConfig cfg = small_ppo();
    Rng rng(2);
    const auto records =
        collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);
    rig.critic.head.layers[0].weight.data[0] = std::numeric_limits<double>::quiet_NaN();
    rig.critic.head.version += 1;
    CHECK_THROWS_WITH_AS(ppo_iteration(records, rig.actor, rig.critic, cfg, ad::AdamConfig{},
                                       ad::AdamConfig{}, rng),
                         doctest::Contains("non-finite total loss"), NumericError);
}

TEST_CASE("gradcheck: total objective on a 10-record batch, both KL placements") {
    for (const KlPlacement placement :
         {KlPlacement::in_loss, KlPlacement::subtracted_from_reward}) {
        TestRig rig = make_rig(15);
        PPOConfig cfg = small_ppo(10, 10);
        cfg.kl_placement = placement;
        Rng rng(8);
        const auto records =
            collect_trajectories(rig.actor, rig.reward, rig.critic, rig.pool, cfg, rng);

        // One actor update so the new policy differs from the recorded one
        // (otherwise the KL path is identically zero).
        ppo_iteration(records, rig.actor, rig.critic, cfg, ad::AdamConfig{5e-2},
                      ad::AdamConfig{5e-2}, rng);

        std::vector<std::size_t> batch(records.size());
        for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;

        ad::Tape tape;
        const MinibatchObjective obj =
            build_minibatch_objective(tape, records, batch, rig.actor, rig.critic, cfg);
        tape.backward(obj.total);
        const ad::ModelGrads actor_grads = tape.grads_for(rig.actor.params);
        const ad::ModelGrads trunk_grads = tape.grads_for(rig.critic.trunk);
        const ad::ModelGrads head_grads = tape.grads_for(rig.critic.head);

        // Frozen effective advantages/targets: the analytic gradient treats
        // them as constants, so the finite-difference loss must too.
        const std::vector<double> advs = obj.effective_advantages;
        const std::vector<double> targets = obj.effective_targets;

        auto scalar_total = [&] {
            std::vector<double> ratios, values, value_targets;
            std::vector<models::PolicyDist> dists, old_dists;
            for (std::size_t i = 0; i < records.size(); ++i) {
                const TrajectoryRecord& rec = records[i];
                const auto [p1, p2] = models::actor_scores(rig.actor, rec.state);
                const models::PolicyDist dist =
                    models::policy_distribution(p1, p2, cfg.temperature);
                dists.push_back(dist);
                old_dists.push_back(rec.old_dist);
                const double cf = rec.action == models::PairAction::keep ? p1 : p2;
                const double cs = rec.action == models::PairAction::keep ? p2 : p1;
                ratios.push_back(partial_order_ratio(cf, cs, advs[i], cfg.delta, cfg.margin));
                values.push_back(models::critic_value(rig.critic, rec.state));
                value_targets.push_back(targets[i]);
            }
            const double lp = policy_loss_partial(ratios, advs);
            const double lv = value_loss(values, value_targets);
            const double s = entropy_bonus(dists);
            const double kl = kl_penalty(old_dists, dists);
            return total_loss(lp, lv, s, kl, cfg);
        };

        CHECK(tape.scalar_value(obj.total) == doctest::Approx(scalar_total()).epsilon(1e-12));
        const auto actor_report =
            testsupport::check_gradients(rig.actor.params, actor_grads, scalar_total);
        CHECK(actor_report.max_rel_err < 1e-4);
        const auto trunk_report =
            testsupport::check_gradients(rig.critic.trunk, trunk_grads, scalar_total);
        CHECK(trunk_report.max_rel_err < 1e-4);
        const auto head_report =
            testsupport::check_gradients(rig.critic.head, head_grads, scalar_total);
        CHECK(head_report.max_rel_err < 1e-4);
    }
}
