#include "lrppo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>

#include "lrppo/checkpoint.hpp"
#include "lrppo/tape.hpp"

namespace lrppo::pipeline {

using nlohmann::json;

namespace {

// Seed-stream tags for the independent RNGs of the pipeline.
constexpr std::uint64_t kDataStream = 0xda7a;
constexpr std::uint64_t kSplitStream = 0x5317;
constexpr std::uint64_t kStage1Stream = 0x0051;
constexpr std::uint64_t kStage2Stream = 0x0052;
constexpr std::uint64_t kStage3Stream = 0x0053;
constexpr std::uint64_t kCriticStream = 0xc417;

void expect_known_keys(const json& j, std::initializer_list<const char*> known,
                       const std::string& scope) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(known.begin(), known.end(),
                         [&](const char* k) { return key == k; }) == known.end()) {
            throw ConfigError("unknown config key '" + scope + key + "'");
        }
    }
}

models::ModelConfig model_from_json(const json& j) {
    models::ModelConfig m;
    expect_known_keys(j, {"actor_hidden", "trunk_hidden", "trunk_dim", "head_hidden", "activation"},
                      "model.");
    m.actor_hidden = j.value("actor_hidden", m.actor_hidden);
    m.trunk_hidden = j.value("trunk_hidden", m.trunk_hidden);
    m.trunk_dim = j.value("trunk_dim", m.trunk_dim);
    m.head_hidden = j.value("head_hidden", m.head_hidden);
    const std::string act = j.value("activation", "tanh");
    if (act == "tanh") {
        m.activation = models::Activation::tanh;
    } else if (act == "relu") {
        m.activation = models::Activation::relu;
    } else {
        throw ConfigError("model.activation must be 'tanh' or 'relu'");
    }
    return m;
}

json model_to_json(const models::ModelConfig& m) {
    return json{{"actor_hidden", m.actor_hidden},
                {"trunk_hidden", m.trunk_hidden},
                {"trunk_dim", m.trunk_dim},
                {"head_hidden", m.head_hidden},
                {"activation", m.activation == models::Activation::relu ? "relu" : "tanh"}};
}

core::PPOConfig ppo_from_json(const json& j) {
    core::PPOConfig p;
    expect_known_keys(j,
                      {"gamma", "timesteps", "n_trajectories", "k_epochs", "minibatch",
                       "n_iterations", "margin", "reward_margin", "delta", "c1", "c2", "c3",
                       "clip_epsilon", "ratio_mode", "kl_placement", "temperature"},
                      "stage3.ppo.");
    p.gamma = j.value("gamma", p.gamma);
    p.timesteps = j.value("timesteps", p.timesteps);
    p.n_trajectories = j.value("n_trajectories", p.n_trajectories);
    p.k_epochs = j.value("k_epochs", p.k_epochs);
    p.minibatch = j.value("minibatch", p.minibatch);
    p.n_iterations = j.value("n_iterations", p.n_iterations);
    p.margin = j.value("margin", p.margin);
    p.reward_margin = j.value("reward_margin", p.reward_margin);
    p.delta = j.value("delta", p.delta);
    p.c1 = j.value("c1", p.c1);
    p.c2 = j.value("c2", p.c2);
    p.c3 = j.value("c3", p.c3);
    p.clip_epsilon = j.value("clip_epsilon", p.clip_epsilon);
    p.temperature = j.value("temperature", p.temperature);
    const std::string ratio = j.value("ratio_mode", "partial_order");
    if (ratio == "partial_order") {
        p.ratio_mode = core::RatioMode::partial_order;
    } else if (ratio == "original") {
        p.ratio_mode = core::RatioMode::original;
    } else if (ratio == "original_clipped") {
        p.ratio_mode = core::RatioMode::original_clipped;
    } else {
        throw ConfigError("stage3.ppo.ratio_mode must be partial_order|original|original_clipped");
    }
    const std::string kl = j.value("kl_placement", "subtracted_from_reward");
    if (kl == "in_loss") {
        p.kl_placement = core::KlPlacement::in_loss;
    } else if (kl == "subtracted_from_reward") {
        p.kl_placement = core::KlPlacement::subtracted_from_reward;
    } else {
        throw ConfigError("stage3.ppo.kl_placement must be in_loss|subtracted_from_reward");
    }
    return p;
}

json ppo_to_json(const core::PPOConfig& p) {
    const char* ratio = "partial_order";
    if (p.ratio_mode == core::RatioMode::original) ratio = "original";
    if (p.ratio_mode == core::RatioMode::original_clipped) ratio = "original_clipped";
    return json{{"gamma", p.gamma},
                {"timesteps", p.timesteps},
                {"n_trajectories", p.n_trajectories},
                {"k_epochs", p.k_epochs},
                {"minibatch", p.minibatch},
                {"n_iterations", p.n_iterations},
                {"margin", p.margin},
                {"reward_margin", p.reward_margin},
                {"delta", p.delta},
                {"c1", p.c1},
                {"c2", p.c2},
                {"c3", p.c3},
                {"clip_epsilon", p.clip_epsilon},
                {"ratio_mode", ratio},
                {"kl_placement",
                 p.kl_placement == core::KlPlacement::in_loss ? "in_loss"
                                                              : "subtracted_from_reward"},
                {"temperature", p.temperature}};
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    expect_known_keys(j, {"data", "model", "stage1", "stage2", "stage3", "out_dir", "seeds"}, "");
    if (j.contains("data")) {
        const json& d = j.at("data");
        expect_known_keys(d,
                          {"mode", "source_path", "target_path", "n_source_instances",
                           "n_target_instances", "items_per_instance", "feature_dim", "data_seed",
                           "stage3_pair_fraction", "test_fraction"},
                          "data.");
        c.data.mode = d.value("mode", c.data.mode);
        if (c.data.mode != "synthetic" && c.data.mode != "files") {
            throw ConfigError("data.mode must be 'synthetic' or 'files'");
        }
        c.data.source_path = d.value("source_path", c.data.source_path);
        c.data.target_path = d.value("target_path", c.data.target_path);
        c.data.n_source_instances = d.value("n_source_instances", c.data.n_source_instances);
        c.data.n_target_instances = d.value("n_target_instances", c.data.n_target_instances);
        c.data.items_per_instance = d.value("items_per_instance", c.data.items_per_instance);
        c.data.feature_dim = d.value("feature_dim", c.data.feature_dim);
        if (d.contains("data_seed") && !d.at("data_seed").is_null()) {
            c.data.data_seed = d.at("data_seed").get<std::uint64_t>();
        }
        c.data.stage3_pair_fraction = d.value("stage3_pair_fraction", c.data.stage3_pair_fraction);
        c.data.test_fraction = d.value("test_fraction", c.data.test_fraction);
    }
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("stage1")) {
        const json& s = j.at("stage1");
        expect_known_keys(
            s, {"epochs", "lr", "beta", "minibatch", "weight_decay", "validation_fraction"},
            "stage1.");
        c.stage1.epochs = s.value("epochs", c.stage1.epochs);
        c.stage1.lr = s.value("lr", c.stage1.lr);
        c.stage1.beta = s.value("beta", c.stage1.beta);
        c.stage1.minibatch = s.value("minibatch", c.stage1.minibatch);
        c.stage1.weight_decay = s.value("weight_decay", c.stage1.weight_decay);
        c.stage1.validation_fraction = s.value("validation_fraction", c.stage1.validation_fraction);
    }
    if (j.contains("stage2")) {
        const json& s = j.at("stage2");
        expect_known_keys(
            s, {"epochs", "lr", "margin", "annotation_proportion", "minibatch", "weight_decay"},
            "stage2.");
        c.stage2.epochs = s.value("epochs", c.stage2.epochs);
        c.stage2.lr = s.value("lr", c.stage2.lr);
        c.stage2.margin = s.value("margin", c.stage2.margin);
        c.stage2.annotation_proportion =
            s.value("annotation_proportion", c.stage2.annotation_proportion);
        c.stage2.minibatch = s.value("minibatch", c.stage2.minibatch);
        c.stage2.weight_decay = s.value("weight_decay", c.stage2.weight_decay);
    }
    if (j.contains("stage3")) {
        const json& s = j.at("stage3");
        expect_known_keys(s, {"lr", "eval_every", "checkpoint_every", "ppo"}, "stage3.");
        c.stage3.lr = s.value("lr", c.stage3.lr);
        c.stage3.eval_every = s.value("eval_every", c.stage3.eval_every);
        c.stage3.checkpoint_every = s.value("checkpoint_every", c.stage3.checkpoint_every);
        if (s.contains("ppo")) c.stage3.ppo = ppo_from_json(s.at("ppo"));
    }
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("seeds must not be empty");

    if (c.stage1.lr <= 0.0 || c.stage2.lr <= 0.0 || c.stage3.lr <= 0.0) {
        throw ConfigError("learning rates must be > 0");
    }
    if (c.stage1.epochs < 1 || c.stage2.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.stage2.annotation_proportion < 0.0 || c.stage2.annotation_proportion > 1.0) {
        throw ConfigError("stage2.annotation_proportion must be in [0,1]");
    }
    c.stage3.ppo.validate();
    return c;
}

json ExperimentConfig::to_json() const {
    json d{{"mode", data.mode},
           {"source_path", data.source_path},
           {"target_path", data.target_path},
           {"n_source_instances", data.n_source_instances},
           {"n_target_instances", data.n_target_instances},
           {"items_per_instance", data.items_per_instance},
           {"feature_dim", data.feature_dim},
           {"stage3_pair_fraction", data.stage3_pair_fraction},
           {"test_fraction", data.test_fraction}};
    d["data_seed"] = data.data_seed.has_value() ? json(*data.data_seed) : json(nullptr);
    return json{
        {"data", d},
        {"model", model_to_json(model)},
        {"stage1",
         {{"epochs", stage1.epochs},
          {"lr", stage1.lr},
          {"beta", stage1.beta},
          {"minibatch", stage1.minibatch},
          {"weight_decay", stage1.weight_decay},
          {"validation_fraction", stage1.validation_fraction}}},
        {"stage2",
         {{"epochs", stage2.epochs},
          {"lr", stage2.lr},
          {"margin", stage2.margin},
          {"annotation_proportion", stage2.annotation_proportion},
          {"minibatch", stage2.minibatch},
          {"weight_decay", stage2.weight_decay}}},
        {"stage3",
         {{"lr", stage3.lr},
          {"eval_every", stage3.eval_every},
          {"checkpoint_every", stage3.checkpoint_every},
          {"ppo", ppo_to_json(stage3.ppo)}}},
        {"out_dir", out_dir},
        {"seeds", seeds},
    };
}

std::uint64_t ExperimentConfig::config_hash() const {
    json j = to_json();
    j.erase("out_dir");
    j.erase("seeds");
    return fnv1a(j.dump());
}

void apply_override(json& config, const std::string& key, const std::string& value) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = key.find('.', start);
        parts.push_back(key.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    json* node = &config;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i])) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->is_object() || !node->contains(leaf)) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    json& slot = (*node)[leaf];
    if (slot.is_string()) {
        slot = value;
    } else if (slot.is_boolean()) {
        if (value == "true" || value == "1") {
            slot = true;
        } else if (value == "false" || value == "0") {
            slot = false;
        } else {
            throw ConfigError("override '" + key + "' expects a boolean");
        }
    } else if (slot.is_number_unsigned()) {
        slot = static_cast<std::uint64_t>(std::stoull(value));
    } else if (slot.is_number_integer()) {
        slot = static_cast<std::int64_t>(std::stoll(value));
    } else if (slot.is_number_float()) {
        slot = std::stod(value);
    } else if (slot.is_null()) {
        // data_seed is the only nullable scalar; treat as unsigned.
        slot = static_cast<std::uint64_t>(std::stoull(value));
    } else {
        throw ConfigError("override '" + key + "' targets a non-scalar config entry");
    }
}

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed) {
    PreparedData prepared;
    if (config.data.mode == "files") {
        if (config.data.source_path.empty() || config.data.target_path.empty()) {
            throw ConfigError("data.mode=files requires source_path and target_path");
        }
        prepared.source = data::parse_letor_file(config.data.source_path).instances;
        prepared.target = data::parse_letor_file(config.data.target_path).instances;
    } else {
        const std::uint64_t data_seed =
            config.data.data_seed.value_or(mix_seed(seed, kDataStream));
        data::SyntheticConfig sc;
        sc.n_instances = config.data.n_source_instances;
        sc.items_per_instance = config.data.items_per_instance;
        sc.feature_dim = config.data.feature_dim;
        sc.domain = data::Domain::source;
        sc.seed = data_seed;
        prepared.source = data::generate_synthetic(sc);
        sc.n_instances = config.data.n_target_instances;
        sc.domain = data::Domain::target;
        prepared.target = data::generate_synthetic(sc);
    }
    if (prepared.source.empty() || prepared.target.empty()) {
        throw DataError("prepare_data: empty source or target dataset");
    }
    const std::size_t dim = prepared.source.front().items.front().features.size();
    for (const auto& inst : prepared.target) {
        for (const auto& item : inst.items) {
            if (item.features.size() != dim) {
                throw DataError("prepare_data: source/target feature dimensions differ");
            }
        }
    }
    prepared.feature_dim = dim;

    data::SplitConfig split_config;
    split_config.annotation_proportion = config.stage2.annotation_proportion;
    split_config.stage3_pair_fraction = config.data.stage3_pair_fraction;
    split_config.test_fraction = config.data.test_fraction;
    split_config.seed = mix_seed(seed, kSplitStream);
    prepared.split = data::build_splits(prepared.source, prepared.target, split_config);
    return prepared;
}

namespace {

struct GradedSample {
    const std::vector<double>* features;
    double grade;
};

double stage1_epoch(models::ActorModel& actor, std::span<const GradedSample> samples,
                    std::span<const std::size_t> order, const Stage1Config& cfg) {
    const ad::AdamConfig opt{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.minibatch) {
        const std::size_t end = std::min(begin + cfg.minibatch, order.size());
        ad::Tape tape;
        std::vector<ad::NodeId> terms;
        terms.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            const GradedSample& s = samples[order[i]];
            const ad::NodeId p = models::actor_score_node(tape, actor, *s.features);
            terms.push_back(core::smooth_l1_node(tape, p, s.grade, cfg.beta));
        }
        const ad::NodeId loss = core::mean_of_nodes(tape, terms);
        loss_sum += tape.scalar_value(loss);
        ++n_batches;
        tape.backward(loss);
        ad::adam_step(actor.params, tape.grads_for(actor.params), opt);
    }
    return n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
}

}  // namespace

Stage1Result run_stage1(const ExperimentConfig& config, std::uint64_t seed,
                        std::span<const data::RankingInstance> instances,
                        std::size_t feature_dim) {
    if (instances.empty()) throw DataError("run_stage1: no instances");
    for (const data::RankingInstance& inst : instances) {
        for (const data::LabeledItem& item : inst.items) {
            if (!item.relevance.has_value()) {
                throw DataError("run_stage1: ungraded item in instance '" + inst.instance_id + "'");
            }
        }
    }

    Rng rng(mix_seed(seed, kStage1Stream));
    models::ModelConfig mc = config.model;
    mc.feature_dim = feature_dim;
    Stage1Result result{models::ActorModel::init(mc, rng), {}};

    // Deterministic validation carve for the per-epoch NDCG probe.
    std::vector<std::size_t> inst_order(instances.size());
    for (std::size_t i = 0; i < inst_order.size(); ++i) inst_order[i] = i;
    rng.shuffle(inst_order);
    const auto n_val = static_cast<std::size_t>(std::llround(
        config.stage1.validation_fraction * static_cast<double>(instances.size())));
    std::vector<data::RankingInstance> validation;
    std::vector<GradedSample> samples;
    for (std::size_t i = 0; i < inst_order.size(); ++i) {
        const data::RankingInstance& inst = instances[inst_order[i]];
        if (i < n_val && instances.size() > 1) {
            validation.push_back(inst);
            continue;
        }
        for (const data::LabeledItem& item : inst.items) {
            samples.push_back({&item.features, static_cast<double>(*item.relevance)});
        }
    }
    if (samples.empty()) throw DataError("run_stage1: no training samples after validation carve");

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.stage1.epochs; ++epoch) {
        rng.shuffle(order);
        const double train_loss = stage1_epoch(result.actor, samples, order, config.stage1);
        json row{{"stage", 1}, {"epoch", epoch}, {"train_loss", train_loss}};
        if (!validation.empty()) {
            row["val_ndcg5"] = eval::evaluate_model(result.actor, validation).ndcg[2];
        }
        result.history.push_back(std::move(row));
    }
    return result;
}

Stage2Result run_stage2(const ExperimentConfig& config, std::uint64_t seed,
                        std::span<const data::PairSample> pairs,
                        const eval::InstanceIndex& instances, std::size_t feature_dim) {
    if (pairs.empty()) throw DataError("run_stage2: empty pair set");

    Rng rng(mix_seed(seed, kStage2Stream));
    models::ModelConfig mc = config.model;
    mc.feature_dim = feature_dim;
    Stage2Result result{models::RewardModel::init(mc, rng), {}};

    std::vector<eval::ResolvedPair> resolved;
    resolved.reserve(pairs.size());
    for (const data::PairSample& pair : pairs) {
        resolved.push_back(eval::resolve_pair(pair, instances.at(pair.instance_id)));
    }

    const ad::AdamConfig opt{config.stage2.lr, 0.9, 0.999, 1e-8, config.stage2.weight_decay};
    std::vector<std::size_t> order(resolved.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.stage2.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.stage2.minibatch) {
            const std::size_t end = std::min(begin + config.stage2.minibatch, order.size());
            ad::Tape tape;
            std::vector<ad::NodeId> terms;
            terms.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const eval::ResolvedPair& rp = resolved[order[i]];
                const models::PairState flipped{rp.ground_truth.second, rp.ground_truth.first};
                const ad::NodeId r_correct =
                    models::reward_node(tape, result.reward, rp.initial, rp.ground_truth);
                const ad::NodeId r_flipped =
                    models::reward_node(tape, result.reward, rp.initial, flipped);
                terms.push_back(core::hinge_node(tape, r_correct, r_flipped,
                                                 config.stage2.margin));
            }
            const ad::NodeId loss = core::mean_of_nodes(tape, terms);
            loss_sum += tape.scalar_value(loss);
            ++n_batches;
            tape.backward(loss);
            ad::adam_step(result.reward.trunk, tape.grads_for(result.reward.trunk), opt);
            ad::adam_step(result.reward.head, tape.grads_for(result.reward.head), opt);
        }

        // Training-pair accuracy: strict inequality, ties incorrect.
        std::size_t correct = 0;
        for (const eval::ResolvedPair& rp : resolved) {
            const models::PairState flipped{rp.ground_truth.second, rp.ground_truth.first};
            const double rc = models::reward_forward(result.reward, rp.initial, rp.ground_truth);
            const double rf = models::reward_forward(result.reward, rp.initial, flipped);
            if (rc > rf) ++correct;
        }
        result.history.push_back(json{
            {"stage", 2},
            {"epoch", epoch},
            {"loss", loss_sum / static_cast<double>(n_batches)},
            {"pair_accuracy", static_cast<double>(correct) / static_cast<double>(resolved.size())},
        });
    }
    return result;
}

std::vector<core::PairContext> resolve_pair_pool(std::span<const data::PairSample> pairs,
                                                 const eval::InstanceIndex& instances) {
    std::vector<core::PairContext> pool;
    pool.reserve(pairs.size());
    for (const data::PairSample& pair : pairs) {
        const data::RankingInstance& inst = instances.at(pair.instance_id);
        if (pair.preferred_index >= inst.items.size() || pair.other_index >= inst.items.size()) {
            throw DataError("resolve_pair_pool: pair indices out of range for '" +
                            pair.instance_id + "'");
        }
        // Stage-3 pairs are stored in dataset order already; keep it.
        const std::size_t first = std::min(pair.preferred_index, pair.other_index);
        const std::size_t second = std::max(pair.preferred_index, pair.other_index);
        pool.push_back({pair.instance_id, first, second, inst.items[first].features,
                        inst.items[second].features});
    }
    return pool;
}

Stage3Result run_stage3(const ExperimentConfig& config, std::uint64_t seed,
                        const models::ActorModel& initial_actor, const models::RewardModel& reward,
                        std::span<const core::PairContext> pool,
                        std::span<const data::RankingInstance> test_instances,
                        std::size_t n_threads, const Stage3Resume* resume,
                        const std::string& checkpoint_path) {
    if (pool.empty()) throw DataError("run_stage3: empty stage-3 pair pool");
    const core::PPOConfig& ppo = config.stage3.ppo;
    ppo.validate();

    Stage3Result result{initial_actor,
                        models::init_critic_from_reward(reward, mix_seed(seed, kCriticStream)),
                        {}};
    Rng rng(mix_seed(seed, kStage3Stream));
    std::size_t start_iteration = 0;
    if (resume != nullptr) {
        result.actor = resume->actor;
        result.critic = resume->critic;
        start_iteration = resume->next_iteration;
        rng.load_state(resume->rng_state);
    }

    const ad::AdamConfig opt{config.stage3.lr, 0.9, 0.999, 1e-8, 0.0};
    for (std::size_t iter = start_iteration; iter < ppo.n_iterations; ++iter) {
        const std::vector<core::TrajectoryRecord> records = core::collect_trajectories(
            result.actor, reward, result.critic, pool, ppo, rng, n_threads);
        core::IterationDiagnostics diag =
            core::ppo_iteration(records, result.actor, result.critic, ppo, opt, opt, rng);
        diag.iteration = iter;

        json row{{"stage", 3},
                 {"iteration", iter},
                 {"mean_reward", diag.mean_reward},
                 {"mean_advantage", diag.mean_advantage},
                 {"mean_abs_advantage", diag.mean_abs_advantage},
                 {"policy_loss", diag.policy_loss},
                 {"value_loss", diag.value_loss},
                 {"entropy", diag.entropy},
                 {"kl", diag.kl},
                 {"max_score_gap", diag.max_score_gap},
                 {"policy_bound_ok", diag.policy_bound_ok}};
        const bool last = iter + 1 == ppo.n_iterations;
        if (!test_instances.empty() && config.stage3.eval_every > 0 &&
            ((iter + 1) % config.stage3.eval_every == 0 || last)) {
            const eval::MetricsRow test_row =
                eval::evaluate_model(result.actor, test_instances, n_threads);
            row["test_ndcg1"] = test_row.ndcg[0];
            row["test_ndcg3"] = test_row.ndcg[1];
            row["test_ndcg5"] = test_row.ndcg[2];
            row["test_ndcg10"] = test_row.ndcg[3];
            row["test_ndcg20"] = test_row.ndcg[4];
        }
        result.history.push_back(std::move(row));

        if (!checkpoint_path.empty() && config.stage3.checkpoint_every > 0 && !last &&
            (iter + 1) % config.stage3.checkpoint_every == 0) {
            save_checkpoint(checkpoint_path,
                            stage3_checkpoint(config, seed, result.actor, result.critic, iter + 1,
                                              rng.save_state(), false));
        }
    }
    return result;
}

void save_checkpoint(const std::string& path, const json& payload) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << payload.dump(2) << '\n';
}

json load_checkpoint(const std::string& path, const std::string& expect_stage,
                     std::optional<std::uint64_t> expect_hash) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint '" + path + "': " + e.what());
    }
    if (!j.is_object() || j.value("container", "") != "checkpoint-set") {
        throw DataError("checkpoint '" + path + "' is not a checkpoint-set container");
    }
    const std::string stage = j.value("stage", "");
    if (stage != expect_stage) {
        throw DataError("checkpoint '" + path + "' holds stage '" + stage + "', expected '" +
                        expect_stage + "'");
    }
    if (expect_hash.has_value() && j.value("config_hash", std::uint64_t{0}) != *expect_hash) {
        throw DataError("checkpoint '" + path + "' was produced under a different config; refusing");
    }
    return j;
}

namespace {

json checkpoint_base(const ExperimentConfig& config, std::uint64_t seed, const char* stage) {
    return json{{"container", "checkpoint-set"},
                {"version", 1},
                {"stage", stage},
                {"config_hash", config.config_hash()},
                {"seed", seed}};
}

}  // namespace

json stage1_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                       const models::ActorModel& actor) {
    json j = checkpoint_base(config, seed, "stage1");
    j["actor"] = models::actor_to_json(actor);
    return j;
}

json stage2_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                       const models::RewardModel& reward) {
    json j = checkpoint_base(config, seed, "stage2");
    j["reward"] = models::reward_to_json(reward);
    return j;
}

json stage3_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                       const models::ActorModel& actor, const models::CriticModel& critic,
                       std::size_t next_iteration, const std::string& rng_state, bool final) {
    json j = checkpoint_base(config, seed, "stage3");
    j["actor"] = models::actor_to_json(actor);
    j["critic"] = models::critic_to_json(critic);
    j["next_iteration"] = next_iteration;
    j["rng_state"] = rng_state;
    j["final"] = final;
    return j;
}

void write_history(const std::string& path, std::span<const json> rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write history: " + path);
    for (const json& row : rows) out << row.dump() << '\n';
}

void write_metrics_csv(const std::string& path, std::span<const eval::MetricsRow> rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics: " + path);
    out << eval::metrics_csv_header() << '\n';
    for (const eval::MetricsRow& row : rows) out << eval::metrics_csv_row(row) << '\n';
}

TrainAllResult train_all(const ExperimentConfig& config, std::uint64_t seed,
                         std::ostream& progress, std::size_t n_threads) {
    namespace fs = std::filesystem;
    const fs::path seed_dir = fs::path(config.out_dir) / ("seed" + std::to_string(seed));
    fs::create_directories(seed_dir);

    progress << "[seed " << seed << "] preparing data\n";
    PreparedData prepared = prepare_data(config, seed);

    progress << "[seed " << seed << "] stage 1: " << prepared.split.stage1.size()
             << " source instances\n";
    Stage1Result s1 = run_stage1(config, seed, prepared.split.stage1, prepared.feature_dim);
    save_checkpoint((seed_dir / "stage1.ckpt.json").string(),
                    stage1_checkpoint(config, seed, s1.actor));
    write_history((seed_dir / "history_stage1.jsonl").string(), s1.history);

    std::vector<data::PairSample> stage2_pairs = prepared.split.stage2_target;
    stage2_pairs.insert(stage2_pairs.end(), prepared.split.stage2_source.begin(),
                        prepared.split.stage2_source.end());
    eval::InstanceIndex train_index(prepared.split.stage1);
    train_index.add(prepared.split.train_target);

    progress << "[seed " << seed << "] stage 2: " << stage2_pairs.size() << " pairs ("
             << prepared.split.stage2_target.size() << " target + "
             << prepared.split.stage2_source.size() << " source-augmented)\n";
    Stage2Result s2 = run_stage2(config, seed, stage2_pairs, train_index, prepared.feature_dim);
    save_checkpoint((seed_dir / "stage2.ckpt.json").string(),
                    stage2_checkpoint(config, seed, s2.reward));
    write_history((seed_dir / "history_stage2.jsonl").string(), s2.history);

    eval::InstanceIndex target_index(prepared.split.train_target);
    const std::vector<core::PairContext> pool =
        resolve_pair_pool(prepared.split.stage3, target_index);
    progress << "[seed " << seed << "] stage 3: " << pool.size() << " unannotated pairs, "
             << config.stage3.ppo.n_iterations << " iterations\n";
    Stage3Result s3 =
        run_stage3(config, seed, s1.actor, s2.reward, pool, prepared.split.test, n_threads,
                   nullptr, (seed_dir / "stage3.partial.ckpt.json").string());
    save_checkpoint((seed_dir / "stage3.ckpt.json").string(),
                    stage3_checkpoint(config, seed, s3.actor, s3.critic,
                                      config.stage3.ppo.n_iterations, "", true));
    write_history((seed_dir / "history_stage3.jsonl").string(), s3.history);

    // Held-out reward accuracy: all unequal-grade pairs of the test split.
    std::optional<double> held_out_accuracy;
    if (!prepared.split.test.empty()) {
        const std::vector<data::PairSample> test_pairs =
            data::sample_pair_annotations(prepared.split.test, 1.0, mix_seed(seed, 0x7e57));
        if (!test_pairs.empty()) {
            held_out_accuracy =
                eval::reward_accuracy(s2.reward, test_pairs, prepared.split.test);
        }
    }

    TrainAllResult result;
    result.seed_dir = seed_dir.string();
    result.stage1_row = eval::evaluate_model(s1.actor, prepared.split.test, n_threads);
    result.stage1_row.split = "stage1";
    result.stage1_row.seed = seed;
    result.stage1_row.iteration = 0;
    result.final_row = eval::evaluate_model(s3.actor, prepared.split.test, n_threads);
    result.final_row.split = "final";
    result.final_row.seed = seed;
    result.final_row.iteration = config.stage3.ppo.n_iterations;
    result.final_row.reward_accuracy = held_out_accuracy;

    const std::vector<eval::MetricsRow> rows{result.stage1_row, result.final_row};
    write_metrics_csv((seed_dir / "metrics.csv").string(), rows);
    std::ofstream jsonl(seed_dir / "metrics.jsonl");
    for (const eval::MetricsRow& row : rows) jsonl << eval::metrics_row_json(row).dump() << '\n';

    progress << "[seed " << seed << "] stage1 ndcg5=" << result.stage1_row.ndcg[2]
             << " final ndcg5=" << result.final_row.ndcg[2] << "\n";
    return result;
}

}  // namespace lrppo::pipeline
