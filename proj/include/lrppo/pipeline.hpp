#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrppo/core.hpp"
#include "lrppo/data.hpp"
#include "lrppo/metrics.hpp"
#include "lrppo/models.hpp"

namespace lrppo::pipeline {

struct DataConfig {
    std::string mode = "synthetic";  // "synthetic" or "files"
    std::string source_path;
    std::string target_path;
    std::size_t n_source_instances = 60;
    std::size_t n_target_instances = 60;
    std::size_t items_per_instance = 20;
    std::size_t feature_dim = 16;
    std::optional<std::uint64_t> data_seed;  // default: derived from the run seed
    double stage3_pair_fraction = 0.40;
    double test_fraction = 0.20;
};

struct Stage1Config {
    std::size_t epochs = 15;
    double lr = 5e-3;  // desk-scale default; see README for paper-scale settings
    double beta = 0.3;
    std::size_t minibatch = 32;
    double weight_decay = 0.0;
    double validation_fraction = 0.1;
};

struct Stage2Config {
    std::size_t epochs = 15;
    double lr = 5e-3;
    double margin = 1.0;  // m_R
    double annotation_proportion = 0.10;
    std::size_t minibatch = 32;
    double weight_decay = 0.0;
};

struct Stage3Config {
    core::PPOConfig ppo;
    double lr = 1e-3;
    std::size_t eval_every = 10;       // 0 disables periodic test evaluation
    std::size_t checkpoint_every = 0;  // 0 disables mid-stage checkpoints
};

struct ExperimentConfig {
    DataConfig data;
    models::ModelConfig model;
    Stage1Config stage1;
    Stage2Config stage2;
    Stage3Config stage3;
    std::string out_dir = "out";
    std::vector<std::uint64_t> seeds = {0};

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // Stable across out_dir/seeds changes; checkpoints refuse to resume
    // under a different hash.
    std::uint64_t config_hash() const;
};

// Applies a `key.path=value` override onto a config JSON object, rejecting
// unknown keys or type mismatches before any work happens.
void apply_override(nlohmann::json& config, const std::string& key, const std::string& value);

struct PreparedData {
    std::vector<data::RankingInstance> source;
    std::vector<data::RankingInstance> target;
    data::DatasetSplit split;
    std::size_t feature_dim = 0;
};

PreparedData prepare_data(const ExperimentConfig& config, std::uint64_t seed);

struct Stage1Result {
    models::ActorModel actor;
    std::vector<nlohmann::json> history;
};

struct Stage2Result {
    models::RewardModel reward;
    std::vector<nlohmann::json> history;
};

struct Stage3Result {
    models::ActorModel actor;
    models::CriticModel critic;
    std::vector<nlohmann::json> history;
};

// Supervised regression of the actor on graded source items.
Stage1Result run_stage1(const ExperimentConfig& config, std::uint64_t seed,
                        std::span<const data::RankingInstance> instances,
                        std::size_t feature_dim);

// Margin training of the reward model on oriented pairs (annotated target
// plus source-augmented).
Stage2Result run_stage2(const ExperimentConfig& config, std::uint64_t seed,
                        std::span<const data::PairSample> pairs,
                        const eval::InstanceIndex& instances, std::size_t feature_dim);

// Optional resume point for stage 3.
struct Stage3Resume {
    models::ActorModel actor;
    models::CriticModel critic;
    std::size_t next_iteration = 0;
    std::string rng_state;
};

// Joint actor-critic optimisation against the frozen reward model. The
// test set is only used for periodic evaluation rows in the history.
Stage3Result run_stage3(const ExperimentConfig& config, std::uint64_t seed,
                        const models::ActorModel& initial_actor,
                        const models::RewardModel& reward,
                        std::span<const core::PairContext> pool,
                        std::span<const data::RankingInstance> test_instances,
                        std::size_t n_threads = 1,
                        const Stage3Resume* resume = nullptr,
                        const std::string& checkpoint_path = "");

std::vector<core::PairContext> resolve_pair_pool(std::span<const data::PairSample> pairs,
                                                 const eval::InstanceIndex& instances);

// Checkpoint-set container IO. `stage` is one of stage1|stage2|stage3 and
// is verified on load, as is the config hash when `expect_hash` is set.
void save_checkpoint(const std::string& path, const nlohmann::json& payload);
nlohmann::json load_checkpoint(const std::string& path, const std::string& expect_stage,
                               std::optional<std::uint64_t> expect_hash = std::nullopt);

nlohmann::json stage1_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                                 const models::ActorModel& actor);
nlohmann::json stage2_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                                 const models::RewardModel& reward);
nlohmann::json stage3_checkpoint(const ExperimentConfig& config, std::uint64_t seed,
                                 const models::ActorModel& actor,
                                 const models::CriticModel& critic, std::size_t next_iteration,
                                 const std::string& rng_state, bool final);

struct TrainAllResult {
    eval::MetricsRow stage1_row;
    eval::MetricsRow final_row;
    std::string seed_dir;
};

// Stages 1..3 end to end for one seed: checkpoints, history JSONL files and
// a metrics file with the stage-1 and final actors side by side.
TrainAllResult train_all(const ExperimentConfig& config, std::uint64_t seed,
                         std::ostream& progress, std::size_t n_threads = 1);

void write_history(const std::string& path, std::span<const nlohmann::json> rows);
void write_metrics_csv(const std::string& path, std::span<const eval::MetricsRow> rows);

}  // namespace lrppo::pipeline
