// Command-line harness for the label-relevance ranking pipeline: data
// generation, the three training stages, evaluation and the two ablation
// grids. Machine-readable output goes to files; stdout is progress only.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lrppo/checkpoint.hpp"
#include "lrppo/core.hpp"
#include "lrppo/data.hpp"
#include "lrppo/metrics.hpp"
#include "lrppo/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lrppo;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::size_t threads = 1;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Experiment config JSON file");
    cmd->add_option("--seed", args.seeds, "Run seed (repeatable)");
    cmd->add_option("--out", args.out_dir, "Output directory (overrides config out_dir)");
    cmd->add_option("--threads", args.threads, "Evaluation/collection threads")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--set", args.overrides, "Config override key=value (repeatable)");
}

pipeline::ExperimentConfig load_config(const CommonArgs& args) {
    json j = pipeline::ExperimentConfig{}.to_json();
    if (!args.config_path.empty()) {
        std::ifstream in(args.config_path);
        if (!in) throw ConfigError("cannot open config file: " + args.config_path);
        json file_config;
        try {
            in >> file_config;
        } catch (const json::exception& e) {
            throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
        }
        // Validate the file's keys by parsing it on its own first.
        (void)pipeline::ExperimentConfig::from_json(file_config);
        j.merge_patch(file_config);
    }
    for (const std::string& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        pipeline::apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
    }
    pipeline::ExperimentConfig config = pipeline::ExperimentConfig::from_json(j);
    if (!args.out_dir.empty()) config.out_dir = args.out_dir;
    if (!args.seeds.empty()) config.seeds = args.seeds;
    return config;
}

// Records the resolved config next to the artifacts for provenance.
void write_manifest(const pipeline::ExperimentConfig& config, const std::string& command,
                    const CommonArgs& args) {
    fs::create_directories(config.out_dir);
    json manifest{{"command", command},
                  {"config", config.to_json()},
                  {"config_hash", config.config_hash()},
                  {"overrides", args.overrides}};
    std::ofstream out(fs::path(config.out_dir) / (command + ".manifest.json"));
    out << manifest.dump(2) << '\n';
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in '" + path + "': " + e.what());
    }
    return j;
}

int cmd_gen_data(const CommonArgs& args) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "gen-data", args);
    const std::uint64_t seed = config.seeds.front();
    pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);

    data::serialize_letor_file(prepared.source, (fs::path(config.out_dir) / "source.letor").string());
    data::serialize_letor_file(prepared.target, (fs::path(config.out_dir) / "target.letor").string());

    data::SplitConfig split_config;
    split_config.annotation_proportion = config.stage2.annotation_proportion;
    split_config.stage3_pair_fraction = config.data.stage3_pair_fraction;
    split_config.test_fraction = config.data.test_fraction;
    split_config.seed = mix_seed(seed, 0x5317);
    std::ofstream manifest(fs::path(config.out_dir) / "manifest.json");
    manifest << data::split_manifest(prepared.split, split_config).dump(2) << '\n';

    std::cout << "wrote " << config.out_dir << "/source.letor (" << prepared.source.size()
              << " instances), target.letor (" << prepared.target.size()
              << " instances), manifest.json\n";
    return 0;
}

int cmd_train_all(const CommonArgs& args) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "train-all", args);
    for (const std::uint64_t seed : config.seeds) {
        pipeline::train_all(config, seed, std::cout, args.threads);
    }
    return 0;
}

int cmd_train_stage1(const CommonArgs& args) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "train-stage1", args);
    for (const std::uint64_t seed : config.seeds) {
        const fs::path seed_dir = fs::path(config.out_dir) / ("seed" + std::to_string(seed));
        fs::create_directories(seed_dir);
        pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);
        std::cout << "[seed " << seed << "] stage 1 on " << prepared.split.stage1.size()
                  << " instances\n";
        pipeline::Stage1Result s1 =
            pipeline::run_stage1(config, seed, prepared.split.stage1, prepared.feature_dim);
        pipeline::save_checkpoint((seed_dir / "stage1.ckpt.json").string(),
                                  pipeline::stage1_checkpoint(config, seed, s1.actor));
        pipeline::write_history((seed_dir / "history_stage1.jsonl").string(), s1.history);
    }
    return 0;
}

int cmd_train_stage2(const CommonArgs& args) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "train-stage2", args);
    for (const std::uint64_t seed : config.seeds) {
        const fs::path seed_dir = fs::path(config.out_dir) / ("seed" + std::to_string(seed));
        fs::create_directories(seed_dir);
        pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);
        std::vector<data::PairSample> pairs = prepared.split.stage2_target;
        pairs.insert(pairs.end(), prepared.split.stage2_source.begin(),
                     prepared.split.stage2_source.end());
        eval::InstanceIndex index(prepared.split.stage1);
        index.add(prepared.split.train_target);
        std::cout << "[seed " << seed << "] stage 2 on " << pairs.size() << " pairs\n";
        pipeline::Stage2Result s2 =
            pipeline::run_stage2(config, seed, pairs, index, prepared.feature_dim);
        pipeline::save_checkpoint((seed_dir / "stage2.ckpt.json").string(),
                                  pipeline::stage2_checkpoint(config, seed, s2.reward));
        pipeline::write_history((seed_dir / "history_stage2.jsonl").string(), s2.history);
    }
    return 0;
}

int cmd_train_stage3(const CommonArgs& args, const std::string& resume_path) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "train-stage3", args);
    for (const std::uint64_t seed : config.seeds) {
        const fs::path seed_dir = fs::path(config.out_dir) / ("seed" + std::to_string(seed));
        const std::string stage1_path = (seed_dir / "stage1.ckpt.json").string();
        const std::string stage2_path = (seed_dir / "stage2.ckpt.json").string();
        if (!fs::exists(stage1_path) || !fs::exists(stage2_path)) {
            throw DataError("train-stage3 requires stage1 and stage2 checkpoints under " +
                            seed_dir.string());
        }
        const json j1 = pipeline::load_checkpoint(stage1_path, "stage1");
        const json j2 = pipeline::load_checkpoint(stage2_path, "stage2");
        const models::ActorModel actor = models::actor_from_json(j1.at("actor"));
        const models::RewardModel reward = models::reward_from_json(j2.at("reward"));

        pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);
        eval::InstanceIndex target_index(prepared.split.train_target);
        const std::vector<core::PairContext> pool =
            pipeline::resolve_pair_pool(prepared.split.stage3, target_index);

        pipeline::Stage3Resume resume;
        const pipeline::Stage3Resume* resume_ptr = nullptr;
        if (!resume_path.empty()) {
            const json jr =
                pipeline::load_checkpoint(resume_path, "stage3", config.config_hash());
            resume.actor = models::actor_from_json(jr.at("actor"));
            resume.critic = models::critic_from_json(jr.at("critic"));
            resume.next_iteration = jr.at("next_iteration").get<std::size_t>();
            resume.rng_state = jr.at("rng_state").get<std::string>();
            resume_ptr = &resume;
            std::cout << "[seed " << seed << "] resuming stage 3 at iteration "
                      << resume.next_iteration << "\n";
        }

        std::cout << "[seed " << seed << "] stage 3 on " << pool.size() << " pairs\n";
        pipeline::Stage3Result s3 = pipeline::run_stage3(
            config, seed, actor, reward, pool, prepared.split.test, args.threads, resume_ptr,
            (seed_dir / "stage3.partial.ckpt.json").string());
        pipeline::save_checkpoint(
            (seed_dir / "stage3.ckpt.json").string(),
            pipeline::stage3_checkpoint(config, seed, s3.actor, s3.critic,
                                        config.stage3.ppo.n_iterations, "", true));
        pipeline::write_history((seed_dir / "history_stage3.jsonl").string(), s3.history);
    }
    return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint_path) {
    pipeline::ExperimentConfig config = load_config(args);
    const std::uint64_t seed = config.seeds.front();
    pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);

    const json j = read_json_file(checkpoint_path);
    models::ActorModel actor;
    if (j.value("container", "") == "checkpoint-set") {
        if (!j.contains("actor")) {
            throw DataError("checkpoint '" + checkpoint_path + "' (stage '" +
                            j.value("stage", "?") + "') holds no actor");
        }
        actor = models::actor_from_json(j.at("actor"));
    } else {
        actor = models::actor_from_json(j);
    }

    eval::MetricsRow row = eval::evaluate_model(actor, prepared.split.test, args.threads);
    row.split = "evaluate";
    row.seed = seed;
    fs::create_directories(config.out_dir);
    const std::vector<eval::MetricsRow> rows{row};
    pipeline::write_metrics_csv((fs::path(config.out_dir) / "evaluate.csv").string(), rows);
    std::cout << eval::metrics_csv_header() << "\n" << eval::metrics_csv_row(row) << "\n";
    return 0;
}

int cmd_ablate_ratio(const CommonArgs& args) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "ablate-ratio", args);
    const std::uint64_t seed = config.seeds.front();

    pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);
    pipeline::Stage1Result s1 =
        pipeline::run_stage1(config, seed, prepared.split.stage1, prepared.feature_dim);
    std::vector<data::PairSample> pairs = prepared.split.stage2_target;
    pairs.insert(pairs.end(), prepared.split.stage2_source.begin(),
                 prepared.split.stage2_source.end());
    eval::InstanceIndex index(prepared.split.stage1);
    index.add(prepared.split.train_target);
    pipeline::Stage2Result s2 =
        pipeline::run_stage2(config, seed, pairs, index, prepared.feature_dim);
    eval::InstanceIndex target_index(prepared.split.train_target);
    const std::vector<core::PairContext> pool =
        pipeline::resolve_pair_pool(prepared.split.stage3, target_index);

    const eval::MetricsRow base = eval::evaluate_model(s1.actor, prepared.split.test, args.threads);
    std::cout << "stage-1 baseline ndcg5=" << base.ndcg[2] << "\n";

    const std::pair<const char*, core::RatioMode> modes[] = {
        {"partial_order", core::RatioMode::partial_order},
        {"original", core::RatioMode::original},
        {"original_clipped", core::RatioMode::original_clipped},
    };
    for (const auto& [name, mode] : modes) {
        pipeline::ExperimentConfig variant = config;
        variant.stage3.ppo.ratio_mode = mode;
        variant.stage3.eval_every = 1;  // per-iteration NDCG curves
        variant.stage3.checkpoint_every = 0;
        std::cout << "ratio_mode=" << name << ": " << variant.stage3.ppo.n_iterations
                  << " iterations\n";
        std::string error;
        std::vector<json> history;
        try {
            pipeline::Stage3Result s3 =
                pipeline::run_stage3(variant, seed, s1.actor, s2.reward, pool,
                                     prepared.split.test, args.threads);
            history = std::move(s3.history);
        } catch (const NumericError& e) {
            // The original-ratio modes may legitimately diverge; keep the
            // curve collected so far and record why it stops.
            error = e.what();
            std::cout << "  aborted: " << error << "\n";
        }
        for (json& row : history) row["ratio_mode"] = name;
        if (!error.empty()) {
            history.push_back(json{{"ratio_mode", name}, {"aborted", error}});
        }
        pipeline::write_history(
            (fs::path(config.out_dir) / ("ratio_" + std::string(name) + ".jsonl")).string(),
            history);
    }
    return 0;
}

int cmd_ablate_annotation(const CommonArgs& args) {
    pipeline::ExperimentConfig config = load_config(args);
    write_manifest(config, "ablate-annotation", args);
    fs::create_directories(config.out_dir);

    const double proportions[] = {0.05, 0.10, 0.20, 0.40};
    std::ofstream grid(fs::path(config.out_dir) / "annotation_grid.csv");
    grid << "proportion,seed,reward_acc,ndcg1,ndcg3,ndcg5,ndcg10,ndcg20\n";

    for (const std::uint64_t seed : config.seeds) {
        pipeline::PreparedData prepared = pipeline::prepare_data(config, seed);
        pipeline::Stage1Result s1 =
            pipeline::run_stage1(config, seed, prepared.split.stage1, prepared.feature_dim);

        // Proportion 0: the stage-1 actor evaluated directly, no reward model.
        const eval::MetricsRow base =
            eval::evaluate_model(s1.actor, prepared.split.test, args.threads);
        grid << "0," << seed << ",";
        for (double v : base.ndcg) grid << ',' << format_double(v);
        grid << '\n';
        std::cout << "[seed " << seed << "] proportion 0%: stage-1 ndcg5=" << base.ndcg[2] << "\n";

        for (const double proportion : proportions) {
            pipeline::ExperimentConfig variant = config;
            variant.stage2.annotation_proportion = proportion;
            pipeline::PreparedData vdata = pipeline::prepare_data(variant, seed);
            std::vector<data::PairSample> pairs = vdata.split.stage2_target;
            pairs.insert(pairs.end(), vdata.split.stage2_source.begin(),
                         vdata.split.stage2_source.end());
            eval::InstanceIndex index(vdata.split.stage1);
            index.add(vdata.split.train_target);
            pipeline::Stage2Result s2 =
                pipeline::run_stage2(variant, seed, pairs, index, vdata.feature_dim);

            const std::vector<data::PairSample> test_pairs =
                data::sample_pair_annotations(vdata.split.test, 1.0, mix_seed(seed, 0x7e57));
            const double acc = eval::reward_accuracy(s2.reward, test_pairs, vdata.split.test);

            eval::InstanceIndex target_index(vdata.split.train_target);
            const std::vector<core::PairContext> pool =
                pipeline::resolve_pair_pool(vdata.split.stage3, target_index);
            pipeline::Stage3Result s3 = pipeline::run_stage3(
                variant, seed, s1.actor, s2.reward, pool, vdata.split.test, args.threads);
            const eval::MetricsRow row =
                eval::evaluate_model(s3.actor, vdata.split.test, args.threads);

            grid << format_double(proportion) << ',' << seed << ',' << format_double(acc);
            for (double v : row.ndcg) grid << ',' << format_double(v);
            grid << '\n';
            std::cout << "[seed " << seed << "] proportion " << proportion
                      << ": reward_acc=" << acc << " ndcg5=" << row.ndcg[2] << "\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Label relevance ranking: three-stage preference-reward PPO pipeline"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string resume_path;
    std::string checkpoint_path;

    CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic LETOR files and manifest");
    add_common(gen, args);
    CLI::App* s1 = app.add_subcommand("train-stage1", "Train the base relevance scorer");
    add_common(s1, args);
    CLI::App* s2 = app.add_subcommand("train-stage2", "Train the pairwise reward model");
    add_common(s2, args);
    CLI::App* s3 = app.add_subcommand("train-stage3", "Joint actor-critic optimisation");
    add_common(s3, args);
    s3->add_option("--resume", resume_path, "stage3 partial checkpoint to resume from");
    CLI::App* all = app.add_subcommand("train-all", "Run stages 1-3 and emit final metrics");
    add_common(all, args);
    CLI::App* ev = app.add_subcommand("evaluate", "Evaluate an actor checkpoint on the test split");
    add_common(ev, args);
    ev->add_option("--checkpoint", checkpoint_path, "actor or stage checkpoint JSON")->required();
    CLI::App* ar = app.add_subcommand("ablate-ratio", "Stage 3 once per policy-ratio mode");
    add_common(ar, args);
    CLI::App* aa = app.add_subcommand("ablate-annotation",
                                      "Stage 2+3 sweep over annotation proportions");
    add_common(aa, args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (s1->parsed()) return cmd_train_stage1(args);
        if (s2->parsed()) return cmd_train_stage2(args);
        if (s3->parsed()) return cmd_train_stage3(args, resume_path);
        if (all->parsed()) return cmd_train_all(args);
        if (ev->parsed()) return cmd_evaluate(args, checkpoint_path);
        if (ar->parsed()) return cmd_ablate_ratio(args);
        if (aa->parsed()) return cmd_ablate_annotation(args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
