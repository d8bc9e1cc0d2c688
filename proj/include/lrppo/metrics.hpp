#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrppo/data.hpp"
#include "lrppo/models.hpp"

namespace lrppo::eval {

inline constexpr std::array<std::size_t, 5> kNdcgCutoffs{1, 3, 5, 10, 20};

// Ranking of one instance: a permutation of 0..n-1 by descending predicted
// score, ties broken by ascending original index.
struct RankedList {
    std::vector<std::size_t> order;
    std::vector<int> grades;  // indexed by original item index
};

RankedList rank_by_scores(std::span<const double> scores, std::span<const int> grades);

double dcg_at_k(std::span<const int> grades_in_ranked_order, std::size_t k);

// DCG / IDCG; all-zero grades score 1.0 by convention.
double ndcg_at_k(const RankedList& ranked, std::size_t k);

struct MetricsRow {
    std::string split;
    std::uint64_t seed = 0;
    std::size_t iteration = 0;
    std::array<double, 5> ndcg{};  // at kNdcgCutoffs
    std::optional<double> reward_accuracy;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);
nlohmann::json metrics_row_json(const MetricsRow& row);

// Mean NDCG@k over instances (uniform weights, pairwise-summed so parallel
// evaluation aggregates identically for any thread count).
MetricsRow evaluate_model(const models::ActorModel& actor,
                          std::span<const data::RankingInstance> instances,
                          std::size_t n_threads = 1);

// Fraction of pairs ranked correctly by the reward model, judged against
// the flipped candidate; ties count as incorrect.
double reward_accuracy(const models::RewardModel& model,
                       std::span<const data::PairSample> pairs,
                       std::span<const data::RankingInstance> instances);

// Resolves a pair sample against its instance: (initial pair in dataset
// order, ground-truth-ordered pair). Shared by training and evaluation.
struct ResolvedPair {
    models::PairState initial;        // dataset order
    models::PairState ground_truth;   // preferred first
};
ResolvedPair resolve_pair(const data::PairSample& pair, const data::RankingInstance& instance);

// instance_id -> instance lookup helper.
class InstanceIndex {
public:
    explicit InstanceIndex(std::span<const data::RankingInstance> instances);
    void add(std::span<const data::RankingInstance> instances);
    const data::RankingInstance& at(const std::string& id) const;

private:
    std::vector<std::pair<std::string, const data::RankingInstance*>> entries_;
};

}  // namespace lrppo::eval
