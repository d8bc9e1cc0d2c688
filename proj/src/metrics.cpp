#include "lrppo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

namespace lrppo::eval {

RankedList rank_by_scores(std::span<const double> scores, std::span<const int> grades) {
    if (scores.size() != grades.size()) throw DataError("rank_by_scores: length mismatch");
    RankedList ranked;
    ranked.grades.assign(grades.begin(), grades.end());
    ranked.order.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) ranked.order[i] = i;
    std::sort(ranked.order.begin(), ranked.order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;  // stable tie-break on original index
    });
    return ranked;
}

double dcg_at_k(std::span<const int> grades_in_ranked_order, std::size_t k) {
    if (k < 1) throw ConfigError("dcg_at_k: k must be >= 1");
    const std::size_t top = std::min(k, grades_in_ranked_order.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < top; ++i) {
        acc += (std::exp2(grades_in_ranked_order[i]) - 1.0) /
               std::log2(static_cast<double>(i) + 2.0);
    }
    return acc;
}

double ndcg_at_k(const RankedList& ranked, std::size_t k) {
    std::vector<int> in_rank_order(ranked.order.size());
    for (std::size_t i = 0; i < ranked.order.size(); ++i) {
        in_rank_order[i] = ranked.grades[ranked.order[i]];
    }
    std::vector<int> ideal = ranked.grades;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const double idcg = dcg_at_k(ideal, k);
    if (idcg == 0.0) return 1.0;  // all-zero grades: vacuously perfect
    return dcg_at_k(in_rank_order, k) / idcg;
}

std::string metrics_csv_header() {
    return "split,seed,iteration,ndcg1,ndcg3,ndcg5,ndcg10,ndcg20,reward_acc";
}

std::string metrics_csv_row(const MetricsRow& row) {
    std::ostringstream os;
    os << row.split << ',' << row.seed << ',' << row.iteration;
    for (double v : row.ndcg) os << ',' << format_double(v);
    os << ',';
    if (row.reward_accuracy.has_value()) os << format_double(*row.reward_accuracy);
    return os.str();
}

nlohmann::json metrics_row_json(const MetricsRow& row) {
    nlohmann::json j{{"split", row.split},   {"seed", row.seed},     {"iteration", row.iteration},
                     {"ndcg1", row.ndcg[0]}, {"ndcg3", row.ndcg[1]}, {"ndcg5", row.ndcg[2]},
                     {"ndcg10", row.ndcg[3]}, {"ndcg20", row.ndcg[4]}};
    if (row.reward_accuracy.has_value()) {
        j["reward_acc"] = *row.reward_accuracy;
    } else {
        j["reward_acc"] = nullptr;
    }
    return j;
}

namespace {

std::array<double, 5> instance_ndcg(const models::ActorModel& actor,
                                    const data::RankingInstance& instance) {
    std::vector<double> scores(instance.items.size());
    std::vector<int> grades(instance.items.size());
    for (std::size_t i = 0; i < instance.items.size(); ++i) {
        if (!instance.items[i].relevance.has_value()) {
            throw DataError("evaluate_model: ungraded item in instance '" + instance.instance_id +
                            "'");
        }
        scores[i] = actor.score(instance.items[i].features);
        grades[i] = *instance.items[i].relevance;
    }
    const RankedList ranked = rank_by_scores(scores, grades);
    std::array<double, 5> out{};
    for (std::size_t ki = 0; ki < kNdcgCutoffs.size(); ++ki) {
        out[ki] = ndcg_at_k(ranked, kNdcgCutoffs[ki]);
    }
    return out;
}

}  // namespace

MetricsRow evaluate_model(const models::ActorModel& actor,
                          std::span<const data::RankingInstance> instances,
                          std::size_t n_threads) {
    if (instances.empty()) throw DataError("evaluate_model: no instances");
    std::vector<std::array<double, 5>> per_instance(instances.size());

    auto worker = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            per_instance[i] = instance_ndcg(actor, instances[i]);
        }
    };
    if (n_threads <= 1 || instances.size() < 2) {
        worker(0, instances.size());
    } else {
        const std::size_t threads = std::min(n_threads, instances.size());
        const std::size_t chunk = (instances.size() + threads - 1) / threads;
        std::vector<std::thread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(begin + chunk, instances.size());
            if (begin >= end) break;
            workers.emplace_back(worker, begin, end);
        }
        for (std::thread& th : workers) th.join();
    }

    MetricsRow row;
    std::vector<double> column(instances.size());
    for (std::size_t ki = 0; ki < kNdcgCutoffs.size(); ++ki) {
        for (std::size_t i = 0; i < instances.size(); ++i) column[i] = per_instance[i][ki];
        row.ndcg[ki] = pairwise_sum(column) / static_cast<double>(instances.size());
    }
    return row;
}

ResolvedPair resolve_pair(const data::PairSample& pair, const data::RankingInstance& instance) {
    if (pair.preferred_index >= instance.items.size() ||
        pair.other_index >= instance.items.size() || pair.preferred_index == pair.other_index) {
        throw DataError("resolve_pair: invalid indices for instance '" + instance.instance_id + "'");
    }
    const auto& preferred = instance.items[pair.preferred_index].features;
    const auto& other = instance.items[pair.other_index].features;
    ResolvedPair resolved;
    resolved.ground_truth = models::PairState{preferred, other};
    if (pair.preferred_index < pair.other_index) {
        resolved.initial = models::PairState{preferred, other};
    } else {
        resolved.initial = models::PairState{other, preferred};
    }
    return resolved;
}

double reward_accuracy(const models::RewardModel& model,
                       std::span<const data::PairSample> pairs,
                       std::span<const data::RankingInstance> instances) {
    if (pairs.empty()) throw DataError("reward_accuracy: empty pair set");
    const InstanceIndex index(instances);
    std::size_t correct = 0;
    for (const data::PairSample& pair : pairs) {
        const ResolvedPair resolved = resolve_pair(pair, index.at(pair.instance_id));
        const double r_correct = models::reward_forward(model, resolved.initial,
                                                        resolved.ground_truth);
        const models::PairState flipped{resolved.ground_truth.second, resolved.ground_truth.first};
        const double r_flipped = models::reward_forward(model, resolved.initial, flipped);
        if (r_correct > r_flipped) ++correct;  // strict: ties are incorrect
    }
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

InstanceIndex::InstanceIndex(std::span<const data::RankingInstance> instances) { add(instances); }

void InstanceIndex::add(std::span<const data::RankingInstance> instances) {
    for (const data::RankingInstance& instance : instances) {
        entries_.emplace_back(instance.instance_id, &instance);
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
}

const data::RankingInstance& InstanceIndex::at(const std::string& id) const {
    const auto it = std::lower_bound(entries_.begin(), entries_.end(), id,
                                     [](const auto& e, const std::string& k) { return e.first < k; });
    if (it == entries_.end() || it->first != id) {
        throw DataError("unknown instance id '" + id + "'");
    }
    return *it->second;
}

}  // namespace lrppo::eval
