#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrppo/common.hpp"

namespace lrppo::data {

struct LabeledItem {
    std::string item_id;
    std::vector<double> features;
    std::optional<int> relevance;  // 0, 1 or 2 when present
};

// One query/clip: the unit a ranking is produced over.
struct RankingInstance {
    std::string instance_id;
    std::vector<LabeledItem> items;
};

// Ordered preference pair within one instance. For annotated pairs
// preferred_index carries the strictly higher grade; unannotated
// (stage 3) pairs are stored in dataset order and the names carry no
// preference meaning.
struct PairSample {
    std::string instance_id;
    std::size_t preferred_index = 0;
    std::size_t other_index = 0;
};

struct ParseResult {
    std::vector<RankingInstance> instances;
    std::size_t clamped_grades = 0;  // grades > 2 clamped to 2
};

// LETOR/SVMLight grammar: `<grade> qid:<id> <k>:<v> ... # comment`.
// Items are grouped by qid preserving file order; missing feature indices
// become 0.0 and the dense width is the maximum index seen in the file.
ParseResult parse_letor(std::istream& in);
ParseResult parse_letor_file(const std::string& path);

// Inverse of parse_letor up to float formatting; requires grades on every
// item. Feature vectors are written densely so the re-parsed width matches.
void serialize_letor(const std::vector<RankingInstance>& instances, std::ostream& out);
void serialize_letor_file(const std::vector<RankingInstance>& instances, const std::string& path);

enum class Domain { source, target };

struct SyntheticConfig {
    std::size_t n_instances = 60;
    std::size_t items_per_instance = 20;
    std::size_t feature_dim = 16;
    Domain domain = Domain::source;
    std::uint64_t seed = 0;
};

// Feature-vector ranking instances whose grades come from a latent linear
// score plus a pairwise feature interaction, thresholded per instance at
// the 50th/80th percentiles. The target domain rotates the latent weight
// vector and shifts feature marginals so a source-trained scorer degrades.
std::vector<RankingInstance> generate_synthetic(const SyntheticConfig& config);

// Keep the first target_count items, or duplicate cyclically (appending a
// prime per duplication round to the item id) until the count is reached.
RankingInstance pad_or_truncate(const RankingInstance& instance, std::size_t target_count);

// Per instance, draw ceil(proportion * C(n,2)) unordered pairs uniformly
// without replacement among unequal-grade pairs, oriented so
// preferred_index has the strictly higher grade. Selection is a prefix of
// a fixed per-instance permutation, so raising the proportion only adds
// pairs under a fixed seed.
std::vector<PairSample> sample_pair_annotations(const std::vector<RankingInstance>& instances,
                                                double proportion, std::uint64_t seed);

struct SplitConfig {
    double annotation_proportion = 0.10;
    double stage3_pair_fraction = 0.40;
    double test_fraction = 0.20;
    std::uint64_t seed = 0;
};

struct DatasetSplit {
    std::vector<RankingInstance> stage1;        // source instances, graded
    std::vector<RankingInstance> train_target;  // target instances used for pair sampling
    std::vector<RankingInstance> test;          // held-out target instances, graded
    std::vector<PairSample> stage2_target;      // annotated target pairs
    std::vector<PairSample> stage2_source;      // source-augmented pairs, same count
    std::vector<PairSample> stage3;             // unannotated pairs, dataset order
};

// Pure function of (inputs, config.seed). Test instances are carved from
// the target before any pair sampling. Throws DataError on overlapping
// instance ids between source and target.
DatasetSplit build_splits(const std::vector<RankingInstance>& source,
                          const std::vector<RankingInstance>& target, const SplitConfig& config);

nlohmann::json split_manifest(const DatasetSplit& split, const SplitConfig& config);

// Pairs in stage 3 and pair counts in tests need C(n,2) repeatedly.
inline std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }

}  // namespace lrppo::data
