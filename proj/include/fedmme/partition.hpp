#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fedmme/dataset.hpp"

namespace fedmme {

struct PartitionConfig {
    std::size_t num_clients = 5;
    double alpha = 0.3;
    std::uint64_t seed = 0;

    bool operator==(const PartitionConfig&) const = default;
};

struct PartitionPlan {
    PartitionConfig config;
    std::vector<std::vector<std::size_t>> shards;        // indices into the source dataset
    std::vector<std::vector<std::size_t>> class_histogram;  // num_clients x num_classes

    std::vector<std::size_t> shard_sizes() const;

    bool operator==(const PartitionPlan&) const = default;
};

/// Per-class Dirichlet label-skew split.
///
/// For each class c in ascending order, the class's sample indices (ascending)
/// are shuffled with the stream Rng(derive_seed(seed, c)). From the same stream
/// N Gamma(alpha, 1) variates are drawn and normalized into proportions p, and
/// the shuffled list is cut at round(cumsum(p) * count_c); chunk i goes to
/// client i. Afterwards, while some shard is empty, the last index of the
/// largest shard (ties: lowest id) moves to the lowest-id empty shard.
PartitionPlan partition_dirichlet(const FeatureDataset& ds, const PartitionConfig& cfg);

/// Mean over clients of the total-variation distance between the client's
/// label distribution and the global one. In [0, 1].
double skew_statistic(const PartitionPlan& plan, const FeatureDataset& ds);

nlohmann::json to_json(const PartitionPlan& plan);
PartitionPlan partition_plan_from_json(const nlohmann::json& j, std::size_t num_classes,
                                       const std::vector<std::uint32_t>& labels);

} // namespace fedmme
