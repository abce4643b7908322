#include "fedmme/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fedmme/errors.hpp"
#include "fedmme/rng.hpp"

namespace fedmme {

namespace {

std::vector<std::vector<std::size_t>> histogram(const std::vector<std::vector<std::size_t>>& shards,
                                                const std::vector<std::uint32_t>& labels, std::size_t num_classes) {
    std::vector<std::vector<std::size_t>> h(shards.size(), std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < shards.size(); ++i) {
        for (auto idx : shards[i]) ++h[i][labels.at(idx)];
    }
    return h;
}

void repair_empty_shards(std::vector<std::vector<std::size_t>>& shards) {
    for (;;) {
        auto empty = std::find_if(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); });
        if (empty == shards.end()) return;
        // max_element returns the first maximum, i.e. the lowest client id on ties.
        auto largest = std::max_element(shards.begin(), shards.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        if (largest->size() < 2) return;  // unreachable when n >= N
        empty->push_back(largest->back());
        largest->pop_back();
    }
}

} // namespace

std::vector<std::size_t> PartitionPlan::shard_sizes() const {
    std::vector<std::size_t> sizes;
    sizes.reserve(shards.size());
    for (const auto& s : shards) sizes.push_back(s.size());
    return sizes;
}

PartitionPlan partition_dirichlet(const FeatureDataset& ds, const PartitionConfig& cfg) {
    if (cfg.num_clients < 1) throw Error(ErrorCode::InvalidConfig, "num_clients must be >= 1");
    if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) throw Error(ErrorCode::InvalidConfig, "alpha must be > 0");
    if (ds.size() < cfg.num_clients) {
        throw Error(ErrorCode::TooFewSamples, std::to_string(ds.size()) + " samples for " +
                                                  std::to_string(cfg.num_clients) + " clients");
    }

    const std::size_t nc = cfg.num_clients;
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        if (by_class[c].empty()) throw Error(ErrorCode::MissingClass, "class " + std::to_string(c) + " has no samples");
    }

    PartitionPlan plan;
    plan.config = cfg;
    plan.shards.assign(nc, {});

    std::vector<double> props(nc);
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
        auto& members = by_class[c];
        Rng rng(derive_seed(cfg.seed, c));
        rng.shuffle(std::span<std::size_t>(members));

        double total = 0.0;
        for (auto& p : props) total += (p = rng.gamma(cfg.alpha));
        if (!(total > 0.0)) {
            // every variate underflowed; fall back to an even split
            std::fill(props.begin(), props.end(), 1.0);
            total = static_cast<double>(nc);
        }

        const auto count = static_cast<double>(members.size());
        double cumulative = 0.0;
        std::size_t start = 0;
        for (std::size_t i = 0; i < nc; ++i) {
            cumulative += props[i] / total;
            std::size_t stop = i + 1 == nc ? members.size() : static_cast<std::size_t>(std::llround(cumulative * count));
            stop = std::clamp(stop, start, members.size());
            plan.shards[i].insert(plan.shards[i].end(), members.begin() + static_cast<std::ptrdiff_t>(start),
                                  members.begin() + static_cast<std::ptrdiff_t>(stop));
            start = stop;
        }
    }

    repair_empty_shards(plan.shards);
    plan.class_histogram = histogram(plan.shards, ds.labels, ds.num_classes);
    return plan;
}

double skew_statistic(const PartitionPlan& plan, const FeatureDataset& ds) {
    const std::size_t n = ds.size();
    std::vector<char> seen(n, 0);
    std::size_t covered = 0;
    for (const auto& shard : plan.shards) {
        for (auto idx : shard) {
            if (idx >= n || seen[idx]) throw Error(ErrorCode::PlanDatasetMismatch, "shard index invalid or repeated");
            seen[idx] = 1;
            ++covered;
        }
    }
    if (covered != n || plan.shards.empty()) throw Error(ErrorCode::PlanDatasetMismatch, "plan does not cover dataset");
    if (plan.class_histogram.size() != plan.shards.size() ||
        plan.class_histogram != histogram(plan.shards, ds.labels, ds.num_classes)) {
        throw Error(ErrorCode::PlanDatasetMismatch, "class histogram disagrees with dataset labels");
    }

    const auto global = class_counts(ds);
    double sum_tv = 0.0;
    for (std::size_t i = 0; i < plan.shards.size(); ++i) {
        const auto size = static_cast<double>(plan.shards[i].size());
        double tv = 0.0;
        for (std::size_t c = 0; c < ds.num_classes; ++c) {
            tv += std::abs(static_cast<double>(plan.class_histogram[i][c]) / size -
                           static_cast<double>(global[c]) / static_cast<double>(n));
        }
        sum_tv += 0.5 * tv;
    }
    return sum_tv / static_cast<double>(plan.shards.size());
}

nlohmann::json to_json(const PartitionPlan& plan) {
    return {
        {"config", {{"num_clients", plan.config.num_clients}, {"alpha", plan.config.alpha}, {"seed", plan.config.seed}}},
        {"shards", plan.shards},
        {"class_histogram", plan.class_histogram},
    };
}

PartitionPlan partition_plan_from_json(const nlohmann::json& j, std::size_t num_classes,
                                       const std::vector<std::uint32_t>& labels) {
    PartitionPlan plan;
    try {
        const auto& cfg = j.at("config");
        plan.config.num_clients = cfg.at("num_clients").get<std::size_t>();
        plan.config.alpha = cfg.at("alpha").get<double>();
        plan.config.seed = cfg.at("seed").get<std::uint64_t>();
        plan.shards = j.at("shards").get<std::vector<std::vector<std::size_t>>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::PlanDatasetMismatch, std::string("malformed plan JSON: ") + e.what());
    }
    for (const auto& s : plan.shards) {
        for (auto idx : s) {
            if (idx >= labels.size()) throw Error(ErrorCode::PlanDatasetMismatch, "shard index out of range");
        }
    }
    plan.class_histogram = histogram(plan.shards, labels, num_classes);
    return plan;
}

} // namespace fedmme
