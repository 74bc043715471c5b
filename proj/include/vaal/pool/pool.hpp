#pragma once

#include "vaal/error.hpp"
#include "vaal/pool/dataset.hpp"
#include "vaal/pool/oracle.hpp"
#include "vaal/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vaal {

/// Labeled/unlabeled partition of the training indices. Both index sets are
/// kept sorted ascending.
struct PoolState {
    IndexList labeled;
    IndexList unlabeled;
    std::map<Index, int> acquired_labels;
    int round = 0;
    std::vector<int> excluded_classes;  // classes withheld from the initial pool

    friend bool operator==(const PoolState&, const PoolState&) = default;
};

struct BiasConfig {
    int excluded_class_count = 0;
    std::uint64_t rng_seed = 0;
};

/// Initial labeled pool of round(initial_fraction * |train|) samples drawn
/// uniformly at random; with a bias config, `m` random classes are kept out of
/// it entirely. Initial labels come from `oracle` when given, else the truth.
inline PoolState init_pools(const Dataset& ds, double initial_fraction, const std::optional<BiasConfig>& bias,
                            std::uint64_t seed, const Oracle* oracle = nullptr) {
    if (!(initial_fraction > 0.0 && initial_fraction < 1.0))
        throw ConfigError("init_pools: initial_fraction must lie in (0, 1)");
    const IndexList& train = ds.split.train;
    const auto quota = static_cast<std::size_t>(std::llround(initial_fraction * static_cast<double>(train.size())));

    PoolState pool;
    IndexList eligible = train;
    if (bias) {
        const int m = bias->excluded_class_count;
        if (m < 0 || m > ds.class_count) throw ConfigError("init_pools: excluded class count out of range");
        std::vector<int> classes(static_cast<std::size_t>(ds.class_count));
        for (int c = 0; c < ds.class_count; ++c) classes[static_cast<std::size_t>(c)] = c;
        Rng bias_rng(bias->rng_seed);
        pool.excluded_classes = sample_without_replacement(classes, static_cast<std::size_t>(m), bias_rng);
        std::sort(pool.excluded_classes.begin(), pool.excluded_classes.end());
        std::erase_if(eligible, [&](Index i) {
            return std::binary_search(pool.excluded_classes.begin(), pool.excluded_classes.end(), ds.true_labels[i]);
        });
    }
    if (eligible.size() < quota || quota == 0)
        throw ConfigError("init_pools: " + std::to_string(eligible.size()) + " eligible samples cannot fill an initial pool of " +
                          std::to_string(quota));

    Rng rng(seed);
    pool.labeled = sample_without_replacement(eligible, quota, rng);
    std::sort(pool.labeled.begin(), pool.labeled.end());
    std::set_difference(train.begin(), train.end(), pool.labeled.begin(), pool.labeled.end(),
                        std::back_inserter(pool.unlabeled));
    for (Index i : pool.labeled) pool.acquired_labels[i] = oracle ? oracle->label(i) : ds.true_labels[i];
    return pool;
}

/// Moves `labels` (index, class) from the unlabeled to the labeled pool and
/// advances the round.
inline PoolState annotate_with_labels(const PoolState& pool, const std::vector<std::pair<Index, int>>& labels,
                                      int class_count) {
    if (labels.empty()) throw ContractViolation("annotate: empty batch");
    IndexList selected;
    selected.reserve(labels.size());
    for (const auto& [i, y] : labels) {
        if (y < 0 || y >= class_count) throw ContractViolation("annotate: class out of range for index " + std::to_string(i));
        selected.push_back(i);
    }
    std::sort(selected.begin(), selected.end());
    if (std::adjacent_find(selected.begin(), selected.end()) != selected.end())
        throw ContractViolation("annotate: duplicate index in batch");
    for (Index i : selected) {
        if (!std::binary_search(pool.unlabeled.begin(), pool.unlabeled.end(), i))
            throw ContractViolation("annotate: index " + std::to_string(i) + " is not in the unlabeled pool");
    }

    PoolState next = pool;
    next.unlabeled.clear();
    std::set_difference(pool.unlabeled.begin(), pool.unlabeled.end(), selected.begin(), selected.end(),
                        std::back_inserter(next.unlabeled));
    next.labeled.clear();
    std::merge(pool.labeled.begin(), pool.labeled.end(), selected.begin(), selected.end(), std::back_inserter(next.labeled));
    for (const auto& [i, y] : labels) next.acquired_labels[i] = y;
    ++next.round;
    return next;
}

inline PoolState annotate(const PoolState& pool, const IndexList& selected, const Oracle& oracle, const Dataset& ds) {
    std::vector<std::pair<Index, int>> labels;
    labels.reserve(selected.size());
    for (Index i : selected) {
        if (i >= ds.size()) throw ContractViolation("annotate: index out of range: " + std::to_string(i));
        labels.emplace_back(i, oracle.label(i));
    }
    return annotate_with_labels(pool, labels, ds.class_count);
}

/// Exhaustive partition audit; returns an empty string when every invariant holds.
inline std::string audit_partition(const PoolState& pool, const Dataset& ds) {
    if (!std::is_sorted(pool.labeled.begin(), pool.labeled.end())) return "labeled not sorted";
    if (!std::is_sorted(pool.unlabeled.begin(), pool.unlabeled.end())) return "unlabeled not sorted";
    IndexList all;
    std::merge(pool.labeled.begin(), pool.labeled.end(), pool.unlabeled.begin(), pool.unlabeled.end(), std::back_inserter(all));
    if (std::adjacent_find(all.begin(), all.end()) != all.end()) return "labeled and unlabeled overlap";
    IndexList train = ds.split.train;
    std::sort(train.begin(), train.end());
    if (all != train) return "pools do not cover the training split";
    if (pool.acquired_labels.size() != pool.labeled.size()) return "acquired labels do not match labeled pool";
    for (Index i : pool.labeled) {
        if (!pool.acquired_labels.contains(i)) return "missing acquired label for " + std::to_string(i);
    }
    return {};
}

inline nlohmann::json pool_to_json(const PoolState& pool) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& [i, y] : pool.acquired_labels) labels.push_back({i, y});
    return {{"round", pool.round}, {"labeled", pool.labeled}, {"acquired_labels", labels}};
}

/// Snapshot export; `train` restores the unlabeled complement on import.
inline PoolState pool_from_json(const nlohmann::json& j, const IndexList& train) {
    PoolState pool;
    pool.round = j.at("round").get<int>();
    pool.labeled = j.at("labeled").get<IndexList>();
    std::sort(pool.labeled.begin(), pool.labeled.end());
    for (const auto& pair : j.at("acquired_labels")) pool.acquired_labels[pair.at(0).get<Index>()] = pair.at(1).get<int>();
    IndexList sorted_train = train;
    std::sort(sorted_train.begin(), sorted_train.end());
    std::set_difference(sorted_train.begin(), sorted_train.end(), pool.labeled.begin(), pool.labeled.end(),
                        std::back_inserter(pool.unlabeled));
    return pool;
}

}  // namespace vaal
