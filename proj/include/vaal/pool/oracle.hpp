#pragma once

#include "vaal/error.hpp"
#include "vaal/pool/dataset.hpp"
#include "vaal/rng.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>

namespace vaal {

enum class OracleKind { Ideal, Noisy, External };

struct OracleConfig {
    OracleKind kind = OracleKind::Ideal;
    double noise_fraction = 0.0;  // fraction of the training set that is relabeled
    std::uint64_t rng_seed = 0;
};

inline std::string to_string(OracleKind k) {
    switch (k) {
        case OracleKind::Ideal: return "ideal";
        case OracleKind::Noisy: return "noisy";
        case OracleKind::External: return "external";
    }
    return "?";
}

inline OracleKind parse_oracle_kind(const std::string& s) {
    if (s == "ideal") return OracleKind::Ideal;
    if (s == "noisy") return OracleKind::Noisy;
    if (s == "external") return OracleKind::External;
    throw ConfigError("unknown oracle kind: " + s);
}

/// Simulated annotator. A noisy oracle corrupts a fixed, seeded subset of the
/// training indices once at construction: each member gets a wrong label drawn
/// uniformly from the other classes of its superclass. Repeated queries of the
/// same index therefore always agree.
class Oracle {
public:
    Oracle(const OracleConfig& cfg, const Dataset& ds) : cfg_(cfg), labels_(&ds.true_labels) {
        if (cfg.noise_fraction < 0.0 || cfg.noise_fraction > 1.0)
            throw ConfigError("oracle: noise_fraction must lie in [0, 1]");
        if (cfg.kind != OracleKind::Noisy || cfg.noise_fraction == 0.0) return;
        if (!ds.superclass_map) throw ConfigError("oracle: noisy oracle requires a superclass map");

        const auto& map = *ds.superclass_map;
        std::unordered_map<int, std::vector<int>> members;
        for (int c = 0; c < ds.class_count; ++c) members[map[static_cast<std::size_t>(c)]].push_back(c);

        const auto quota = static_cast<std::size_t>(std::llround(cfg.noise_fraction * static_cast<double>(ds.split.train.size())));
        Rng rng(cfg.rng_seed);
        IndexList chosen = sample_without_replacement(ds.split.train, quota, rng);
        std::sort(chosen.begin(), chosen.end());
        for (Index i : chosen) {
            const int truth = ds.true_labels[i];
            const auto& mates = members[map[static_cast<std::size_t>(truth)]];
            designated_.push_back(i);
            if (mates.size() < 2) {
                // nowhere to move the label inside its superclass
                ++passthrough_;
                continue;
            }
            std::vector<int> others;
            for (int c : mates) {
                if (c != truth) others.push_back(c);
            }
            Rng pick = rng.split(i);
            const int alt = others[pick.below(others.size())];
            noisy_[i] = alt;
        }
    }

    const OracleConfig& config() const { return cfg_; }

    /// Label the oracle reports for sample `index`.
    int label(Index index) const {
        if (cfg_.kind == OracleKind::External)
            throw ContractViolation("oracle: external oracle labels arrive through the labeling service");
        if (index >= labels_->size()) throw ContractViolation("oracle: index out of range: " + std::to_string(index));
        if (auto it = noisy_.find(index); it != noisy_.end()) return it->second;
        return (*labels_)[index];
    }

    /// Train indices selected for corruption, ascending (includes pass-through ones).
    const IndexList& designated() const { return designated_; }
    bool is_designated(Index i) const { return std::binary_search(designated_.begin(), designated_.end(), i); }

    /// Designated indices left untouched because their superclass has one member.
    std::size_t passthrough_count() const { return passthrough_; }

private:
    OracleConfig cfg_;
    const std::vector<int>* labels_;
    IndexList designated_;
    std::unordered_map<Index, int> noisy_;
    std::size_t passthrough_ = 0;
};

inline int oracle_label(Index index, const Oracle& oracle) { return oracle.label(index); }

}  // namespace vaal
