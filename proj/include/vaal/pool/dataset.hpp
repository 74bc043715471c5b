#pragma once

#include "vaal/error.hpp"
#include "vaal/matrix.hpp"

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace vaal {

using Index = std::size_t;
using IndexList = std::vector<Index>;

struct Split {
    IndexList train;
    IndexList validation;
    IndexList test;
};

/// Features are stored flattened, one row per sample; `shape` keeps the
/// per-sample layout (e.g. {3, 32, 32}) for consumers that care.
struct Dataset {
    Matrix samples;
    std::vector<std::size_t> shape;
    std::vector<int> true_labels;
    int class_count = 0;
    std::optional<std::vector<int>> superclass_map;
    std::vector<std::string> class_names;
    Split split;

    std::size_t size() const { return true_labels.size(); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(samples.cols()); }

    std::string class_name(int c) const {
        if (c >= 0 && static_cast<std::size_t>(c) < class_names.size()) return class_names[static_cast<std::size_t>(c)];
        return "class_" + std::to_string(c);
    }

    Matrix rows(const IndexList& indices) const { return gather_rows(samples, indices); }

    std::vector<int> labels(const IndexList& indices) const {
        std::vector<int> out;
        out.reserve(indices.size());
        for (Index i : indices) out.push_back(true_labels.at(i));
        return out;
    }
};

/// Throws ConfigError when a dataset breaks its structural invariants.
inline void validate(const Dataset& ds) {
    if (ds.class_count <= 0) throw ConfigError("dataset: class_count must be positive");
    if (static_cast<std::size_t>(ds.samples.rows()) != ds.true_labels.size())
        throw ConfigError("dataset: sample/label count mismatch");
    for (int y : ds.true_labels) {
        if (y < 0 || y >= ds.class_count) throw ConfigError("dataset: label out of range: " + std::to_string(y));
    }
    if (ds.superclass_map) {
        if (ds.superclass_map->size() != static_cast<std::size_t>(ds.class_count))
            throw ConfigError("dataset: superclass map must cover every class");
        for (int s : *ds.superclass_map) {
            if (s < 0) throw ConfigError("dataset: negative superclass id");
        }
    }
    std::vector<char> seen(ds.size(), 0);
    for (const IndexList* part : {&ds.split.train, &ds.split.validation, &ds.split.test}) {
        for (Index i : *part) {
            if (i >= ds.size()) throw ConfigError("dataset: split index out of range");
            if (seen[i]) throw ConfigError("dataset: split sets overlap at index " + std::to_string(i));
            seen[i] = 1;
        }
    }
}

}  // namespace vaal
