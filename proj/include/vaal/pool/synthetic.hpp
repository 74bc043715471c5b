#pragma once

#include "vaal/error.hpp"
#include "vaal/pool/dataset.hpp"
#include "vaal/rng.hpp"

#include <cstdint>

namespace vaal {

/// Gaussian-mixture classification data. Each class owns `clusters_per_class`
/// isotropic blobs with unit variance; blob centres are drawn from
/// N(0, center_scale^2 I). Optional superclasses group consecutive classes.
struct SyntheticSpec {
    int classes = 8;
    int dim = 32;
    int per_class = 250;       // train samples per class
    int test_per_class = 63;
    int clusters_per_class = 1;
    double center_scale = 1.0;
    int superclass_size = 0;   // 0 = no superclass map
    std::uint64_t seed = 0;
};

inline Dataset make_gaussian_mixture(const SyntheticSpec& spec) {
    if (spec.classes < 1 || spec.dim < 1 || spec.per_class < 1 || spec.test_per_class < 0 || spec.clusters_per_class < 1)
        throw ConfigError("synthetic: classes, dim, per_class and clusters_per_class must be positive");
    if (spec.superclass_size < 0) throw ConfigError("synthetic: superclass_size must be >= 0");

    Rng rng(spec.seed);
    const int clusters = spec.classes * spec.clusters_per_class;
    Matrix centers(clusters, spec.dim);
    for (Eigen::Index k = 0; k < centers.size(); ++k) centers.data()[k] = rng.normal(0.0, spec.center_scale);

    const std::size_t per_class_total = static_cast<std::size_t>(spec.per_class + spec.test_per_class);
    const std::size_t n = per_class_total * static_cast<std::size_t>(spec.classes);

    Dataset ds;
    ds.samples.resize(static_cast<Eigen::Index>(n), spec.dim);
    ds.shape = {static_cast<std::size_t>(spec.dim)};
    ds.class_count = spec.classes;
    ds.true_labels.resize(n);

    // Sample order is shuffled so class membership is not readable from the index.
    IndexList order(n);
    for (Index i = 0; i < n; ++i) order[i] = i;
    Rng order_rng = rng.split(1);
    order_rng.shuffle(order);

    Rng sample_rng = rng.split(2);
    std::size_t k = 0;
    for (int c = 0; c < spec.classes; ++c) {
        for (std::size_t s = 0; s < per_class_total; ++s, ++k) {
            const Index row = order[k];
            const int cluster = c * spec.clusters_per_class + static_cast<int>(sample_rng.below(static_cast<std::uint64_t>(spec.clusters_per_class)));
            for (int j = 0; j < spec.dim; ++j) {
                ds.samples(static_cast<Eigen::Index>(row), j) = centers(cluster, j) + sample_rng.normal();
            }
            ds.true_labels[row] = c;
            (s < static_cast<std::size_t>(spec.per_class) ? ds.split.train : ds.split.test).push_back(row);
        }
    }
    std::sort(ds.split.train.begin(), ds.split.train.end());
    std::sort(ds.split.test.begin(), ds.split.test.end());

    if (spec.superclass_size > 0) {
        std::vector<int> map(static_cast<std::size_t>(spec.classes));
        for (int c = 0; c < spec.classes; ++c) map[static_cast<std::size_t>(c)] = c / spec.superclass_size;
        ds.superclass_map = std::move(map);
    }
    for (int c = 0; c < spec.classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
    validate(ds);
    return ds;
}

}  // namespace vaal
