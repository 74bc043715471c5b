#pragma once

// Exhaustive k-center: best radius achievable by adding `b` candidates to
// the fixed centers, over every size-b subset.

#include "vaal/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace vaal::test_util {

/// max over candidates of the distance to the nearest of (centers + chosen).
inline double cover_radius(const Matrix& candidates, const Matrix& centers, const std::vector<std::size_t>& chosen) {
    double radius = 0.0;
    for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < centers.rows(); ++c) best = std::min(best, (candidates.row(i) - centers.row(c)).norm());
        for (std::size_t c : chosen) best = std::min(best, (candidates.row(i) - candidates.row(static_cast<Eigen::Index>(c))).norm());
        radius = std::max(radius, best);
    }
    return radius;
}

inline double optimal_cover_radius(const Matrix& candidates, const Matrix& centers, std::size_t b,
                                   std::vector<std::size_t>* best_subset = nullptr) {
    const auto n = static_cast<std::size_t>(candidates.rows());
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> subset;
    std::function<void(std::size_t)> rec = [&](std::size_t start) {
        if (subset.size() == b) {
            const double r = cover_radius(candidates, centers, subset);
            if (r < best) {
                best = r;
                if (best_subset) *best_subset = subset;
            }
            return;
        }
        for (std::size_t i = start; i < n; ++i) {
            subset.push_back(i);
            rec(i + 1);
            subset.pop_back();
        }
    };
    rec(0);
    return best;
}

}  // namespace vaal::test_util
