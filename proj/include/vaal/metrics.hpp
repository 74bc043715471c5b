#pragma once

#include "vaal/matrix.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace vaal {

/// Fraction of rows whose argmax equals the label.
inline double accuracy(const Matrix& probabilities, const std::vector<int>& labels) {
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
        Eigen::Index best;
        probabilities.row(r).maxCoeff(&best);
        if (best == labels[static_cast<std::size_t>(r)]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// ROC AUC of `positive` scores against `negative` ones (Mann-Whitney, ties count half).
inline double roc_auc(std::span<const double> positive, std::span<const double> negative) {
    if (positive.empty() || negative.empty()) return 0.5;
    std::vector<double> neg(negative.begin(), negative.end());
    std::sort(neg.begin(), neg.end());
    double wins = 0.0;
    for (double p : positive) {
        const auto lo = std::lower_bound(neg.begin(), neg.end(), p);
        const auto hi = std::upper_bound(lo, neg.end(), p);
        wins += static_cast<double>(lo - neg.begin()) + 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(positive.size()) * static_cast<double>(neg.size()));
}

}  // namespace vaal
