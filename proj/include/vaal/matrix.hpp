#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace vaal {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Gather rows of `source` in the given order.
inline Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = source.row(static_cast<Eigen::Index>(rows[r]));
    }
    return out;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace vaal
