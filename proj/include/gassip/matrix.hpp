#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <vector>

namespace gassip {

// Row-major so that per-node rows are contiguous for gathers and message passing.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using NodeId = std::int32_t;
using IndexList = std::vector<NodeId>;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline Matrix column(const std::vector<double>& values) {
  Matrix out(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = values[i];
  return out;
}

inline std::vector<double> to_vector(const Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace gassip
