#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace nettl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Alias-safe symmetrization (writing `m = (m + m.transpose()) / 2` in place
// reads half-updated entries).
inline Matrix symmetrized(const Matrix& m) { return (m + m.transpose()) / 2.0; }

} // namespace nettl
