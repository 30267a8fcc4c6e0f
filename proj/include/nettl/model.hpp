#pragma once

#include <string>
#include <vector>

#include "nettl/errors.hpp"
#include "nettl/rng.hpp"
#include "nettl/types.hpp"

namespace nettl::model {

// One network's DCMM parameters: per-node degree scalings theta, row-stochastic
// membership matrix pi (d x K) and symmetric nonnegative community
// connectivity p (K x K). Edge probability is H_ij = theta_i theta_j pi_i' P pi_j.
struct DcmmParams {
  Vector theta;
  Matrix pi;
  Matrix p;

  Index d() const { return theta.size(); }
  Index k() const { return p.rows(); }
};

struct ValidationItem {
  bool hard = true; // hard violations reject the params; soft ones only warn
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationItem> items;

  bool valid() const {
    for (const auto& it : items)
      if (it.hard) return false;
    return true;
  }
  bool empty() const { return items.empty(); }
};

// Lists every violated invariant. Absence of a pure node in some community is
// reported but soft: subspace-only workflows do not need it.
inline ValidationReport validate_params(const DcmmParams& params) {
  ValidationReport rep;
  const Index d = params.theta.size();
  const Index k = params.p.rows();
  if (params.pi.rows() != d || params.pi.cols() != k || params.p.cols() != k) {
    rep.items.push_back({true, "shape mismatch: theta " + std::to_string(d) + ", pi " +
                                   std::to_string(params.pi.rows()) + "x" +
                                   std::to_string(params.pi.cols()) + ", p " +
                                   std::to_string(params.p.rows()) + "x" +
                                   std::to_string(params.p.cols())});
    return rep;
  }
  for (Index i = 0; i < d; ++i)
    if (!(params.theta(i) > 0.0)) {
      rep.items.push_back({true, "theta(" + std::to_string(i) + ") is not positive"});
      break;
    }
  for (Index i = 0; i < d; ++i) {
    if (params.pi.row(i).minCoeff() < 0.0) {
      rep.items.push_back({true, "pi row " + std::to_string(i) + " has a negative entry"});
      break;
    }
  }
  for (Index i = 0; i < d; ++i) {
    const double s = params.pi.row(i).sum();
    if (std::abs(s - 1.0) > 1e-12) {
      rep.items.push_back({true, "pi row " + std::to_string(i) + " sums to " +
                                     std::to_string(s) + ", expected 1"});
      break;
    }
  }
  if ((params.p - params.p.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    rep.items.push_back({true, "p is not symmetric within 1e-12"});
  if (params.p.minCoeff() < 0.0)
    rep.items.push_back({true, "p has a negative entry"});
  for (Index c = 0; c < k; ++c) {
    bool pure = false;
    for (Index i = 0; i < d && !pure; ++i)
      if (params.pi(i, c) >= 1.0 - 1e-12) pure = true;
    if (!pure)
      rep.items.push_back({false, "community " + std::to_string(c) + " has no pure node"});
  }
  return rep;
}

// Dense symmetric matrix with entries in [0,1].
struct ProbabilityMatrix {
  Matrix h;

  Index d() const { return h.rows(); }

  static ProbabilityMatrix from(Matrix m, double tol = 1e-12) {
    require(m.rows() == m.cols(), ErrorKind::DimensionMismatch, "probability matrix not square");
    require((m - m.transpose()).cwiseAbs().maxCoeff() <= tol, ErrorKind::NotSymmetric,
            "probability matrix asymmetric beyond tolerance");
    require(m.minCoeff() >= -tol && m.maxCoeff() <= 1.0 + tol, ErrorKind::ProbabilityOutOfRange,
            "entries outside [0,1]");
    Matrix s = (m + m.transpose()) / 2.0;
    s = s.cwiseMax(0.0).cwiseMin(1.0);
    return ProbabilityMatrix{std::move(s)};
  }
};

// Symmetric binary matrix with zero diagonal.
struct AdjacencyMatrix {
  Matrix x;

  Index d() const { return x.rows(); }

  static AdjacencyMatrix from(Matrix m) {
    require(m.rows() == m.cols(), ErrorKind::DimensionMismatch, "adjacency matrix not square");
    require((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0, ErrorKind::NotSymmetric,
            "adjacency matrix must be exactly symmetric");
    for (Index i = 0; i < m.rows(); ++i) {
      require(m(i, i) == 0.0, ErrorKind::ParamInvariantViolated, "nonzero diagonal");
      for (Index j = 0; j < m.cols(); ++j)
        require(m(i, j) == 0.0 || m(i, j) == 1.0, ErrorKind::ParamInvariantViolated,
                "entries must be 0 or 1");
    }
    return AdjacencyMatrix{std::move(m)};
  }
};

// H = Theta Pi P Pi' Theta'. Symmetrized after assembly; entries above
// 1 + 1e-12 signal incompatible theta/P scaling.
inline ProbabilityMatrix build_probability_matrix(const DcmmParams& params) {
  const ValidationReport rep = validate_params(params);
  if (!rep.valid()) {
    std::string msg;
    for (const auto& it : rep.items)
      if (it.hard) msg += (msg.empty() ? "" : "; ") + it.message;
    fail(ErrorKind::ParamInvariantViolated, msg);
  }
  Matrix core = params.pi * params.p * params.pi.transpose();
  Matrix h = params.theta.asDiagonal() * core * params.theta.asDiagonal();
  h = symmetrized(h);
  const double mx = h.maxCoeff();
  require(mx <= 1.0 + 1e-12, ErrorKind::ProbabilityOutOfRange,
          "max entry " + std::to_string(mx) + " exceeds 1");
  h = h.cwiseMax(0.0).cwiseMin(1.0);
  return ProbabilityMatrix{std::move(h)};
}

// Samples X_ij ~ Bernoulli(H_ij) independently for i < j, mirrors the upper
// triangle and zeroes the diagonal. Deterministic given the seed.
inline AdjacencyMatrix sample_adjacency(const ProbabilityMatrix& h, std::uint64_t seed) {
  const Index d = h.d();
  Rng rng(seed);
  Matrix x = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = i + 1; j < d; ++j) {
      const double v = rng.uniform() <= h.h(i, j) ? 1.0 : 0.0;
      x(i, j) = v;
      x(j, i) = v;
    }
  }
  return AdjacencyMatrix{std::move(x)};
}

} // namespace nettl::model
