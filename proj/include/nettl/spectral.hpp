#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nettl/errors.hpp"
#include "nettl/parallel.hpp"
#include "nettl/rng.hpp"
#include "nettl/types.hpp"

namespace nettl::spectral {

// ---------------------------------------------------------------------------
// Basis and eigenpair types
// ---------------------------------------------------------------------------

// d x k column-orthonormal matrix; the unit of all subspace operations.
// k = 0 (empty basis) is valid and acts as "no subspace" in projector algebra.
class OrthonormalBasis {
 public:
  OrthonormalBasis() : m_(0, 0) {}

  explicit OrthonormalBasis(Matrix m, double tol = 1e-10) : m_(std::move(m)) {
    require(m_.cols() <= m_.rows(), ErrorKind::DimensionMismatch,
            "basis has more columns than rows");
    if (m_.cols() > 0) {
      const Matrix gram = m_.transpose() * m_;
      const double err = (gram - Matrix::Identity(m_.cols(), m_.cols())).cwiseAbs().maxCoeff();
      require(err <= tol, ErrorKind::NotOrthonormal,
              "columns not orthonormal (max deviation " + std::to_string(err) + ")");
    }
  }

  static OrthonormalBasis empty(Index d) { return OrthonormalBasis(Matrix(d, 0)); }

  const Matrix& mat() const { return m_; }
  Index d() const { return m_.rows(); }
  Index k() const { return m_.cols(); }

  Matrix projector() const { return m_ * m_.transpose(); }

 private:
  Matrix m_;
};

struct EigenPairs {
  Vector values; // sorted by descending |value|
  OrthonormalBasis basis;

  Index k() const { return values.size(); }
};

// ---------------------------------------------------------------------------
// Deterministic sign and ordering conventions
// ---------------------------------------------------------------------------

// Flips each column so its largest-magnitude entry is positive (ties go to the
// lowest index). Makes eigenvector output reproducible.
inline void fix_column_signs(Matrix& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    Index imax = 0;
    double best = -1.0;
    for (Index i = 0; i < m.rows(); ++i) {
      const double a = std::abs(m(i, j));
      if (a > best) {
        best = a;
        imax = i;
      }
    }
    if (m(imax, j) < 0.0) m.col(j) = -m.col(j);
  }
}

inline void check_square_symmetric(const Matrix& s, double tol = 1e-10) {
  require(s.rows() == s.cols(), ErrorKind::DimensionMismatch, "matrix not square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  require(asym <= tol * scale, ErrorKind::NotSymmetric,
          "asymmetry " + std::to_string(asym) + " beyond tolerance");
}

// Top-k eigenpairs of a symmetric matrix by descending |eigenvalue|.
inline EigenPairs top_eigenpairs(const Matrix& s, Index k) {
  check_square_symmetric(s);
  const Index d = s.rows();
  require(k >= 1 && k <= d, ErrorKind::KOutOfRange,
          "k = " + std::to_string(k) + " outside [1," + std::to_string(d) + "]");
  Eigen::SelfAdjointEigenSolver<Matrix> es((s + s.transpose()) / 2.0);
  require(es.info() == Eigen::Success, ErrorKind::RankCollapse, "eigensolver failed");
  const Vector& vals = es.eigenvalues(); // ascending
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double fa = std::abs(vals(a)), fb = std::abs(vals(b));
    if (fa != fb) return fa > fb;
    return a < b;
  });
  Vector out_vals(k);
  Matrix out_vecs(d, k);
  for (Index j = 0; j < k; ++j) {
    out_vals(j) = vals(order[static_cast<std::size_t>(j)]);
    out_vecs.col(j) = es.eigenvectors().col(order[static_cast<std::size_t>(j)]);
  }
  fix_column_signs(out_vecs);
  return EigenPairs{std::move(out_vals), OrthonormalBasis(std::move(out_vecs))};
}

// ---------------------------------------------------------------------------
// Projector algebra
// ---------------------------------------------------------------------------

// (1/n) * sum_m Xi_m Xi_m'. Symmetric PSD with spectrum in [0,1].
inline Matrix average_projector(std::span<const OrthonormalBasis> bases) {
  require(!bases.empty(), ErrorKind::DimensionMismatch, "empty basis list");
  const Index d = bases.front().d();
  Matrix acc = Matrix::Zero(d, d);
  for (const auto& b : bases) {
    require(b.d() == d, ErrorKind::DimensionMismatch, "bases have mixed dimensions");
    acc.noalias() += b.mat() * b.mat().transpose();
  }
  acc /= static_cast<double>(bases.size());
  return acc;
}

// ||AA' - BB'||_F, computed on the actual projectors. trace_alignment gives
// the algebraically equivalent route; tests check the identity between them.
inline double projector_distance(const OrthonormalBasis& a, const OrthonormalBasis& b) {
  require(a.d() == b.d(), ErrorKind::DimensionMismatch, "bases have different dimensions");
  return (a.projector() - b.projector()).norm();
}

// tr(AA'BB') = ||A'B||_F^2.
inline double trace_alignment(const OrthonormalBasis& a, const OrthonormalBasis& b) {
  require(a.d() == b.d(), ErrorKind::DimensionMismatch, "bases have different dimensions");
  return (a.mat().transpose() * b.mat()).squaredNorm();
}

// (I - LL') X (I - RR').
inline Matrix deflate(const Matrix& x, const OrthonormalBasis& left,
                      const OrthonormalBasis& right) {
  require(x.rows() == left.d() && x.cols() == right.d(), ErrorKind::DimensionMismatch,
          "deflation dimensions disagree");
  Matrix t = x;
  if (left.k() > 0) t.noalias() -= left.mat() * (left.mat().transpose() * x);
  if (right.k() > 0) t.noalias() -= (t * right.mat()) * right.mat().transpose();
  return t;
}

// ---------------------------------------------------------------------------
// Randomized sketching
// ---------------------------------------------------------------------------

struct SketchConfig {
  Index k_s = 1;      // shared dimension
  Index l = 10;       // number of first-stage sketches
  Index p = 0;        // first-stage sketch width
  Index p_prime = 0;  // second-stage sketch width
  Index q = 1;        // power iterations
  std::uint64_t seed = 0;

  void validate() const {
    require(l >= 1, ErrorKind::ParamInvariantViolated, "L must be >= 1");
    require(q >= 1, ErrorKind::ParamInvariantViolated, "q must be >= 1");
    require(p >= std::max(2 * k_s, k_s + 8 * q - 1), ErrorKind::WidthTooSmall,
            "p must be >= max(2K_s, K_s+8q-1)");
    require(p_prime >= std::max(2 * k_s, k_s + 7), ErrorKind::WidthTooSmall,
            "p' must be >= max(2K_s, K_s+7)");
  }

  static SketchConfig defaults(Index d, Index k_s, std::uint64_t seed) {
    SketchConfig cfg;
    cfg.k_s = k_s;
    cfg.l = 10;
    cfg.q = static_cast<Index>(std::ceil(std::log(std::max<double>(2.0, static_cast<double>(d)))));
    cfg.p = std::max(2 * k_s, k_s + 8 * cfg.q - 1);
    cfg.p_prime = std::max(2 * k_s, k_s + 7);
    cfg.seed = seed;
    return cfg;
  }
};

namespace detail {

// Top-k left singular vectors with a numerical-rank guard: singular values
// below 1e-12 * sigma_1 count as zero.
inline OrthonormalBasis top_left_singular(const Matrix& y, Index k, const char* stage) {
  Eigen::BDCSVD<Matrix> svd(y, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const double s0 = sv.size() > 0 ? sv(0) : 0.0;
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > 1e-12 * s0 && sv(i) > 0.0) ++rank;
  require(rank >= k, ErrorKind::RankCollapse,
          std::string(stage) + ": numerical rank " + std::to_string(rank) + " below k = " +
              std::to_string(k));
  Matrix u = svd.matrixU().leftCols(k);
  fix_column_signs(u);
  return OrthonormalBasis(std::move(u));
}

} // namespace detail

// Single-stage range sketch: Y = sigma * Omega with Omega ~ N(0,1)^{d x width},
// returns the top-k left singular vectors of Y.
inline OrthonormalBasis sketch_top_subspace(const Matrix& sigma, Index width, Index k,
                                            std::uint64_t seed) {
  require(sigma.rows() == sigma.cols(), ErrorKind::DimensionMismatch, "sigma not square");
  require(width >= k, ErrorKind::WidthTooSmall,
          "width " + std::to_string(width) + " below k = " + std::to_string(k));
  const Matrix omega = gaussian_matrix(sigma.cols(), width, seed);
  const Matrix y = sigma * omega;
  return detail::top_left_singular(y, k, "sketch");
}

// Power-iterated sketch: top-k_s left singular vectors of sigma^q * Omega^F.
// The power is applied as q successive products against the sketch; the matrix
// power itself is never materialized.
inline OrthonormalBasis power_sketch(const Matrix& sigma, const SketchConfig& cfg) {
  require(sigma.rows() == sigma.cols(), ErrorKind::DimensionMismatch, "sigma not square");
  cfg.validate();
  Matrix y = gaussian_matrix(sigma.cols(), cfg.p_prime, cfg.seed);
  for (Index t = 0; t < cfg.q; ++t) {
    y = sigma * y;
    const double scale = y.cwiseAbs().maxCoeff();
    require(scale > 0.0, ErrorKind::RankCollapse, "power sketch collapsed to zero");
    if (scale < 1e-120 || scale > 1e120) y /= scale; // scalar rescale, span-preserving
  }
  return detail::top_left_singular(y, cfg.k_s, "power sketch");
}

// Two-step pipeline: L independent sketches of sigma_hat are averaged as
// projectors, then one power-iterated sketch extracts the k_s leading
// directions. Sketch l draws from substream (seed, l); the reduction order is
// fixed by sketch index so results do not depend on the worker count.
inline OrthonormalBasis shared_from_projector(const Matrix& sigma_hat, const SketchConfig& cfg,
                                              std::uint64_t seed, int threads = 1) {
  cfg.validate();
  std::vector<OrthonormalBasis> stage1(static_cast<std::size_t>(cfg.l));
  parallel_for(static_cast<int>(cfg.l), threads, [&](int l) {
    stage1[static_cast<std::size_t>(l)] =
        sketch_top_subspace(sigma_hat, cfg.p, cfg.k_s, substream(seed, 1, static_cast<std::uint64_t>(l)));
  });
  const Matrix sigma_tilde = average_projector(stage1);
  SketchConfig power_cfg = cfg;
  power_cfg.seed = substream(seed, 2);
  return power_sketch(sigma_tilde, power_cfg);
}

} // namespace nettl::spectral
