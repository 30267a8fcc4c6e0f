#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nettl/errors.hpp"
#include "nettl/model.hpp"
#include "nettl/rng.hpp"
#include "nettl/spectral.hpp"
#include "nettl/types.hpp"

namespace nettl::mixed_score {

using spectral::EigenPairs;
using spectral::OrthonormalBasis;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// Entrywise eigenvector ratios R_ik = xi_{k+1,i} / xi_{1,i}, clamped to [-t,t].
struct PointCloud {
  Matrix r; // d x (K-1)
  double t = 0.0;
  long clamped = 0; // entries hit by the truncation bound
};

// K estimated simplex vertices, one per row, in canonical (lexicographic) order.
struct SimplexVertices {
  Matrix v; // K x (K-1)

  Index k() const { return v.rows(); }
};

inline void check_vertices(const Matrix& v) {
  const Index k = v.rows();
  if (k <= 1) return;
  Matrix edges(k - 1, v.cols());
  for (Index i = 1; i < k; ++i) edges.row(i - 1) = v.row(i) - v.row(0);
  Eigen::JacobiSVD<Matrix> svd(edges);
  const double smin = svd.singularValues().minCoeff();
  require(svd.singularValues().size() >= k - 1 && smin > 1e-8, ErrorKind::DegenerateSimplex,
          "simplex is degenerate (sigma_min = " + std::to_string(smin) + ")");
}

// Pipeline health counters plus stage timings for the diagnostics file.
struct Diagnostics {
  long point_cloud_clamps = 0;
  long membership_clamps = 0;
  long connectivity_clamps = 0;
  long theta_floors = 0;
  long h_hat_clamps = 0;
  std::vector<std::pair<std::string, double>> stage_ms;
};

struct DcmmEstimate {
  model::DcmmParams params;
  Vector b1;
  EigenPairs pairs; // the basis/eigenvalues actually used
  model::ProbabilityMatrix h_hat;
  Diagnostics diag;
};

// ---------------------------------------------------------------------------
// Point cloud
// ---------------------------------------------------------------------------

// Requires xi_1 already oriented so the majority of its entries are positive.
// Entries with |xi_1,i| < 1e-12 map to 0 before clamping.
inline PointCloud point_cloud(const EigenPairs& eig, double t) {
  const Index k = eig.k();
  require(k >= 2, ErrorKind::KTooSmall, "point cloud needs K >= 2");
  require(t > 0.0, ErrorKind::ParamInvariantViolated, "truncation bound must be positive");
  const Matrix& xi = eig.basis.mat();
  const Index d = xi.rows();
  PointCloud cloud;
  cloud.t = t;
  cloud.r.resize(d, k - 1);
  for (Index i = 0; i < d; ++i) {
    const double denom = xi(i, 0);
    for (Index j = 1; j < k; ++j) {
      double v = std::abs(denom) < 1e-12 ? 0.0 : xi(i, j) / denom;
      if (v > t) {
        v = t;
        ++cloud.clamped;
      } else if (v < -t) {
        v = -t;
        ++cloud.clamped;
      }
      cloud.r(i, j - 1) = v;
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Vertex hunting: k-means over-clustering followed by successive projection
// ---------------------------------------------------------------------------

namespace detail {

struct KmeansResult {
  Matrix centers;
  double inertia = std::numeric_limits<double>::infinity();
};

inline KmeansResult kmeans_once(const Matrix& pts, Index k, std::uint64_t seed, int max_iter) {
  const Index n = pts.rows();
  Rng rng(seed);
  // k-means++ seeding; stops early if all remaining distances vanish.
  std::vector<Index> chosen;
  Vector dist2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  chosen.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  for (Index i = 0; i < n; ++i)
    dist2(i) = (pts.row(i) - pts.row(chosen.back())).squaredNorm();
  while (static_cast<Index>(chosen.size()) < k) {
    const double total = dist2.sum();
    if (!(total > 0.0)) break; // fewer distinct points than centers
    double target = rng.uniform() * total;
    Index pick = n - 1;
    for (Index i = 0; i < n; ++i) {
      target -= dist2(i);
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    chosen.push_back(pick);
    for (Index i = 0; i < n; ++i)
      dist2(i) = std::min(dist2(i), (pts.row(i) - pts.row(pick)).squaredNorm());
  }
  const Index kc = static_cast<Index>(chosen.size());
  Matrix centers(kc, pts.cols());
  for (Index c = 0; c < kc; ++c) centers.row(c) = pts.row(chosen[static_cast<std::size_t>(c)]);

  std::vector<Index> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      double bestd = (pts.row(i) - centers.row(0)).squaredNorm();
      for (Index c = 1; c < kc; ++c) {
        const double dd = (pts.row(i) - centers.row(c)).squaredNorm();
        if (dd < bestd) { // ties keep the lowest center index
          bestd = dd;
          best = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best) {
        assign[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    Matrix sums = Matrix::Zero(kc, pts.cols());
    std::vector<Index> counts(static_cast<std::size_t>(kc), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += pts.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (Index c = 0; c < kc; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0)
        centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
    // empty clusters keep their previous position
  }
  double inertia = 0.0;
  for (Index i = 0; i < n; ++i)
    inertia += (pts.row(i) - centers.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
  return KmeansResult{std::move(centers), inertia};
}

inline Matrix kmeans(const Matrix& pts, Index k, int restarts, std::uint64_t seed) {
  KmeansResult best;
  for (int r = 0; r < restarts; ++r) {
    KmeansResult cur = kmeans_once(pts, k, substream(seed, static_cast<std::uint64_t>(r)), 100);
    if (cur.inertia < best.inertia) best = std::move(cur); // ties keep the earlier restart
  }
  return best.centers;
}

// Successive projection on homogenized centers [c;1]: at each step take the
// row of largest residual norm (extreme point of the lifted cone) and project
// it out. Recovers simplex vertices when at least one point sits at each one.
inline Matrix spa_vertices(const Matrix& centers, Index k) {
  const Index n = centers.rows();
  require(n >= k, ErrorKind::DegenerateCloud,
          "fewer candidate centers (" + std::to_string(n) + ") than vertices");
  Matrix z(n, centers.cols() + 1);
  z.leftCols(centers.cols()) = centers;
  z.col(centers.cols()).setOnes();
  Matrix verts(k, centers.cols());
  for (Index t = 0; t < k; ++t) {
    Index best = 0;
    double bestn = -1.0;
    for (Index i = 0; i < n; ++i) {
      const double nn = z.row(i).squaredNorm();
      if (nn > bestn) { // ties keep the lowest index
        bestn = nn;
        best = i;
      }
    }
    require(bestn > 1e-16, ErrorKind::DegenerateCloud,
            "cloud's affine hull has dimension below K-1");
    verts.row(t) = centers.row(best);
    const Vector dir = z.row(best).transpose() / std::sqrt(bestn);
    z -= (z * dir) * dir.transpose();
  }
  return verts;
}

inline void sort_rows_lexicographic(Matrix& m) {
  std::vector<Index> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (m(a, j) < m(b, j)) return true;
      if (m(a, j) > m(b, j)) return false;
    }
    return false;
  });
  Matrix sorted(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) sorted.row(i) = m.row(order[static_cast<std::size_t>(i)]);
  m = std::move(sorted);
}

} // namespace detail

// Over-cluster the cloud into max(K, ceil(K log d)) local centers (20 seeded
// restarts), then pick K extreme centers by successive projection.
inline SimplexVertices vertex_hunt(const PointCloud& cloud, Index k, std::uint64_t seed = 12345) {
  const Index d = cloud.r.rows();
  require(k >= 2, ErrorKind::KTooSmall, "vertex hunting needs K >= 2");
  require(d >= k, ErrorKind::DegenerateCloud, "cloud has fewer rows than vertices");

  // affine-hull dimension check
  Matrix centered = cloud.r.rowwise() - cloud.r.colwise().mean();
  Eigen::BDCSVD<Matrix> svd(centered);
  const Vector& sv = svd.singularValues();
  const double tol = 1e-8 * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);
  Index affine_dim = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++affine_dim;
  require(affine_dim >= k - 1, ErrorKind::DegenerateCloud,
          "cloud's affine hull has dimension " + std::to_string(affine_dim) +
              " below K-1 = " + std::to_string(k - 1));

  const Index n_centers =
      std::min<Index>(d, std::max<Index>(k, static_cast<Index>(std::ceil(
                              static_cast<double>(k) * std::log(static_cast<double>(d))))));
  const Matrix centers = detail::kmeans(cloud.r, n_centers, 20, seed);
  Matrix verts = detail::spa_vertices(centers, k);
  detail::sort_rows_lexicographic(verts);
  check_vertices(verts);
  return SimplexVertices{std::move(verts)};
}

// ---------------------------------------------------------------------------
// Parameter recovery
// ---------------------------------------------------------------------------

// Barycentric weights: solve sum_k w_k v_k = r_i, sum_k w_k = 1 by least
// squares, then clamp negatives and renormalize. Returns raw weights; degree
// reweighting happens in full_pipeline.
inline Matrix memberships(const PointCloud& cloud, const SimplexVertices& verts,
                          long* clamp_count = nullptr) {
  const Index k = verts.k();
  require(cloud.r.cols() == verts.v.cols(), ErrorKind::DimensionMismatch,
          "cloud and vertices disagree on K-1");
  Matrix sys(k, k); // rows: K-1 coordinate equations + affine constraint
  sys.topRows(k - 1) = verts.v.transpose();
  sys.row(k - 1).setOnes();
  Eigen::ColPivHouseholderQR<Matrix> qr(sys);
  require(qr.rank() == k, ErrorKind::DegenerateSimplex, "vertex system is rank deficient");
  const Index d = cloud.r.rows();
  Matrix rhs(k, d);
  rhs.topRows(k - 1) = cloud.r.transpose();
  rhs.row(k - 1).setOnes();
  Matrix w = qr.solve(rhs).transpose(); // d x K
  long clamps = 0;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < k; ++j)
      if (w(i, j) < 0.0) {
        w(i, j) = 0.0;
        ++clamps;
      }
    const double s = w.row(i).sum();
    if (s > 0.0)
      w.row(i) /= s;
    else
      w.row(i).setConstant(1.0 / static_cast<double>(k));
  }
  if (clamp_count) *clamp_count += clamps;
  return w;
}

// (b1)_k = [lambda_1 + v_k' diag(lambda_2..lambda_K) v_k]^{-1/2}. The bracket
// equals the quadratic form [1,v_k] Lambda [1,v_k]', which is P_kk/b_k^2 in
// the planted model; a nonpositive value signals a failed eigengap assumption.
inline Vector estimate_b1(const Vector& values, const SimplexVertices& verts) {
  const Index k = verts.k();
  require(values.size() == k, ErrorKind::DimensionMismatch, "eigenvalues/vertices disagree on K");
  Vector b1(k);
  for (Index c = 0; c < k; ++c) {
    double quad = values(0);
    for (Index j = 1; j < k; ++j) quad += values(j) * verts.v(c, j - 1) * verts.v(c, j - 1);
    require(quad > 0.0, ErrorKind::NegativeRadicand,
            "radicand " + std::to_string(quad) + " for vertex " + std::to_string(c));
    b1(c) = 1.0 / std::sqrt(quad);
  }
  return b1;
}

// P_hat = B Lambda B' with B = diag(b1) [1_K, V]; symmetrized and clamped to
// [0,1]. Clamps beyond 1e-6 increment the warning counter.
inline Matrix estimate_connectivity(const Vector& values, const Vector& b1,
                                    const SimplexVertices& verts, long* clamp_count = nullptr) {
  const Index k = verts.k();
  require(values.size() == k && b1.size() == k, ErrorKind::DimensionMismatch,
          "shape mismatch in connectivity estimate");
  Matrix b(k, k);
  b.col(0).setOnes();
  if (k > 1) b.rightCols(k - 1) = verts.v;
  b = b1.asDiagonal() * b;
  Matrix p = b * values.asDiagonal() * b.transpose();
  p = symmetrized(p);
  long clamps = 0;
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) {
      if (p(i, j) < 0.0) {
        if (p(i, j) < -1e-6) ++clamps;
        p(i, j) = 0.0;
      } else if (p(i, j) > 1.0) {
        if (p(i, j) > 1.0 + 1e-6) ++clamps;
        p(i, j) = 1.0;
      }
    }
  if (clamp_count) *clamp_count += clamps;
  return p;
}

// theta_i = xi_{1,i} / (pi_i' b1), floored at 1e-12 under noise.
inline Vector estimate_theta(const Vector& xi1, const Matrix& pi_hat, const Vector& b1,
                             long* floor_count = nullptr) {
  require(pi_hat.rows() == xi1.size() && pi_hat.cols() == b1.size(), ErrorKind::DimensionMismatch,
          "shape mismatch in theta estimate");
  const Vector denom = pi_hat * b1;
  Vector theta(xi1.size());
  long floors = 0;
  for (Index i = 0; i < xi1.size(); ++i) {
    require(std::abs(denom(i)) > 1e-12, ErrorKind::DegenerateDenominator,
            "pi_i' b1 vanishes at node " + std::to_string(i));
    double v = xi1(i) / denom(i);
    if (v < 1e-12) {
      v = 1e-12;
      ++floors;
    }
    theta(i) = v;
  }
  if (floor_count) *floor_count += floors;
  return theta;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

namespace detail {

class StageTimer {
 public:
  explicit StageTimer(Diagnostics& diag) : diag_(diag) {}
  void mark(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    diag_.stage_ms.emplace_back(
        name, std::chrono::duration<double, std::milli>(now - last_).count());
    last_ = now;
  }

 private:
  Diagnostics& diag_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  }
}

// Rayleigh-Ritz restriction of x onto span(basis): eigendecompose B'XB and
// rotate B accordingly. For an exact eigenbasis this reproduces it (up to the
// deterministic sign/order conventions); for any basis spanning col(H) it
// yields the exact eigenpairs of the restriction, which is what the ratio
// formulas downstream need.
inline EigenPairs rayleigh_ritz(const Matrix& x, const OrthonormalBasis& basis) {
  const Matrix small = basis.mat().transpose() * x * basis.mat();
  const EigenPairs inner = spectral::top_eigenpairs(small, basis.k());
  Matrix rotated = basis.mat() * inner.basis.mat();
  spectral::fix_column_signs(rotated);
  return EigenPairs{inner.values, OrthonormalBasis(std::move(rotated), 1e-8)};
}

inline void orient_leading_majority_positive(EigenPairs& ep) {
  const auto& col = ep.basis.mat().col(0);
  Index pos = 0, neg = 0;
  for (Index i = 0; i < col.size(); ++i) {
    if (col(i) > 0.0) ++pos;
    else if (col(i) < 0.0) ++neg;
  }
  if (neg > pos) {
    Matrix m = ep.basis.mat();
    m.col(0) = -m.col(0);
    ep.basis = OrthonormalBasis(std::move(m), 1e-8);
  }
}

} // namespace detail

// Runs Mixed-SCORE on x with either its own top-k eigenvectors (basis absent)
// or a plug-in basis from the transfer pipeline. Eigenvalues always come from
// the Rayleigh-Ritz restriction of x onto the used basis, so both routes share
// one code path and a plug-in equal to top_eigenpairs(x,k).basis reproduces
// the basis-free run bit for bit.
inline DcmmEstimate full_pipeline(const Matrix& x, const std::optional<OrthonormalBasis>& basis,
                                  Index k, std::optional<double> t = std::nullopt,
                                  std::uint64_t seed = 12345) {
  spectral::check_square_symmetric(x);
  const Index d = x.rows();
  require(k >= 1 && k <= d, ErrorKind::KOutOfRange, "k outside [1,d]");
  Diagnostics diag;
  detail::StageTimer timer(diag);

  OrthonormalBasis used = basis.value_or(OrthonormalBasis());
  if (!basis.has_value()) {
    used = detail::stage("eigendecomposition",
                         [&] { return spectral::top_eigenpairs(x, k).basis; });
  } else {
    require(used.d() == d, ErrorKind::DimensionMismatch, "plug-in basis dimension mismatch");
    require(used.k() == k, ErrorKind::KOutOfRange, "plug-in basis must have k columns");
  }
  timer.mark("basis");

  EigenPairs ep = detail::stage("rayleigh_ritz", [&] { return detail::rayleigh_ritz(x, used); });
  detail::orient_leading_majority_positive(ep);
  timer.mark("rayleigh_ritz");

  const double t_eff = t.value_or(std::log(static_cast<double>(d)));
  Vector b1;
  Matrix pi_hat;
  Matrix p_hat;
  SimplexVertices verts{Matrix(0, 0)};

  if (k == 1) {
    // rank-1 fit: H_hat = lambda_1 xi_1 xi_1'
    b1 = detail::stage("b1", [&] { return estimate_b1(ep.values, SimplexVertices{Matrix(1, 0)}); });
    pi_hat = Matrix::Ones(d, 1);
    p_hat = detail::stage(
        "connectivity", [&] { return estimate_connectivity(ep.values, b1, SimplexVertices{Matrix(1, 0)}, &diag.connectivity_clamps); });
    timer.mark("rank1");
  } else {
    const PointCloud cloud =
        detail::stage("point_cloud", [&] { return point_cloud(ep, t_eff); });
    diag.point_cloud_clamps += cloud.clamped;
    timer.mark("point_cloud");

    verts = detail::stage("vertex_hunt", [&] { return vertex_hunt(cloud, k, seed); });
    timer.mark("vertex_hunt");

    const Matrix w =
        detail::stage("memberships", [&] { return memberships(cloud, verts, &diag.membership_clamps); });
    timer.mark("memberships");

    b1 = detail::stage("b1", [&] { return estimate_b1(ep.values, verts); });

    // degree reweighting: pi_ik proportional to w_ik / (b1)_k, rows renormalized
    pi_hat = w;
    for (Index i = 0; i < d; ++i) {
      for (Index j = 0; j < k; ++j) pi_hat(i, j) /= b1(j);
      const double s = pi_hat.row(i).sum();
      require(s > 0.0, ErrorKind::DegenerateDenominator,
              "reweighted membership row " + std::to_string(i) + " vanished");
      pi_hat.row(i) /= s;
    }
    timer.mark("reweighting");

    p_hat = detail::stage("connectivity", [&] {
      return estimate_connectivity(ep.values, b1, verts, &diag.connectivity_clamps);
    });
    timer.mark("connectivity");
  }

  const Vector theta = detail::stage(
      "theta", [&] { return estimate_theta(ep.basis.mat().col(0), pi_hat, b1, &diag.theta_floors); });
  timer.mark("theta");

  Matrix h_core = pi_hat * p_hat * pi_hat.transpose();
  Matrix h = theta.asDiagonal() * h_core * theta.asDiagonal();
  h = symmetrized(h);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) {
      if (h(i, j) < 0.0) {
        h(i, j) = 0.0;
        ++diag.h_hat_clamps;
      } else if (h(i, j) > 1.0) {
        h(i, j) = 1.0;
        ++diag.h_hat_clamps;
      }
    }
  timer.mark("reconstruction");

  DcmmEstimate est;
  est.params = model::DcmmParams{theta, std::move(pi_hat), std::move(p_hat)};
  est.b1 = std::move(b1);
  est.pairs = std::move(ep);
  est.h_hat = model::ProbabilityMatrix{std::move(h)};
  est.diag = std::move(diag);
  return est;
}

} // namespace nettl::mixed_score
