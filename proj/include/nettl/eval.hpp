#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nettl/errors.hpp"
#include "nettl/matrix_io.hpp"
#include "nettl/mixed_score.hpp"
#include "nettl/model.hpp"
#include "nettl/parallel.hpp"
#include "nettl/rng.hpp"
#include "nettl/spectral.hpp"
#include "nettl/transfer.hpp"
#include "nettl/types.hpp"

namespace nettl::eval {

using spectral::OrthonormalBasis;

// ---------------------------------------------------------------------------
// Metrics and diagnostics
// ---------------------------------------------------------------------------

// ||H_hat - H||_F / d.
inline double d_metric(const Matrix& h_hat, const Matrix& h_true) {
  require(h_hat.rows() == h_true.rows() && h_hat.cols() == h_true.cols(),
          ErrorKind::DimensionMismatch, "d_metric shapes disagree");
  return (h_hat - h_true).norm() / static_cast<double>(h_true.rows());
}

struct EigengapReport {
  double delta = 0.0; // |lambda_{K1}(H)|
  double d_p = 0.0;   // lambda_{K1-Ks}(H^p) - lambda_{K1+1}(H^p)
  double ratio = 0.0; // d_p / delta
};

// Gap diagnostics: delta is the K1-th eigenvalue magnitude of H, d_p the
// effective gap of the shared-deflated matrix. Their ratio is the planted
// transfer-gain lever.
inline EigengapReport eigengap_report(const Matrix& h, const OrthonormalBasis& shared,
                                      Index k_target, Index k_shared) {
  spectral::check_square_symmetric(h);
  const Index d = h.rows();
  require(shared.d() == d, ErrorKind::DimensionMismatch, "shared basis dimension mismatch");
  require(shared.k() == k_shared, ErrorKind::DimensionMismatch,
          "shared basis has " + std::to_string(shared.k()) + " columns, expected " +
              std::to_string(k_shared));
  require(k_target >= 1 && k_target < d, ErrorKind::KOutOfRange, "K_1 outside [1, d)");
  require(k_shared >= 0 && k_target - k_shared >= 1, ErrorKind::KOutOfRange,
          "need at least one private dimension");

  const spectral::EigenPairs top = spectral::top_eigenpairs(h, k_target);
  EigengapReport rep;
  rep.delta = std::abs(top.values(k_target - 1));

  Matrix hp = spectral::deflate(h, shared, shared);
  hp = symmetrized(hp);
  Eigen::SelfAdjointEigenSolver<Matrix> es(hp);
  Vector vals = es.eigenvalues().reverse(); // descending by value
  rep.d_p = vals(k_target - k_shared - 1) - vals(k_target);
  rep.ratio = rep.delta > 0.0 ? rep.d_p / rep.delta : std::numeric_limits<double>::infinity();
  return rep;
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

enum class ScenarioKind { S1, S2, S3 };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::S1: return "s1";
    case ScenarioKind::S2: return "s2";
    case ScenarioKind::S3: return "s3";
  }
  return "?";
}

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::S1;
  Index d = 50;
  int m_total = 20;          // M: target + (M-1) sources
  Index k_target = 4;        // K_1
  Index k_shared = 2;        // K_s
  Index k_source = 4;        // K_m for every source
  double noise = 0.05;       // perturbation scale of informative shared centers
  double frac_informative = 1.0;
  double gap_ratio = 8.0;    // planted d_p / Delta
  std::uint64_t seed = 0;

  static ScenarioSpec defaults(ScenarioKind kind, Index d, int m_total, std::uint64_t seed) {
    ScenarioSpec s;
    s.kind = kind;
    s.d = d;
    s.m_total = m_total;
    s.seed = seed;
    switch (kind) {
      case ScenarioKind::S1:
        s.noise = 0.05;
        break;
      case ScenarioKind::S2:
        s.noise = 0.3;
        break;
      case ScenarioKind::S3:
        // The Perron direction is common to every valid probability matrix, so
        // contaminated sources always overlap the target in ~1 dimension;
        // K_s = 3 keeps tau = K_s/2 strictly inside the admissible interval.
        s.noise = 0.05;
        s.k_shared = 3;
        s.frac_informative = 0.5;
        break;
    }
    return s;
  }

  void validate() const {
    require(d >= 10, ErrorKind::ParamInvariantViolated, "d must be >= 10");
    require(m_total >= 2, ErrorKind::ParamInvariantViolated, "M must be >= 2");
    require(k_target >= 3 && k_target <= d / 2, ErrorKind::KOutOfRange,
            "K_1 must lie in [3, d/2]");
    require(k_shared >= 2 && k_shared < k_target, ErrorKind::KOutOfRange,
            "K_s must lie in [2, K_1)");
    require(k_source >= k_shared && k_source <= d / 2, ErrorKind::KOutOfRange,
            "K_m must lie in [K_s, d/2]");
    require(noise >= 0.0, ErrorKind::ParamInvariantViolated, "noise must be >= 0");
    require(frac_informative > 0.0 && frac_informative <= 1.0, ErrorKind::ParamInvariantViolated,
            "frac_informative must lie in (0, 1]");
    require(gap_ratio >= 1.0, ErrorKind::ParamInvariantViolated, "gap_ratio must be >= 1");
  }
};

struct Scenario {
  model::DcmmParams target_params;
  model::ProbabilityMatrix h_target;
  model::AdjacencyMatrix x_target;
  std::vector<model::AdjacencyMatrix> x_sources; // source m = index + 2
  transfer::SourceSet informative;               // ground truth
  OrthonormalBasis shared_basis;                 // designated target shared subspace
  std::vector<double> source_center_distance;    // planted-center distance to shared_basis
  double construction_bound = 0.0;               // 2 * noise * sqrt(K_s)
};

namespace detail {

// Orthonormal K x K basis with a flat first column and spread remaining
// columns: Hadamard when K is a power of two, DCT-II otherwise. Spread
// eigenvectors keep the planted H's entries flat, which is what lets the
// eigenvalue budget fit inside [0,1] probabilities.
inline Matrix spread_orthobasis(Index k) {
  const bool pow2 = (k & (k - 1)) == 0;
  Matrix u(k, k);
  if (pow2) {
    u(0, 0) = 1.0;
    for (Index n = 1; n < k; n *= 2)
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          u(i + n, j) = u(i, j);
          u(i, j + n) = u(i, j);
          u(i + n, j + n) = -u(i, j);
        }
    u /= std::sqrt(static_cast<double>(k));
  } else {
    for (Index j = 0; j < k; ++j)
      for (Index n = 0; n < k; ++n)
        u(n, j) = j == 0 ? 1.0 / std::sqrt(static_cast<double>(k))
                         : std::sqrt(2.0 / static_cast<double>(k)) *
                               std::cos(M_PI * static_cast<double>(j) *
                                        (2.0 * static_cast<double>(n) + 1.0) /
                                        (2.0 * static_cast<double>(k)));
  }
  return u;
}

// Descending eigenvalue profile for the planted P: a dominant Perron level,
// strong private levels, mid "visible shared" levels and one weak shared level
// carrying Delta = lambda_private_min / gap_ratio. The ratio is planted by
// scaling the private block around its default, so a larger ratio both
// strengthens the private signal and weakens the Delta carrier; that is the
// lever the d_p/Delta mechanism turns.
inline std::vector<double> mu_profile(Index k, Index k_shared, double gap_ratio) {
  const Index kp = k - k_shared;    // private dimensions
  const Index kv = k_shared - 2;    // visible shared dimensions (besides Perron)
  const double private_scale = std::sqrt(gap_ratio / 8.0);
  std::vector<double> mus;
  mus.push_back(2.0);
  double private_min = 1.0 * private_scale;
  for (Index i = 0; i < kp; ++i) {
    const double v = private_scale *
                     (kp == 1 ? 1.0 : 1.0 - 0.15 * static_cast<double>(i) / static_cast<double>(kp - 1));
    mus.push_back(v);
    private_min = v;
  }
  const double vis_hi = std::min(0.72, 0.9 * private_min);
  const double vis_lo = std::min(0.65, 0.81 * private_min);
  for (Index i = 0; i < kv; ++i)
    mus.push_back(kv == 1 ? vis_hi
                          : vis_hi - (vis_hi - vis_lo) * static_cast<double>(i) /
                                         static_cast<double>(kv - 1));
  mus.push_back(private_min / gap_ratio);
  return mus;
}

inline Matrix planted_connectivity(Index k, Index k_shared, double gap_ratio) {
  const Matrix u = spread_orthobasis(k);
  const std::vector<double> mus = mu_profile(k, k_shared, gap_ratio);
  Matrix perron = mus[0] * u.col(0) * u.col(0).transpose();
  Matrix bumps = Matrix::Zero(k, k);
  for (Index j = 1; j < k; ++j)
    bumps += mus[static_cast<std::size_t>(j)] * u.col(j) * u.col(j).transpose();
  // entrywise-nonnegative guard: shrink the bumps, which scales all planted
  // gap ratios uniformly and so preserves d_p/Delta
  double c = 1.0;
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j)
      if (bumps(i, j) < 0.0) c = std::min(c, -perron(i, j) / bumps(i, j) * 0.98);
  Matrix p = perron + c * bumps;
  const double mx = p.maxCoeff();
  if (mx > 0.995) p *= 0.995 / mx;
  return (p + p.transpose()) / 2.0;
}

// Positions of the designated shared eigenvectors within the |lambda|-sorted
// spectrum: the Perron direction plus the K_s - 1 weakest directions.
inline std::vector<Index> shared_positions(Index k, Index k_shared) {
  std::vector<Index> pos;
  pos.push_back(0);
  for (Index j = k - k_shared + 1; j < k; ++j) pos.push_back(j);
  return pos;
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Stacks [center | privates], projects off the Perron direction and
// orthonormalizes. Column order survives Householder QR, so the leading
// columns still span the (perturbed) center.
inline Matrix orthonormal_directions(const Vector& perron, const Matrix& stack) {
  Matrix m = stack;
  m.noalias() -= perron * (perron.transpose() * m);
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  const Matrix r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  for (Index j = 0; j < m.cols(); ++j)
    require(std::abs(r(j, j)) > 1e-10, ErrorKind::GenerationInfeasible,
            "planted directions are linearly dependent");
  return q;
}

} // namespace detail

// Builds a planted target DCMM whose spectrum designates a shared subspace
// (Perron + weakest directions) and a private block with gap ratio
// d_p/Delta ~= gap_ratio, then surrounds it with source networks whose shared
// centers are the target's, perturbed at `noise` scale (S3 replaces the
// non-Perron center by an independently drawn one for the contaminated half).
// Sources carry the target's weak shared directions at full strength; that is
// what makes them informative.
inline Scenario generate_scenario(const ScenarioSpec& spec) {
  spec.validate();
  const Index d = spec.d;
  const Index k = spec.k_target;
  const Index ks = spec.k_shared;
  const Index km = spec.k_source;
  const int n_src = spec.m_total - 1;
  const Index n_mixed = d / 10;

  const Matrix p = detail::planted_connectivity(k, ks, spec.gap_ratio);

  model::DcmmParams params;
  model::ProbabilityMatrix h_target;
  spectral::EigenPairs eig;
  EigengapReport gap;
  bool ok = false;
  for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
    Rng theta_rng(substream(spec.seed, 1, static_cast<std::uint64_t>(attempt)));
    Vector theta(d);
    for (Index i = 0; i < d; ++i) theta(i) = 0.75 + 0.20 * theta_rng.uniform();
    Rng pi_rng(substream(spec.seed, 2, static_cast<std::uint64_t>(attempt)));
    Matrix pi = Matrix::Zero(d, k);
    for (Index i = 0; i < d - n_mixed; ++i) pi(i, i % k) = 1.0;
    for (Index i = d - n_mixed; i < d; ++i) {
      const Index c = i % k;
      const double w = 0.25 + 0.5 * pi_rng.uniform();
      pi(i, c) = w;
      pi(i, (c + 1) % k) = 1.0 - w;
    }
    params = model::DcmmParams{theta, pi, p};
    try {
      h_target = model::build_probability_matrix(params);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ProbabilityOutOfRange) throw;
      // one automatic theta rescale, then give up on this draw
      Matrix core = pi * p * pi.transpose();
      Matrix raw = theta.asDiagonal() * core * theta.asDiagonal();
      params.theta = theta * std::sqrt(0.995 / raw.maxCoeff());
      h_target = model::build_probability_matrix(params);
    }
    eig = spectral::top_eigenpairs(h_target.h, k);

    Matrix shared_cols(d, ks);
    const std::vector<Index> pos = detail::shared_positions(k, ks);
    for (std::size_t j = 0; j < pos.size(); ++j)
      shared_cols.col(static_cast<Index>(j)) = eig.basis.mat().col(pos[j]);
    const OrthonormalBasis shared(std::move(shared_cols), 1e-8);
    gap = eigengap_report(h_target.h, shared, k, ks);
    bool distinct = true;
    for (Index j = 0; j + 1 < k; ++j)
      if (std::abs(eig.values(j)) - std::abs(eig.values(j + 1)) <
          1e-4 * std::abs(eig.values(0)))
        distinct = false;
    if (distinct && gap.ratio >= 0.8 * spec.gap_ratio) ok = true;
  }
  require(ok, ErrorKind::GenerationInfeasible,
          "could not realize the requested gap ratio after 20 attempts");

  Scenario sc;
  sc.target_params = params;
  sc.h_target = h_target;
  sc.construction_bound = 2.0 * spec.noise * std::sqrt(static_cast<double>(ks));

  const Vector perron = eig.basis.mat().col(0);
  Matrix s_np(d, ks - 1); // non-Perron shared directions, spectrum order
  {
    const std::vector<Index> pos = detail::shared_positions(k, ks);
    for (std::size_t j = 1; j < pos.size(); ++j)
      s_np.col(static_cast<Index>(j - 1)) = eig.basis.mat().col(pos[j]);
  }
  {
    Matrix shared_cols(d, ks);
    shared_cols.col(0) = perron;
    shared_cols.rightCols(ks - 1) = s_np;
    sc.shared_basis = OrthonormalBasis(std::move(shared_cols), 1e-8);
  }

  // S3's unrelated common center for the contaminated group
  Matrix contam_np;
  if (spec.kind == ScenarioKind::S3) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      Rng crng(substream(spec.seed, 5, static_cast<std::uint64_t>(attempt)));
      Matrix raw(d, ks - 1);
      for (Index j = 0; j < ks - 1; ++j) raw.col(j) = sign_vector(d, crng);
      contam_np = detail::orthonormal_directions(perron, raw);
      Matrix center(d, ks);
      center.col(0) = perron;
      center.rightCols(ks - 1) = contam_np;
      if (spectral::projector_distance(OrthonormalBasis(std::move(center), 1e-8),
                                       sc.shared_basis) >= 1.0)
        break;
      require(attempt < 19, ErrorKind::GenerationInfeasible,
              "contaminated center is not separated from the shared subspace");
    }
  }

  const int n_inf = spec.kind == ScenarioKind::S3
                        ? detail::round_half_up(spec.frac_informative * n_src)
                        : n_src;
  require(n_inf >= 1, ErrorKind::GenerationInfeasible, "no informative sources");

  // Source strength on the shared directions: S1 sources are individually
  // weak so pooling keeps improving through large M (the transfer-gain curve);
  // S2/S3 sources are strong so selection margins are wide.
  const double lam1 = 1.25 * eig.values(0);
  const double shared_level = (spec.kind == ScenarioKind::S1 ? 0.15 : 0.30) * lam1;
  const double private_level = 0.12 * lam1;

  std::vector<int> informative_idx;
  for (int s = 0; s < n_src; ++s) {
    const bool informative = s < n_inf;
    if (informative) informative_idx.push_back(s);
    Rng srng(substream(spec.seed, 3, static_cast<std::uint64_t>(s + 2)));

    Matrix stack(d, km - 1);
    const Matrix& base_np = informative ? s_np : contam_np;
    for (Index j = 0; j < ks - 1; ++j) {
      Vector g(d);
      for (Index i = 0; i < d; ++i) g(i) = srng.gaussian();
      stack.col(j) = base_np.col(j) + (spec.noise / std::sqrt(static_cast<double>(d))) * g;
    }
    for (Index j = ks - 1; j < km - 1; ++j) stack.col(j) = sign_vector(d, srng);
    const Matrix dirs = detail::orthonormal_directions(perron, stack);

    Matrix h = lam1 * perron * perron.transpose();
    for (Index j = 0; j < km - 1; ++j) {
      const double level = j < ks - 1 ? shared_level : private_level;
      h.noalias() += level * dirs.col(j) * dirs.col(j).transpose();
    }
    // entries into [0,1]: lift along the Perron direction (eigenvectors are
    // untouched), then a uniform rescale (eigenvalue ratios are untouched)
    const double mn = h.minCoeff();
    if (mn < 0.0) {
      const Matrix pp = perron * perron.transpose();
      h += (-mn / pp.minCoeff()) * 1.02 * pp;
    }
    const double mx = h.maxCoeff();
    if (mx > 0.995) h *= 0.995 / mx;
    const model::ProbabilityMatrix hm{(h + h.transpose()) / 2.0};

    sc.x_sources.push_back(model::sample_adjacency(hm, substream(spec.seed, 7, static_cast<std::uint64_t>(s + 2))));
    Matrix center(d, ks);
    center.col(0) = perron;
    center.rightCols(ks - 1) = dirs.leftCols(ks - 1);
    sc.source_center_distance.push_back(
        spectral::projector_distance(OrthonormalBasis(std::move(center), 1e-8), sc.shared_basis));
  }
  sc.informative = transfer::SourceSet::from_indices(informative_idx);
  sc.x_target = model::sample_adjacency(h_target, substream(spec.seed, 6));
  return sc;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

enum class Method { Dcmm, Oracle, NonOracle };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Dcmm: return "dcmm";
    case Method::Oracle: return "oracle";
    case Method::NonOracle: return "non-oracle";
  }
  return "?";
}

struct RunnerOptions {
  double tau = 0.0;     // 0 means K_s / 2
  Index max_iters = 10;
  bool split = false;
  Index sketch_l = 10;
  Index power_q = 0;    // 0 means ceil(log d)
  Index sketch_p = 0;   // 0 means the width floors
  Index sketch_p_prime = 0;
};

struct ExperimentRow {
  std::string method;
  std::string scenario;
  Index d = 0;
  int m = 0;
  int replicate = 0;
  double error_h = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> selected;
  double precision = std::numeric_limits<double>::quiet_NaN();
  double recall = std::numeric_limits<double>::quiet_NaN();
  std::string status = "ok";
  double wall_ms = 0.0; // in-memory only; report files must be byte-stable
};

struct CellStats {
  std::string method, scenario;
  Index d = 0;
  int m = 0;
  int n_ok = 0, n_error = 0;
  double mean = 0.0, median = 0.0, stddev = 0.0;
  double mean_precision = std::numeric_limits<double>::quiet_NaN();
  double mean_recall = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentReport {
  std::vector<ExperimentRow> rows;

  std::string to_csv() const {
    std::string out = "method,scenario,d,m,replicate,error_h,selected_sources,precision,recall,status\n";
    for (const auto& r : rows) {
      out += r.method;
      out.push_back(',');
      out += r.scenario;
      out.push_back(',');
      out += std::to_string(r.d);
      out.push_back(',');
      out += std::to_string(r.m);
      out.push_back(',');
      out += std::to_string(r.replicate);
      out.push_back(',');
      if (r.status == "ok") out += io::format_double(r.error_h);
      out.push_back(',');
      for (std::size_t i = 0; i < r.selected.size(); ++i) {
        if (i > 0) out.push_back(';');
        out += std::to_string(r.selected[i]);
      }
      out.push_back(',');
      if (!std::isnan(r.precision)) out += io::format_double(r.precision);
      out.push_back(',');
      if (!std::isnan(r.recall)) out += io::format_double(r.recall);
      out.push_back(',');
      out += r.status;
      out.push_back('\n');
    }
    return out;
  }

  std::vector<CellStats> aggregate() const {
    std::vector<CellStats> cells;
    auto find = [&](const ExperimentRow& r) -> CellStats& {
      for (auto& c : cells)
        if (c.method == r.method && c.scenario == r.scenario && c.d == r.d && c.m == r.m)
          return c;
      cells.push_back(CellStats{r.method, r.scenario, r.d, r.m, 0, 0, 0, 0, 0,
                                std::numeric_limits<double>::quiet_NaN(),
                                std::numeric_limits<double>::quiet_NaN()});
      return cells.back();
    };
    // two passes: collect errors, then moments
    for (const auto& r : rows) find(r); // materialize cells in row order
    for (auto& c : cells) {
      std::vector<double> errs;
      double psum = 0.0, rsum = 0.0;
      int pr_n = 0;
      for (const auto& r : rows) {
        if (c.method != r.method || c.scenario != r.scenario || c.d != r.d || c.m != r.m) continue;
        if (r.status != "ok") {
          ++c.n_error;
          continue;
        }
        ++c.n_ok;
        errs.push_back(r.error_h);
        if (!std::isnan(r.precision)) {
          psum += r.precision;
          rsum += r.recall;
          ++pr_n;
        }
      }
      if (!errs.empty()) {
        double s = 0.0;
        for (double e : errs) s += e;
        c.mean = s / static_cast<double>(errs.size());
        double v = 0.0;
        for (double e : errs) v += (e - c.mean) * (e - c.mean);
        c.stddev = errs.size() > 1 ? std::sqrt(v / static_cast<double>(errs.size() - 1)) : 0.0;
        std::vector<double> sorted = errs;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t n = sorted.size();
        c.median = n % 2 == 1 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
      }
      if (pr_n > 0) {
        c.mean_precision = psum / pr_n;
        c.mean_recall = rsum / pr_n;
      }
    }
    return cells;
  }

  std::string summary_json() const {
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& c : aggregate()) {
      nlohmann::ordered_json cell;
      cell["method"] = c.method;
      cell["scenario"] = c.scenario;
      cell["d"] = c.d;
      cell["m"] = c.m;
      cell["n_ok"] = c.n_ok;
      cell["n_error"] = c.n_error;
      cell["mean_error_h"] = c.mean;
      cell["median_error_h"] = c.median;
      cell["std_error_h"] = c.stddev;
      if (!std::isnan(c.mean_precision)) {
        cell["mean_precision"] = c.mean_precision;
        cell["mean_recall"] = c.mean_recall;
      }
      out.push_back(std::move(cell));
    }
    return out.dump(2) + "\n";
  }
};

namespace detail {

inline std::uint64_t cell_key(const ScenarioSpec& s) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(s.kind) + 1);
  h = substream(h, static_cast<std::uint64_t>(s.d));
  h = substream(h, static_cast<std::uint64_t>(s.k_target));
  h = substream(h, static_cast<std::uint64_t>(s.k_shared));
  h = substream(h, static_cast<std::uint64_t>(s.k_source));
  h = substream(h, static_cast<std::uint64_t>(std::llround(s.noise * 1e6)));
  h = substream(h, static_cast<std::uint64_t>(std::llround(s.frac_informative * 1e6)));
  h = substream(h, static_cast<std::uint64_t>(std::llround(s.gap_ratio * 1e6)));
  h = substream(h, s.seed);
  return h; // deliberately independent of m_total: source draws nest across M
}

inline transfer::TransferConfig cell_config(const ScenarioSpec& cell, const RunnerOptions& opt,
                                            std::uint64_t seed) {
  transfer::TransferConfig cfg;
  cfg.k_target = cell.k_target;
  cfg.k_shared = cell.k_shared;
  cfg.k_sources.assign(static_cast<std::size_t>(cell.m_total - 1), cell.k_source);
  cfg.sketch = spectral::SketchConfig::defaults(cell.d, cell.k_shared, 0);
  cfg.sketch.l = opt.sketch_l;
  if (opt.power_q > 0) cfg.sketch.q = opt.power_q;
  cfg.sketch.p = opt.sketch_p > 0
                     ? opt.sketch_p
                     : std::max(2 * cfg.k_shared, cfg.k_shared + 8 * cfg.sketch.q - 1);
  if (opt.sketch_p_prime > 0) cfg.sketch.p_prime = opt.sketch_p_prime;
  cfg.split_sources = opt.split;
  cfg.tau = opt.tau > 0.0 ? opt.tau : static_cast<double>(cell.k_shared) / 2.0;
  cfg.max_iters = opt.max_iters;
  cfg.seed = seed;
  return cfg;
}

} // namespace detail

// Runs every (cell, replicate, method) combination; failures become rows with
// an error status instead of aborting the sweep. Rows are a pure function of
// the inputs and the master seed, independent of the thread count.
inline ExperimentReport run_experiment(std::span<const ScenarioSpec> cells,
                                       std::span<const Method> methods, int reps,
                                       const RunnerOptions& opt, std::uint64_t master_seed,
                                       int threads = 1) {
  require(reps >= 1, ErrorKind::ParamInvariantViolated, "reps must be >= 1");
  require(!cells.empty() && !methods.empty(), ErrorKind::ParamInvariantViolated,
          "empty experiment grid");
  ExperimentReport report;
  const std::size_t per_rep = methods.size();
  const std::size_t per_cell = static_cast<std::size_t>(reps) * per_rep;
  report.rows.resize(cells.size() * per_cell);

  const int jobs = static_cast<int>(cells.size()) * reps;
  parallel_for(jobs, threads, [&](int job) {
    const std::size_t ci = static_cast<std::size_t>(job) / static_cast<std::size_t>(reps);
    const int rep = job % reps;
    const ScenarioSpec& cell = cells[ci];
    ScenarioSpec draw = cell;
    draw.seed = substream(master_seed, detail::cell_key(cell), static_cast<std::uint64_t>(rep));

    std::vector<ExperimentRow> out(per_rep);
    for (std::size_t mi = 0; mi < per_rep; ++mi) {
      ExperimentRow& row = out[mi];
      row.method = to_string(methods[mi]);
      row.scenario = to_string(cell.kind);
      row.d = cell.d;
      row.m = cell.m_total;
      row.replicate = rep;
    }

    try {
      const Scenario sc = generate_scenario(draw);
      std::vector<Matrix> sources;
      sources.reserve(sc.x_sources.size());
      for (const auto& x : sc.x_sources) sources.push_back(x.x);

      for (std::size_t mi = 0; mi < per_rep; ++mi) {
        ExperimentRow& row = out[mi];
        const auto t0 = std::chrono::steady_clock::now();
        try {
          const transfer::TransferConfig cfg = detail::cell_config(
              draw, opt, substream(draw.seed, 100, static_cast<std::uint64_t>(mi)));
          model::ProbabilityMatrix h_hat;
          switch (methods[mi]) {
            case Method::Dcmm: {
              h_hat = mixed_score::full_pipeline(sc.x_target.x, std::nullopt, cfg.k_target).h_hat;
              break;
            }
            case Method::Oracle: {
              const auto tb = transfer::oracle_transfer(sc.x_target.x, sources, cfg);
              h_hat = mixed_score::full_pipeline(sc.x_target.x, tb.combined, cfg.k_target).h_hat;
              break;
            }
            case Method::NonOracle: {
              const auto res = transfer::non_oracle_transfer(sc.x_target.x, sources, cfg);
              h_hat = mixed_score::full_pipeline(sc.x_target.x, res.basis.combined, cfg.k_target).h_hat;
              row.selected = res.selected.ids;
              std::size_t hit = 0;
              for (int id : res.selected.ids)
                if (sc.informative.contains(id)) ++hit;
              row.precision = res.selected.empty()
                                  ? 1.0
                                  : static_cast<double>(hit) / static_cast<double>(res.selected.size());
              row.recall = sc.informative.empty()
                               ? 1.0
                               : static_cast<double>(hit) / static_cast<double>(sc.informative.size());
              break;
            }
          }
          row.error_h = d_metric(h_hat.h, sc.h_target.h);
        } catch (const Error& e) {
          row.status = std::string("error:") + nettl::to_string(e.kind());
        }
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
    } catch (const Error& e) {
      for (auto& row : out) row.status = std::string("error:") + nettl::to_string(e.kind());
    }
    for (std::size_t mi = 0; mi < per_rep; ++mi)
      report.rows[ci * per_cell + static_cast<std::size_t>(rep) * per_rep + mi] = std::move(out[mi]);
  });
  return report;
}

} // namespace nettl::eval
