#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nettl/errors.hpp"
#include "nettl/mixed_score.hpp"
#include "nettl/rng.hpp"
#include "nettl/spectral.hpp"
#include "nettl/types.hpp"

namespace nettl::transfer {

using spectral::OrthonormalBasis;
using spectral::SketchConfig;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct TransferConfig {
  Index k_target = 0;               // K_1
  Index k_shared = 0;               // K_s
  std::vector<Index> k_sources;     // per-source K_m; empty means all = k_target
  SketchConfig sketch;
  bool split_sources = false;       // sample split of Algorithm-style analysis
  double tau = 0.0;                 // selection threshold, in (0, K_s) when selecting
  Index max_iters = 10;             // selection iterations T
  std::uint64_t seed = 0;
  int threads = 1;

  Index k_source(std::size_t i) const {
    return k_sources.empty() ? k_target : k_sources.at(i);
  }

  void validate(bool selecting = false) const {
    require(k_target >= 1, ErrorKind::KOutOfRange, "K_1 must be >= 1");
    require(k_shared >= 1 && k_shared <= k_target, ErrorKind::KOutOfRange,
            "K_s must lie in [1, K_1]");
    sketch.validate();
    if (selecting) {
      require(tau > 0.0 && tau < static_cast<double>(k_shared), ErrorKind::ParamInvariantViolated,
              "tau must lie in (0, K_s) for selection");
      require(max_iters >= 1, ErrorKind::ParamInvariantViolated, "max_iters must be >= 1");
    }
  }
};

// Sorted, duplicate-free source identifiers; the target (index 1) is excluded.
struct SourceSet {
  std::vector<int> ids;

  static SourceSet from_indices(std::span<const int> zero_based) {
    SourceSet s;
    s.ids.reserve(zero_based.size());
    for (int i : zero_based) s.ids.push_back(i + 2);
    std::sort(s.ids.begin(), s.ids.end());
    s.ids.erase(std::unique(s.ids.begin(), s.ids.end()), s.ids.end());
    return s;
  }

  bool contains(int id) const {
    return std::binary_search(ids.begin(), ids.end(), id);
  }
  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const SourceSet&) const = default;
};

// Shared + private split of the target basis; combined = [private | shared].
struct TransferBasis {
  OrthonormalBasis shared;
  OrthonormalBasis priv;
  OrthonormalBasis combined;
};

struct SelectionRound {
  std::vector<int> candidates;    // source ids examined this round
  std::vector<double> alignment;  // tr(shared shared' Xi_m Xi_m') per candidate
  std::vector<int> kept;          // ids surviving the threshold
};

struct SelectionTrace {
  std::vector<SelectionRound> rounds;
};

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

inline std::vector<OrthonormalBasis> per_network_bases(std::span<const Matrix> xs,
                                                       std::span<const Index> ks) {
  require(xs.size() == ks.size(), ErrorKind::DimensionMismatch,
          "networks and dimension list disagree");
  std::vector<OrthonormalBasis> bases;
  bases.reserve(xs.size());
  for (std::size_t m = 0; m < xs.size(); ++m) {
    try {
      bases.push_back(spectral::top_eigenpairs(xs[m], ks[m]).basis);
    } catch (const Error& e) {
      throw Error(e.kind(), "network " + std::to_string(m) + ": " + e.what());
    }
  }
  return bases;
}

// Shared-subspace estimate from a pool of per-network bases: average the
// projectors and run the two-step randomized pipeline on the average.
inline OrthonormalBasis estimate_shared(std::span<const OrthonormalBasis> bases,
                                        const SketchConfig& sketch, std::uint64_t seed,
                                        int threads = 1) {
  require(!bases.empty(), ErrorKind::EmptySources, "no bases to pool");
  const Matrix sigma_hat = spectral::average_projector(bases);
  return spectral::shared_from_projector(sigma_hat, sketch, seed, threads);
}

namespace detail {

// Top (K_1 - K_s) eigenvectors of the deflated target, re-orthogonalized
// against the shared basis. Empty when K_1 == K_s.
inline OrthonormalBasis private_step(const Matrix& x_target, const OrthonormalBasis& left,
                                     const OrthonormalBasis& right, Index k_private) {
  if (k_private == 0) return OrthonormalBasis::empty(x_target.rows());
  Matrix xp = spectral::deflate(x_target, left, right);
  xp = symmetrized(xp); // split halves make it slightly asymmetric
  Matrix raw = spectral::top_eigenpairs(xp, k_private).basis.mat();
  raw.noalias() -= left.mat() * (left.mat().transpose() * raw);
  Eigen::HouseholderQR<Matrix> qr(raw);
  Matrix q = qr.householderQ() * Matrix::Identity(raw.rows(), k_private);
  const Matrix r = qr.matrixQR().topRows(k_private).triangularView<Eigen::Upper>();
  for (Index j = 0; j < k_private; ++j)
    require(std::abs(r(j, j)) > 1e-10, ErrorKind::RankCollapse,
            "private directions collapse onto the shared subspace");
  spectral::fix_column_signs(q);
  return OrthonormalBasis(std::move(q), 1e-8);
}

inline TransferBasis assemble(const Matrix& x_target, const OrthonormalBasis& shared_left,
                              const OrthonormalBasis& shared_right, const TransferConfig& cfg) {
  const Index kp = cfg.k_target - cfg.k_shared;
  OrthonormalBasis priv = private_step(x_target, shared_left, shared_right, kp);
  Matrix combined(x_target.rows(), cfg.k_target);
  if (kp > 0) combined.leftCols(kp) = priv.mat();
  combined.rightCols(cfg.k_shared) = shared_left.mat();
  return TransferBasis{shared_left, std::move(priv), OrthonormalBasis(std::move(combined), 1e-8)};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Oracle transfer: the informative set is taken as given (all sources)
// ---------------------------------------------------------------------------

inline TransferBasis oracle_transfer(const Matrix& x_target, std::span<const Matrix> sources,
                                     const TransferConfig& cfg) {
  cfg.validate();
  std::vector<Matrix> xs;
  std::vector<Index> ks;
  xs.reserve(sources.size() + 1);
  ks.reserve(sources.size() + 1);
  xs.push_back(x_target);
  ks.push_back(cfg.k_target);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    xs.push_back(sources[i]);
    ks.push_back(cfg.k_source(i));
  }
  const std::vector<OrthonormalBasis> bases = per_network_bases(xs, ks);

  OrthonormalBasis s1, s2;
  if (cfg.split_sources) {
    require(!sources.empty(), ErrorKind::EmptySources, "sample split needs at least one source");
    const std::size_t n = bases.size();
    const std::size_t half = (n + 1) / 2; // |I_1| = |I_2| or |I_1| = |I_2| + 1
    std::vector<OrthonormalBasis> first(bases.begin(), bases.begin() + static_cast<long>(half));
    std::vector<OrthonormalBasis> second(bases.begin() + static_cast<long>(half), bases.end());
    s1 = estimate_shared(first, cfg.sketch, substream(cfg.seed, 11), cfg.threads);
    s2 = estimate_shared(second, cfg.sketch, substream(cfg.seed, 12), cfg.threads);
  } else {
    s1 = estimate_shared(bases, cfg.sketch, substream(cfg.seed, 10), cfg.threads);
    s2 = s1;
  }
  return detail::assemble(x_target, s1, s2, cfg);
}

// ---------------------------------------------------------------------------
// Iterative truncated source selection
// ---------------------------------------------------------------------------

namespace detail {

inline std::pair<SourceSet, OrthonormalBasis> select_sources_impl(
    const OrthonormalBasis& target_basis, std::span<const OrthonormalBasis> source_bases,
    const TransferConfig& cfg, const std::optional<OrthonormalBasis>& init,
    SelectionTrace* trace) {
  const double threshold = static_cast<double>(cfg.k_shared) - cfg.tau;
  // Default initialization: the full K_1-dim target basis. The trace rule
  // handles mismatched ranks, and unlike a sketched K_s-subspace of the
  // (degenerate) single-network projector it carries the target's actual
  // eigendirections.
  OrthonormalBasis cur = init.value_or(target_basis);

  std::vector<int> current(source_bases.size());
  std::iota(current.begin(), current.end(), 0);

  auto pool_estimate = [&](const std::vector<int>& members, Index round) {
    std::vector<OrthonormalBasis> pool;
    pool.reserve(members.size() + 1);
    pool.push_back(target_basis);
    for (int m : members) pool.push_back(source_bases[static_cast<std::size_t>(m)]);
    return estimate_shared(pool, cfg.sketch, substream(cfg.seed, 20, static_cast<std::uint64_t>(round)),
                           cfg.threads);
  };

  OrthonormalBasis shared = cur;
  for (Index t = 1; t <= cfg.max_iters; ++t) {
    SelectionRound round;
    std::vector<int> kept;
    for (int m : current) {
      const double a = spectral::trace_alignment(cur, source_bases[static_cast<std::size_t>(m)]);
      round.candidates.push_back(m + 2);
      round.alignment.push_back(a);
      if (a >= threshold) {
        kept.push_back(m);
        round.kept.push_back(m + 2);
      }
    }
    shared = pool_estimate(kept, t);
    if (trace) trace->rounds.push_back(std::move(round));
    const bool stable = kept == current;
    current = std::move(kept);
    cur = shared;
    // round 1 scores against the init basis, whose rank can exceed K_s, so a
    // stable first round is not yet a fixed point of the K_s-dim rule
    if (stable && t >= 2) break;
  }
  return {SourceSet::from_indices(current), shared};
}

} // namespace detail

// Iterates the truncation rule I_t = {m : tr(P_shared P_m) >= K_s - tau},
// recomputing the pooled shared estimate on {target} + I_t each round, until
// the set stabilizes. An empty final set is not an error: the target-only
// estimate is returned.
inline std::pair<SourceSet, OrthonormalBasis> select_sources(
    const Matrix& x_target, std::span<const Matrix> sources, const TransferConfig& cfg,
    const std::optional<OrthonormalBasis>& init = std::nullopt, SelectionTrace* trace = nullptr) {
  cfg.validate();
  require(cfg.max_iters >= 1, ErrorKind::ParamInvariantViolated, "max_iters must be >= 1");
  const OrthonormalBasis target_basis = spectral::top_eigenpairs(x_target, cfg.k_target).basis;
  std::vector<OrthonormalBasis> source_bases;
  source_bases.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i)
    source_bases.push_back(spectral::top_eigenpairs(sources[i], cfg.k_source(i)).basis);
  return detail::select_sources_impl(target_basis, source_bases, cfg, init, trace);
}

struct NonOracleResult {
  TransferBasis basis;
  SourceSet selected;
};

// Selection followed by the private fine-tuning step on the selected pool.
// With nothing selected the result degenerates to the traditional single-
// network basis, bit for bit.
inline NonOracleResult non_oracle_transfer(const Matrix& x_target, std::span<const Matrix> sources,
                                           const TransferConfig& cfg,
                                           const std::optional<OrthonormalBasis>& init = std::nullopt,
                                           SelectionTrace* trace = nullptr) {
  cfg.validate();
  auto [set, shared] = select_sources(x_target, sources, cfg, init, trace);
  if (set.empty()) {
    const OrthonormalBasis full = spectral::top_eigenpairs(x_target, cfg.k_target).basis;
    const Index kp = cfg.k_target - cfg.k_shared;
    TransferBasis tb;
    tb.priv = OrthonormalBasis(full.mat().leftCols(kp), 1e-8);
    tb.shared = OrthonormalBasis(full.mat().rightCols(cfg.k_shared), 1e-8);
    tb.combined = full; // [private | shared] in the original eigen order
    return NonOracleResult{std::move(tb), std::move(set)};
  }
  TransferBasis tb = detail::assemble(x_target, shared, shared, cfg);
  return NonOracleResult{std::move(tb), std::move(set)};
}

// ---------------------------------------------------------------------------
// Cross-validation for tau
// ---------------------------------------------------------------------------

// Masks 10% of the target's node pairs (5 seeded masks), imputes them with the
// unmasked edge density, runs selection + transfer + estimation on the
// training copy and scores the held-out pairs by Bernoulli log-likelihood of
// H_hat. Returns the argmax over the grid; ties go to the smallest tau.
inline double cross_validate_tau(const Matrix& x_target, std::span<const Matrix> sources,
                                 const TransferConfig& cfg, std::span<const double> grid,
                                 std::vector<double>* scores_out = nullptr) {
  require(!grid.empty(), ErrorKind::ParamInvariantViolated, "empty tau grid");
  for (double tau : grid)
    require(tau > 0.0 && tau < static_cast<double>(cfg.k_shared),
            ErrorKind::ParamInvariantViolated, "tau grid entries must lie in (0, K_s)");
  const Index d = x_target.rows();
  constexpr int kMasks = 5;
  constexpr double kHoldout = 0.10;

  std::vector<OrthonormalBasis> source_bases;
  source_bases.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i)
    source_bases.push_back(spectral::top_eigenpairs(sources[i], cfg.k_source(i)).basis);

  std::vector<double> scores(grid.size(), 0.0);
  for (int rep = 0; rep < kMasks; ++rep) {
    Rng rng(substream(cfg.seed, 30, static_cast<std::uint64_t>(rep)));
    std::vector<std::pair<Index, Index>> held;
    double unmasked_sum = 0.0;
    long unmasked_count = 0;
    Matrix train = x_target;
    for (Index i = 0; i < d; ++i)
      for (Index j = i + 1; j < d; ++j) {
        if (rng.uniform() <= kHoldout) {
          held.emplace_back(i, j);
        } else {
          unmasked_sum += x_target(i, j);
          ++unmasked_count;
        }
      }
    const double density = unmasked_count > 0 ? unmasked_sum / static_cast<double>(unmasked_count) : 0.0;
    for (auto [i, j] : held) {
      train(i, j) = density;
      train(j, i) = density;
    }
    const OrthonormalBasis train_basis = spectral::top_eigenpairs(train, cfg.k_target).basis;

    for (std::size_t g = 0; g < grid.size(); ++g) {
      TransferConfig run = cfg;
      run.tau = grid[g];
      auto [set, shared] = detail::select_sources_impl(train_basis, source_bases, run,
                                                       std::nullopt, nullptr);
      OrthonormalBasis combined;
      if (set.empty()) {
        combined = train_basis;
      } else {
        combined = detail::assemble(train, shared, shared, run).combined;
      }
      const auto est = mixed_score::full_pipeline(train, combined, run.k_target);
      double ll = 0.0;
      for (auto [i, j] : held) {
        const double p = std::clamp(est.h_hat.h(i, j), 1e-6, 1.0 - 1e-6);
        ll += x_target(i, j) > 0.5 ? std::log(p) : std::log1p(-p);
      }
      scores[g] += ll / static_cast<double>(kMasks);
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (scores[g] > scores[best] || (scores[g] == scores[best] && grid[g] < grid[best]))
      best = g; // ties go to the smallest tau
  if (scores_out) *scores_out = std::move(scores);
  return grid[best];
}

} // namespace nettl::transfer
