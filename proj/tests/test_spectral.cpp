#include <catch2/catch_amalgamated.hpp>

#include "nettl/rng.hpp"
#include "nettl/spectral.hpp"

using namespace nettl;
using spectral::OrthonormalBasis;
using spectral::SketchConfig;

namespace {

Matrix random_symmetric(Index d, std::uint64_t seed) {
  Matrix g = gaussian_matrix(d, d, seed);
  return (g + g.transpose()) / 2.0;
}

// Haar-ish random orthonormal basis via QR of a Gaussian matrix.
OrthonormalBasis random_basis(Index d, Index k, std::uint64_t seed) {
  const Matrix g = gaussian_matrix(d, k, seed);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, k);
  return OrthonormalBasis(std::move(q));
}

// Symmetric matrix with a prescribed spectrum on a random eigenbasis.
Matrix planted_spectrum(Index d, const Vector& lambda, std::uint64_t seed) {
  const OrthonormalBasis q = random_basis(d, d, seed);
  return q.mat() * lambda.asDiagonal() * q.mat().transpose();
}

} // namespace

TEST_CASE("top_eigenpairs: diagonal examples") {
  SECTION("diag(3,2,1), k = 2") {
    Vector diag(3);
    diag << 3.0, 2.0, 1.0;
    const auto ep = spectral::top_eigenpairs(diag.asDiagonal(), 2);
    REQUIRE(ep.values(0) == Catch::Approx(3.0));
    REQUIRE(ep.values(1) == Catch::Approx(2.0));
    REQUIRE(std::abs(ep.basis.mat()(0, 0)) == Catch::Approx(1.0));
    REQUIRE(ep.basis.mat()(0, 0) > 0.0); // sign rule
    REQUIRE(std::abs(ep.basis.mat()(1, 1)) == Catch::Approx(1.0));
    REQUIRE(ep.basis.mat()(1, 1) > 0.0);
  }
  SECTION("ordering is by |lambda|: diag(1,-5), k = 1") {
    Vector diag(2);
    diag << 1.0, -5.0;
    const auto ep = spectral::top_eigenpairs(diag.asDiagonal(), 1);
    REQUIRE(ep.values(0) == Catch::Approx(-5.0));
    REQUIRE(std::abs(ep.basis.mat()(1, 0)) == Catch::Approx(1.0));
  }
}

TEST_CASE("top_eigenpairs: full reconstruction oracle") {
  const Matrix s = random_symmetric(8, 42);
  const auto ep = spectral::top_eigenpairs(s, 8);
  const Matrix rec =
      ep.basis.mat() * ep.values.asDiagonal() * ep.basis.mat().transpose();
  REQUIRE((rec - s).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("top_eigenpairs: errors") {
  Matrix asym = Matrix::Zero(3, 3);
  asym(0, 1) = 1.0;
  REQUIRE_THROWS_MATCHES(spectral::top_eigenpairs(asym, 1), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.kind() == ErrorKind::NotSymmetric; }));
  const Matrix ok = Matrix::Identity(3, 3);
  REQUIRE_THROWS_MATCHES(spectral::top_eigenpairs(ok, 4), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.kind() == ErrorKind::KOutOfRange; }));
  REQUIRE_THROWS_AS(spectral::top_eigenpairs(ok, 0), Error);
}

TEST_CASE("average_projector") {
  SECTION("single basis is idempotent") {
    const auto b = random_basis(10, 3, 1);
    std::vector<OrthonormalBasis> bases{b};
    const Matrix p = spectral::average_projector(bases);
    REQUIRE((p * p - p).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("two identical rank-k bases keep eigenvalue 1 with multiplicity k") {
    const auto b = random_basis(10, 3, 2);
    std::vector<OrthonormalBasis> bases{b, b};
    const Matrix p = spectral::average_projector(bases);
    const auto ep = spectral::top_eigenpairs(p, 10);
    for (Index i = 0; i < 3; ++i) REQUIRE(ep.values(i) == Catch::Approx(1.0).margin(1e-10));
    for (Index i = 3; i < 10; ++i) REQUIRE(std::abs(ep.values(i)) < 1e-10);
  }
  SECTION("orthogonal axes average to diag(0.5, 0.5)") {
    Matrix e1(2, 1), e2(2, 1);
    e1 << 1.0, 0.0;
    e2 << 0.0, 1.0;
    std::vector<OrthonormalBasis> bases{OrthonormalBasis(e1), OrthonormalBasis(e2)};
    const Matrix p = spectral::average_projector(bases);
    REQUIRE(p(0, 0) == Catch::Approx(0.5));
    REQUIRE(p(1, 1) == Catch::Approx(0.5));
    REQUIRE(std::abs(p(0, 1)) < 1e-15);
  }
  SECTION("dimension mismatch") {
    std::vector<OrthonormalBasis> bases{random_basis(4, 2, 3), random_basis(5, 2, 4)};
    REQUIRE_THROWS_AS(spectral::average_projector(bases), Error);
  }
}

TEST_CASE("projector_distance and trace_alignment") {
  SECTION("identical bases") {
    const auto b = random_basis(12, 4, 5);
    REQUIRE(spectral::projector_distance(b, b) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(spectral::trace_alignment(b, b) == Catch::Approx(4.0).margin(1e-10));
  }
  SECTION("orthogonal one-dimensional subspaces") {
    Matrix e1(2, 1), e2(2, 1);
    e1 << 1.0, 0.0;
    e2 << 0.0, 1.0;
    REQUIRE(spectral::projector_distance(OrthonormalBasis(e1), OrthonormalBasis(e2)) ==
            Catch::Approx(std::sqrt(2.0)));
    REQUIRE(spectral::trace_alignment(OrthonormalBasis(e1), OrthonormalBasis(e2)) ==
            Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("basis invariance under rotation") {
    const auto b = random_basis(10, 3, 6);
    const auto rot = random_basis(3, 3, 7); // orthogonal 3x3
    const OrthonormalBasis rotated(b.mat() * rot.mat());
    REQUIRE(spectral::projector_distance(b, rotated) < 1e-10);
  }
  SECTION("identity distance^2 = k_a + k_b - 2 alignment on random bases") {
    for (int trial = 0; trial < 100; ++trial) {
      const Index ka = 2 + trial % 3, kb = 1 + trial % 4;
      const auto a = random_basis(15, ka, substream(100, trial, 0));
      const auto b = random_basis(15, kb, substream(100, trial, 1));
      const double dist = spectral::projector_distance(a, b);
      const double tr = spectral::trace_alignment(a, b);
      REQUIRE(std::abs(dist * dist - (static_cast<double>(ka) + static_cast<double>(kb) - 2.0 * tr)) < 1e-10);
    }
  }
}

TEST_CASE("projector split decomposition") {
  // Xi split into orthogonal sub-bases: projectors add and annihilate
  for (int trial = 0; trial < 20; ++trial) {
    const auto full = random_basis(12, 5, substream(200, trial));
    const OrthonormalBasis s(full.mat().leftCols(2));
    const OrthonormalBasis p(full.mat().rightCols(3));
    const Matrix diff = full.projector() - s.projector() - p.projector();
    REQUIRE(diff.norm() < 1e-10);
    REQUIRE((s.projector() * p.projector()).norm() < 1e-10);
  }
}

TEST_CASE("deflate") {
  SECTION("full basis of the range annihilates the matrix") {
    Vector lambda = Vector::Zero(8);
    lambda(0) = 3.0;
    lambda(1) = 1.0;
    const Matrix x = planted_spectrum(8, lambda, 8);
    const auto ep = spectral::top_eigenpairs(x, 2);
    const Matrix res = spectral::deflate(x, ep.basis, ep.basis);
    REQUIRE(res.cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("empty basis leaves the matrix unchanged") {
    const Matrix x = random_symmetric(6, 9);
    const auto e = OrthonormalBasis::empty(6);
    REQUIRE((spectral::deflate(x, e, e) - x).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("rank-one annihilation and orthogonal invariance") {
    Vector v = Vector::Zero(5);
    v(0) = 1.0;
    Vector w = Vector::Zero(5);
    w(1) = 1.0;
    const Matrix x = v * v.transpose();
    const OrthonormalBasis bv{Matrix(v)}, bw{Matrix(w)};
    REQUIRE(spectral::deflate(x, bv, bv).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE((spectral::deflate(x, bw, bw) - x).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("deflation is idempotent") {
    const Matrix x = random_symmetric(10, 10);
    const auto b = random_basis(10, 3, 11);
    const Matrix once = spectral::deflate(x, b, b);
    const Matrix twice = spectral::deflate(once, b, b);
    REQUIRE((once - twice).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("sketch_top_subspace") {
  SECTION("exact projector: sketch spans the same subspace") {
    const auto b = random_basis(20, 3, 12);
    const Matrix sigma = b.projector();
    const auto sk = spectral::sketch_top_subspace(sigma, 6, 3, 77);
    REQUIRE(spectral::projector_distance(sk, b) < 1e-8);
  }
  SECTION("zero matrix collapses") {
    REQUIRE_THROWS_MATCHES(spectral::sketch_top_subspace(Matrix::Zero(10, 10), 4, 2, 1), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::RankCollapse;
                           }));
  }
  SECTION("width below k is rejected") {
    REQUIRE_THROWS_MATCHES(spectral::sketch_top_subspace(Matrix::Identity(5, 5), 1, 2, 1), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::WidthTooSmall;
                           }));
  }
  SECTION("eigengap 100: close to the exact top subspace across seeds") {
    const Index d = 12, k = 2;
    Vector lambda = Vector::Zero(d);
    for (Index i = 0; i < k; ++i) lambda(i) = 100.0;
    for (Index i = k; i < d; ++i) lambda(i) = 1.0;
    const Matrix sigma = planted_spectrum(d, lambda, 13);
    const auto exact = spectral::top_eigenpairs(sigma, k);
    std::vector<double> dist;
    for (int s = 0; s < 100; ++s) {
      const auto sk = spectral::sketch_top_subspace(sigma, 2 * k, k, substream(300, s));
      dist.push_back(spectral::projector_distance(sk, exact.basis));
    }
    std::sort(dist.begin(), dist.end());
    REQUIRE(dist[50] < 0.05);
  }
}

TEST_CASE("power_sketch") {
  SECTION("projector input: q does not matter") {
    const auto b = random_basis(25, 3, 14);
    const Matrix sigma = b.projector();
    SketchConfig c1 = SketchConfig::defaults(25, 3, 5);
    c1.q = 1;
    c1.p = std::max(2 * c1.k_s, c1.k_s + 8 * c1.q - 1);
    SketchConfig c5 = c1;
    c5.q = 5;
    c5.p = std::max(2 * c5.k_s, c5.k_s + 8 * c5.q - 1);
    const auto r1 = spectral::power_sketch(sigma, c1);
    const auto r5 = spectral::power_sketch(sigma, c5);
    REQUIRE(spectral::projector_distance(r1, r5) < 1e-8);
    REQUIRE(spectral::projector_distance(r1, b) < 1e-8);
  }
  SECTION("average of two projectors sharing an intersection") {
    const Index d = 100, ks = 2;
    const auto all = random_basis(d, ks + 4, 15);
    const OrthonormalBasis shared(all.mat().leftCols(ks));
    Matrix m1(d, ks + 2), m2(d, ks + 2);
    m1 << shared.mat(), all.mat().middleCols(ks, 2);
    m2 << shared.mat(), all.mat().middleCols(ks + 2, 2);
    std::vector<OrthonormalBasis> bases{OrthonormalBasis(m1), OrthonormalBasis(m2)};
    const Matrix sigma = spectral::average_projector(bases);
    SketchConfig cfg = SketchConfig::defaults(d, ks, 5);
    cfg.q = static_cast<Index>(std::ceil(std::log(static_cast<double>(d))));
    const auto est = spectral::power_sketch(sigma, cfg);
    REQUIRE(spectral::projector_distance(est, shared) < 0.1);
  }
  SECTION("doubling q does not hurt (median over 50 seeds)") {
    const Index d = 30, ks = 2;
    Vector lambda = Vector::Zero(d);
    lambda(0) = 1.0;
    lambda(1) = 0.9;
    for (Index i = ks; i < 8; ++i) lambda(i) = 0.55;
    const Matrix sigma = planted_spectrum(d, lambda, 16);
    const auto exact = spectral::top_eigenpairs(sigma, ks);
    auto median_err = [&](Index q) {
      std::vector<double> errs;
      for (int s = 0; s < 50; ++s) {
        SketchConfig cfg = SketchConfig::defaults(d, ks, substream(400, s));
        cfg.q = q;
        cfg.p = std::max(2 * ks, ks + 8 * cfg.q - 1);
        errs.push_back(spectral::projector_distance(spectral::power_sketch(sigma, cfg), exact.basis));
      }
      std::sort(errs.begin(), errs.end());
      return errs[25];
    };
    REQUIRE(median_err(4) <= median_err(2) + 1e-9);
  }
}

TEST_CASE("two-step pipeline consistency with the exact decomposition") {
  // p = p' = d, L = 1, q = 1 on an exact projector reproduces the span
  const Index d = 18, ks = 3;
  const auto b = random_basis(d, ks, 17);
  SketchConfig cfg;
  cfg.k_s = ks;
  cfg.l = 1;
  cfg.p = d;
  cfg.p_prime = d;
  cfg.q = 1;
  const auto est = spectral::shared_from_projector(b.projector(), cfg, 55);
  const auto exact = spectral::top_eigenpairs(b.projector(), ks);
  REQUIRE(spectral::projector_distance(est, exact.basis) < 1e-8);
}

TEST_CASE("sketches are deterministic and thread-count independent") {
  const Index d = 30, ks = 2;
  const auto b = random_basis(d, ks + 2, 18);
  const Matrix sigma = b.projector();
  SketchConfig cfg = SketchConfig::defaults(d, ks, 0);
  const auto r1 = spectral::shared_from_projector(sigma, cfg, 123, 1);
  const auto r4 = spectral::shared_from_projector(sigma, cfg, 123, 4);
  REQUIRE(r1.mat() == r4.mat()); // bitwise
  const auto again = spectral::shared_from_projector(sigma, cfg, 123, 2);
  REQUIRE(r1.mat() == again.mat());
}

TEST_CASE("SketchConfig invariants") {
  SketchConfig cfg = SketchConfig::defaults(50, 2, 0);
  REQUIRE_NOTHROW(cfg.validate());
  cfg.p = 2; // below the floor
  REQUIRE_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("OrthonormalBasis validation") {
  Matrix bad = Matrix::Ones(4, 2);
  REQUIRE_THROWS_MATCHES(OrthonormalBasis(bad), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.kind() == ErrorKind::NotOrthonormal;
                         }));
}
