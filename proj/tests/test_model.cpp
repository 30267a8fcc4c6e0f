#include <catch2/catch_amalgamated.hpp>

#include "nettl/model.hpp"
#include "nettl/spectral.hpp"

using namespace nettl;
using model::AdjacencyMatrix;
using model::DcmmParams;
using model::ProbabilityMatrix;

namespace {

DcmmParams two_block_params(Index d, double theta_val, double on, double off) {
  DcmmParams p;
  p.theta = Vector::Constant(d, theta_val);
  p.pi = Matrix::Zero(d, 2);
  for (Index i = 0; i < d; ++i) p.pi(i, i < d / 2 ? 0 : 1) = 1.0;
  p.p = Matrix(2, 2);
  p.p << on, off, off, on;
  return p;
}

} // namespace

TEST_CASE("build_probability_matrix: constant K=1 model") {
  DcmmParams p;
  p.theta = Vector::Constant(2, 1.0);
  p.pi = Matrix::Ones(2, 1);
  p.p = Matrix::Constant(1, 1, 0.5);
  const auto h = model::build_probability_matrix(p);
  REQUIRE(h.h.rows() == 2);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j) REQUIRE(h.h(i, j) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("build_probability_matrix: rank-1 outer product") {
  DcmmParams p;
  p.theta = Vector(2);
  p.theta << 0.5, 1.0;
  p.pi = Matrix::Ones(2, 1);
  p.p = Matrix::Constant(1, 1, 1.0);
  const auto h = model::build_probability_matrix(p);
  REQUIRE(h.h(0, 0) == Catch::Approx(0.25).margin(1e-15));
  REQUIRE(h.h(0, 1) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(h.h(1, 0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(h.h(1, 1) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("build_probability_matrix: two-block structure, hand evaluated") {
  // d=4, K=2, theta=1, P = [[0.9,0.1],[0.1,0.9]]; entrywise H_ij = pi_i' P pi_j
  const auto p = two_block_params(4, 1.0, 0.9, 0.1);
  const auto h = model::build_probability_matrix(p);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      const bool same = (i < 2) == (j < 2);
      REQUIRE(h.h(i, j) == Catch::Approx(same ? 0.9 : 0.1).margin(1e-15));
    }
}

TEST_CASE("build_probability_matrix: symmetry and rank bound") {
  const auto p = two_block_params(30, 0.8, 0.9, 0.2);
  const auto h = model::build_probability_matrix(p);
  REQUIRE((h.h - h.h.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  // rank(H) <= K: eigenvalues beyond K are numerically zero
  const auto eig = spectral::top_eigenpairs(h.h, 30);
  const double lead = std::abs(eig.values(0));
  for (Index i = 2; i < 30; ++i) REQUIRE(std::abs(eig.values(i)) < 1e-8 * lead);
}

TEST_CASE("build_probability_matrix: errors") {
  auto p = two_block_params(4, 1.0, 0.9, 0.1);
  SECTION("scaling pushes entries above 1") {
    p.theta = Vector::Constant(4, 1.2);
    REQUIRE_THROWS_MATCHES(model::build_probability_matrix(p), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::ProbabilityOutOfRange;
                           }));
  }
  SECTION("invariant violations are rejected") {
    p.pi(0, 0) = 0.7; // row no longer sums to 1
    REQUIRE_THROWS_MATCHES(model::build_probability_matrix(p), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                             return e.kind() == ErrorKind::ParamInvariantViolated;
                           }));
  }
}

TEST_CASE("validate_params reports") {
  auto p = two_block_params(4, 1.0, 0.9, 0.1);
  SECTION("valid params give an empty report") {
    REQUIRE(model::validate_params(p).empty());
  }
  SECTION("row stochasticity violation is named") {
    p.pi(1, 0) = 0.9; // row sums to 0.9
    const auto rep = model::validate_params(p);
    REQUIRE_FALSE(rep.valid());
    bool found = false;
    for (const auto& item : rep.items)
      if (item.message.find("sums to") != std::string::npos) found = true;
    REQUIRE(found);
  }
  SECTION("missing pure node is reported but soft") {
    // make community 1 impure everywhere
    for (Index i = 2; i < 4; ++i) {
      p.pi(i, 0) = 0.3;
      p.pi(i, 1) = 0.7;
    }
    const auto rep = model::validate_params(p);
    REQUIRE(rep.valid()); // soft violation only
    REQUIRE_FALSE(rep.empty());
    bool found = false;
    for (const auto& item : rep.items)
      if (!item.hard && item.message.find("pure node") != std::string::npos) found = true;
    REQUIRE(found);
  }
}

TEST_CASE("sample_adjacency: degenerate probabilities") {
  const Index d = 6;
  SECTION("all-ones off-diagonal gives the complete graph") {
    Matrix h = Matrix::Ones(d, d);
    const auto x = model::sample_adjacency(ProbabilityMatrix{h}, 7);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) REQUIRE(x.x(i, j) == (i == j ? 0.0 : 1.0));
  }
  SECTION("zero matrix gives the empty graph") {
    const auto x = model::sample_adjacency(ProbabilityMatrix{Matrix::Zero(d, d)}, 7);
    REQUIRE(x.x.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("sample_adjacency: deterministic in the seed, symmetric, hollow") {
  const auto p = two_block_params(20, 0.8, 0.9, 0.2);
  const auto h = model::build_probability_matrix(p);
  const auto a = model::sample_adjacency(h, 99);
  const auto b = model::sample_adjacency(h, 99);
  const auto c = model::sample_adjacency(h, 100);
  REQUIRE(a.x == b.x);
  REQUIRE(a.x != c.x);
  REQUIRE((a.x - a.x.transpose()).cwiseAbs().maxCoeff() == 0.0);
  for (Index i = 0; i < 20; ++i) REQUIRE(a.x(i, i) == 0.0);
}

TEST_CASE("sample_adjacency: Monte-Carlo mean matches Bernoulli(0.5)") {
  const Index d = 4;
  Matrix hm = Matrix::Constant(d, d, 0.5);
  const ProbabilityMatrix h{hm};
  const int n_rep = 10000;
  Matrix freq = Matrix::Zero(d, d);
  for (int s = 0; s < n_rep; ++s) freq += model::sample_adjacency(h, substream(404, s)).x;
  freq /= n_rep;
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j)
      if (i != j) REQUIRE(std::abs(freq(i, j) - 0.5) < 0.02);
}

TEST_CASE("sample_adjacency: law of large numbers entrywise") {
  const auto p = two_block_params(6, 0.9, 0.8, 0.3);
  const auto h = model::build_probability_matrix(p);
  const int n_rep = 4000;
  Matrix freq = Matrix::Zero(6, 6);
  for (int s = 0; s < n_rep; ++s) freq += model::sample_adjacency(h, substream(11, s)).x;
  freq /= n_rep;
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 6; ++j) {
      if (i == j) continue;
      const double tol = 3.0 * std::sqrt(h.h(i, j) * (1.0 - h.h(i, j)) / n_rep);
      REQUIRE(std::abs(freq(i, j) - h.h(i, j)) <= tol + 1e-12);
    }
}

TEST_CASE("AdjacencyMatrix invariants") {
  Matrix bad = Matrix::Zero(3, 3);
  bad(0, 1) = 1.0; // asymmetric
  REQUIRE_THROWS_AS(AdjacencyMatrix::from(bad), Error);
  bad(1, 0) = 0.5;
  REQUIRE_THROWS_AS(AdjacencyMatrix::from(bad), Error);
}

TEST_CASE("ProbabilityMatrix invariants") {
  Matrix m = Matrix::Constant(3, 3, 1.5);
  REQUIRE_THROWS_AS(ProbabilityMatrix::from(m), Error);
}
