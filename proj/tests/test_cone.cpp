#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mbrw/cone.hpp"
#include "mbrw/rng.hpp"

using namespace mbrw;

namespace {

PosMatrix random_positive(int d, Rng& rng) {
  std::vector<double> e(static_cast<size_t>(d) * d);
  for (double& v : e) v = 0.05 + rng.uniform01();
  return PosMatrix(d, std::move(e));
}

// Hilbert projective metric on the d=2 simplex via the cross-ratio.
double hilbert_d2(const Direction& x, const Direction& y) {
  return std::abs(std::log((x[0] * y[1]) / (x[1] * y[0])));
}

}  // namespace

TEST_CASE("operator norm is the max column sum") {
  CHECK(op_norm(PosMatrix::identity(2)) == doctest::Approx(1.0));
  CHECK(op_norm(PosMatrix(2, {1, 2, 3, 4})) == doctest::Approx(6.0));
  const double c = 0.37;
  CHECK(op_norm(PosMatrix::all_ones(2).scaled(c)) == doctest::Approx(2.0 * c));
  CHECK(iota(PosMatrix::identity(2)) == doctest::Approx(1.0));
  CHECK(iota(PosMatrix(2, {1, 2, 3, 4})) == doctest::Approx(4.0));
}

TEST_CASE("projective action") {
  const Direction x({0.3, 0.7});
  const Direction ix = act(PosMatrix::identity(2), x);
  CHECK(ix[0] == doctest::Approx(0.3));
  const Direction jx = act(PosMatrix::all_ones(2), Direction({0.9, 0.1}));
  CHECK(jx[0] == doctest::Approx(0.5));
  const Direction gx = act(PosMatrix(2, {1, 2, 3, 4}), Direction::vertex(2, 0));
  CHECK(gx[0] == doctest::Approx(0.25));
  CHECK(gx[1] == doctest::Approx(0.75));
}

TEST_CASE("cocycle values") {
  const Direction x({0.3, 0.7});
  CHECK(cocycle(PosMatrix::identity(2), x) == doctest::Approx(0.0));
  CHECK(cocycle(PosMatrix::all_ones(2).scaled(2.0), x) == doctest::Approx(std::log(4.0)));
  CHECK(cocycle(PosMatrix(2, {1, 2, 3, 4}), Direction::vertex(2, 0)) ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("cocycle identity on random triples") {
  Rng rng(42, 0);
  for (int d : {2, 3, 5}) {
    for (int it = 0; it < 200; ++it) {
      const PosMatrix g1 = random_positive(d, rng);
      const PosMatrix g2 = random_positive(d, rng);
      const Direction x = random_direction(d, rng);
      const double lhs = cocycle(g2 * g1, x);
      const double rhs = cocycle(g2, act(g1, x)) + cocycle(g1, x);
      CHECK(std::abs(lhs - rhs) < 1e-10);
    }
  }
}

TEST_CASE("norm comparability and contractivity under A1*") {
  Rng rng(7, 0);
  for (int it = 0; it < 100; ++it) {
    const int d = 2 + static_cast<int>(rng.uniform01() * 3);
    const PosMatrix g = random_positive(d, rng);
    const auto fk = fk_constants({g}, d);
    const double norm = op_norm(g);
    CHECK(iota(g) >= norm / (fk.kappa * fk.kappa) - 1e-12);
    for (int jt = 0; jt < 20; ++jt) {
      const Direction x = random_direction(d, rng);
      const Direction y = random_direction(d, rng);
      const double nx = std::exp(cocycle(g, x));
      CHECK(nx <= norm + 1e-12);
      CHECK(nx >= norm / (fk.kappa * fk.kappa) - 1e-12);
      CHECK(std::abs(cocycle(g, x) - cocycle(g, y)) <= fk.c0 + 1e-12);
    }
  }
}

TEST_CASE("projective contraction in the Hilbert metric (d=2)") {
  Rng rng(11, 0);
  for (int it = 0; it < 200; ++it) {
    const PosMatrix g = random_positive(2, rng);
    const Direction x = random_direction(2, rng);
    const Direction y = random_direction(2, rng);
    CHECK(hilbert_d2(act(g, x), act(g, y)) <= hilbert_d2(x, y) + 1e-12);
  }
}

TEST_CASE("Furstenberg-Kesten constants") {
  SUBCASE("all-equal entries clamp kappa") {
    const auto fk = fk_constants({PosMatrix::all_ones(2)}, 2);
    CHECK(fk.kappa == doctest::Approx(1.0 + 1e-9));
    CHECK(fk.c0 == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("direct arithmetic") {
    const auto fk = fk_constants({PosMatrix(2, {1, 2, 2, 4})}, 2);
    CHECK(fk.kappa == doctest::Approx(4.0));
    CHECK(fk.kappa_bar == doctest::Approx(2.0 * std::log(4.0)));
    // c0 is pinned to kappa_bar, so c1 = 2 kappa_bar + log d = 4 log 4 + log 2.
    CHECK(fk.c1 == doctest::Approx(4.0 * std::log(4.0) + std::log(2.0)));
    CHECK(fk.c1 == doctest::Approx(fk.c0 + fk.kappa_bar + std::log(2.0)));
  }
  SUBCASE("zero entry violates A1*") {
    CHECK_THROWS_AS(fk_constants({PosMatrix(2, {0, 1, 1, 1})}, 2), MathError);
  }
}

TEST_CASE("construction guards") {
  CHECK_THROWS_AS(PosMatrix(2, {0, 0, 1, 1}), ConfigError);   // zero column
  CHECK_THROWS_AS(PosMatrix(2, {-1, 1, 1, 1}), ConfigError);  // negative entry
  CHECK_THROWS_AS(Direction({0.5, 0.6}), ConfigError);        // sum != 1
  CHECK_NOTHROW(Direction({0.5, 0.5 + 5e-13}));               // inside tolerance
}

TEST_CASE("direction normalization survives long products") {
  Rng rng(3, 0);
  const PosMatrix g = random_positive(2, rng);
  Direction x = random_direction(2, rng);
  for (int i = 0; i < 10000; ++i) x = act(g, x);
  double sum = 0.0;
  for (int i = 0; i < 2; ++i) sum += x[i];
  CHECK(std::abs(sum - 1.0) < 1e-12);
}
