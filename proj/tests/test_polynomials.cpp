#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "winrisk/polynomial.hpp"

using namespace winrisk;

namespace {

const std::vector<std::string> kXYZ = {"x1", "x2", "x3"};

Polynomial random_poly(std::mt19937_64& rng, const std::vector<std::string>& vars,
                       unsigned max_deg, int max_terms) {
  std::uniform_int_distribution<int> nterms(1, max_terms);
  std::uniform_int_distribution<unsigned> deg(0, max_deg);
  std::uniform_real_distribution<double> cf(-3.0, 3.0);
  Polynomial p(vars);
  const int n = nterms(rng);
  for (int t = 0; t < n; ++t) {
    MultiIndex a(vars.size(), 0);
    unsigned budget = deg(rng);
    for (std::size_t i = 0; i < vars.size() && budget > 0; ++i) {
      std::uniform_int_distribution<unsigned> e(0, budget);
      a[i] = e(rng);
      budget -= a[i];
    }
    p += Polynomial::monomial(vars, std::move(a), cf(rng));
  }
  return p;
}

std::vector<double> random_point(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

bool poly_close(const Polynomial& a, const Polynomial& b, double tol) {
  Polynomial d = a - b;
  for (const auto& [m, c] : d.terms())
    if (std::abs(c) > tol) return false;
  return true;
}

}  // namespace

TEST_CASE("graded order and monomial enumeration") {
  // With two variables the basis must read 1, x1, x2, x1^2, x1*x2, x2^2, ...
  auto mons = enumerate_monomials(2, 2);
  REQUIRE(mons.size() == 6);
  CHECK(mons[0] == MultiIndex{0, 0});
  CHECK(mons[1] == MultiIndex{1, 0});
  CHECK(mons[2] == MultiIndex{0, 1});
  CHECK(mons[3] == MultiIndex{2, 0});
  CHECK(mons[4] == MultiIndex{1, 1});
  CHECK(mons[5] == MultiIndex{0, 2});

  // C(nvars + d, d) counts.
  CHECK(enumerate_monomials(3, 4).size() == 35);
  CHECK(enumerate_monomials(5, 8).size() == 1287);
  CHECK(enumerate_monomials(4, 10).size() == 1001);

  // Enumeration is strictly increasing in the graded order.
  auto big = enumerate_monomials(4, 5);
  for (std::size_t i = 1; i < big.size(); ++i) CHECK(graded_before(big[i - 1], big[i]));
}

TEST_CASE("parse and render round trips") {
  auto p = parse("-x1 + x2 + x3 - 2*x1^3 + 2*x3^3", kXYZ);
  CHECK(render(p) == "-x1 + x2 + x3 - 2*x1^3 + 2*x3^3");
  CHECK(p.degree() == 3);
  CHECK(p.num_terms() == 5);

  // Implicit multiplication, repeated variables, signed leading coefficient.
  auto q = parse("3x2 + 0.5 x1 x1^2 - 1", kXYZ);
  CHECK(q.coeff({3, 0, 0}) == doctest::Approx(0.5));
  CHECK(q.coeff({0, 1, 0}) == doctest::Approx(3.0));
  CHECK(q.coeff({0, 0, 0}) == doctest::Approx(-1.0));
  CHECK(render(parse(render(q), kXYZ)) == render(q));

  // Scientific notation and constants.
  auto r = parse("2.5e-1*x1^2 - 1e0", kXYZ);
  CHECK(r.coeff({2, 0, 0}) == doctest::Approx(0.25));
  CHECK(render(parse("0", kXYZ)) == "0");
  CHECK(render(Polynomial(kXYZ)) == "0");

  // Unit coefficients are elided, magnitude-one negatives keep the sign.
  CHECK(render(parse("1*x1 - 1*x2", kXYZ)) == "x1 - x2");
  CHECK(render(parse("-1", kXYZ)) == "-1");
}

TEST_CASE("parse errors carry column positions") {
  CHECK_THROWS_AS(parse("x1 + x9", kXYZ), ParseError);
  try {
    parse("x1 + x9", kXYZ);
  } catch (const ParseError& e) {
    CHECK(e.column() == 6);
  }
  CHECK_THROWS_AS(parse("", kXYZ), ParseError);
  CHECK_THROWS_AS(parse("  ", kXYZ), ParseError);
  CHECK_THROWS_AS(parse("x1 * ", kXYZ), ParseError);
  CHECK_THROWS_AS(parse("x1 ^ z", kXYZ), ParseError);
  CHECK_THROWS_AS(parse("x1 x2 +", kXYZ), ParseError);
  CHECK_THROWS_AS(parse("2 2", kXYZ), ParseError);   // second coefficient in a term
  CHECK_THROWS_AS(parse("x1 (", kXYZ), ParseError);  // grammar has no parentheses
}

TEST_CASE("ring axioms on random polynomials") {
  std::mt19937_64 rng(20240817);
  for (int trial = 0; trial < 50; ++trial) {
    Polynomial a = random_poly(rng, kXYZ, 4, 6);
    Polynomial b = random_poly(rng, kXYZ, 4, 6);
    Polynomial c = random_poly(rng, kXYZ, 3, 5);
    CHECK(poly_close(a + b, b + a, 1e-14));
    CHECK(poly_close(a * b, b * a, 1e-12));
    CHECK(poly_close((a + b) * c, a * c + b * c, 1e-11));
    CHECK(poly_close((a * b) * c, a * (b * c), 1e-10));
    CHECK(poly_close(a - a, Polynomial(kXYZ), 0.0));
    CHECK(poly_close(a * 1.0, a, 0.0));
  }
}

TEST_CASE("evaluation is a ring homomorphism") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Polynomial a = random_poly(rng, kXYZ, 4, 6);
    Polynomial b = random_poly(rng, kXYZ, 4, 6);
    auto x = random_point(rng, 3);
    const double ea = evaluate(a, x), eb = evaluate(b, x);
    CHECK(evaluate(a + b, x) == doctest::Approx(ea + eb).epsilon(1e-12));
    CHECK(evaluate(a * b, x) == doctest::Approx(ea * eb).epsilon(1e-10));
    CHECK(evaluate(pow(a, 3), x) == doctest::Approx(ea * ea * ea).epsilon(1e-9));
  }
}

TEST_CASE("partial derivative rules") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    Polynomial a = random_poly(rng, kXYZ, 4, 6);
    Polynomial b = random_poly(rng, kXYZ, 4, 6);
    // Product rule, exactly in coefficient space up to rounding.
    CHECK(poly_close(partial(a * b, "x2"), partial(a, "x2") * b + a * partial(b, "x2"), 1e-10));
    // Mixed partials commute.
    CHECK(poly_close(partial(partial(a, "x1"), "x3"), partial(partial(a, "x3"), "x1"), 1e-14));
  }
  CHECK(partial(parse("x1^3", kXYZ), "x1").coeff({2, 0, 0}) == doctest::Approx(3.0));
  CHECK(partial(parse("5", kXYZ), "x1").is_zero());
}

TEST_CASE("substitution composes with evaluation") {
  std::mt19937_64 rng(123);
  const std::vector<std::string> st = {"s", "t"};
  for (int trial = 0; trial < 30; ++trial) {
    Polynomial p = random_poly(rng, st, 3, 5);
    Polynomial f = random_poly(rng, kXYZ, 2, 4);
    Polynomial g = random_poly(rng, kXYZ, 2, 4);
    Polynomial composed = substitute(p, kXYZ, {{"s", f}, {"t", g}});
    auto x = random_point(rng, 3);
    const double direct = evaluate(p, std::vector<double>{evaluate(f, x), evaluate(g, x)});
    CHECK(evaluate(composed, x) == doctest::Approx(direct).epsilon(1e-9));
  }
}

TEST_CASE("lift embeds into larger variable contexts") {
  auto p = parse("t^2 - 2*t", {"t"});
  auto q = lift(p, {"s", "t", "x1"});
  CHECK(q.coeff({0, 2, 0}) == doctest::Approx(1.0));
  CHECK(q.coeff({0, 1, 0}) == doctest::Approx(-2.0));
  CHECK_THROWS(lift(p, {"s", "x1"}));
  // Identity substitution equals lift.
  CHECK(poly_close(substitute(p, {"s", "t", "x1"}, {}), q, 0.0));
}

TEST_CASE("benchmark drift expansion: twist system") {
  // dx_i/dt = sum_j A[i][j] x_j - B[i][j] (4 x_j^3 - 3 x_j) / 2
  const double A[3][3] = {{-1, 1, 1}, {-1, 0, -1}, {0, 1, -2}};
  const double B[3][3] = {{-1, 0, -1}, {0, 1, 1}, {1, 1, 0}};
  std::vector<Polynomial> drift;
  for (int i = 0; i < 3; ++i) {
    Polynomial fi(kXYZ);
    for (int j = 0; j < 3; ++j) {
      Polynomial xj = Polynomial::variable(kXYZ, kXYZ[j]);
      fi += A[i][j] * xj;
      fi -= (B[i][j] / 2.0) * (4.0 * pow(xj, 3) - 3.0 * xj);
    }
    drift.push_back(fi);
  }
  CHECK(render(drift[0]) == "-2.5*x1 + x2 - 0.5*x3 + 2*x1^3 + 2*x3^3");
  CHECK(render(drift[1]) == "-x1 + 1.5*x2 + 0.5*x3 - 2*x2^3 - 2*x3^3");
  CHECK(render(drift[2]) == "1.5*x1 + 2.5*x2 - 2*x3 - 2*x1^3 - 2*x2^3");
  // The expanded strings must parse back to the same polynomials.
  for (int i = 0; i < 3; ++i) CHECK(poly_close(parse(render(drift[i]), kXYZ), drift[i], 0.0));
}

TEST_CASE("pruned drops cancellation residue only") {
  Polynomial p = parse("x1 + 1e-30*x2", kXYZ);
  CHECK(p.num_terms() == 2);
  CHECK(p.pruned().num_terms() == 1);
  CHECK(p.pruned().coeff({1, 0, 0}) == doctest::Approx(1.0));
  // Comparable magnitudes survive.
  CHECK(parse("x1 + 1e-6*x2", kXYZ).pruned().num_terms() == 2);
}
