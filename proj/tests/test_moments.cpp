#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "winrisk/moments.hpp"

using namespace winrisk;

namespace {

// A one-dimensional problem whose trajectories are constants: zero drift,
// no noise.  Every moment of every measure has a closed form, which makes
// it an end-to-end oracle for the assembled constraints.
RiskProblem frozen_problem() {
  RiskProblem p;
  p.name = "frozen";
  p.state_vars = {"x1"};
  ContinuousDynamics dyn;
  dyn.state_vars = p.state_vars;
  dyn.drift = {Polynomial::constant({"t", "x1"}, 0.0)};
  p.dynamics = dyn;
  p.X.vars = p.state_vars;
  p.X.box = {{-2.0, 4.0}};
  p.X0.vars = p.state_vars;
  p.X0.ball = Ball{{0.4}, 0.05};
  p.cost = parse("x1", p.state_vars);
  p.T = 5.0;
  p.h = 1.5;
  p.risk = RiskKind::Mean;
  return p;
}

// Closed-form moments of the measure family induced by a constant
// trajectory x(t) = x0 stopped at time sigma (all in scaled coordinates):
//   y0 = delta_(sigma, x0)            ytau = delta_(sigma, x0)
//   yplus  = delta_sigma x lebesgue[sigma-h, sigma] x delta_x0
//   yminus = delta_sigma x lebesgue[0, sigma-h]     x delta_x0
// and for shortfall runs, nu = delta at the cost value with mass 1 and
// nuhat = (1 - eps) delta at the same value.
std::vector<double> constant_trajectory_moments(const MomentRelaxation& rel, double sigma,
                                                const std::vector<double>& x0s) {
  std::vector<double> y(static_cast<std::size_t>(rel.num_vars), 0.0);
  const double h = rel.scaled.problem.h;
  auto state_pow = [&](const MultiIndex& alpha, std::size_t from) {
    double v = 1.0;
    for (std::size_t j = from; j < alpha.size(); ++j) v *= std::pow(x0s[j - from], alpha[j]);
    return v;
  };
  for (const auto& m : rel.measures) {
    for (int i = 0; i < m.basis.size(); ++i) {
      const auto& alpha = m.basis.monomials[i];
      double v = 0.0;
      switch (m.tag) {
        case MeasureTag::Initial:
        case MeasureTag::Terminal:
          v = std::pow(sigma, alpha[0]) * state_pow(alpha, 1);
          break;
        case MeasureTag::WindowPlus: {
          const unsigned b = alpha[1];
          const double seg =
              (std::pow(sigma, b + 1) - std::pow(sigma - h, b + 1)) / (b + 1);
          v = std::pow(sigma, alpha[0]) * seg * state_pow(alpha, 2);
          break;
        }
        case MeasureTag::WindowMinus: {
          const unsigned b = alpha[1];
          const double seg = std::pow(sigma - h, b + 1) / (b + 1);
          v = std::pow(sigma, alpha[0]) * seg * state_pow(alpha, 2);
          break;
        }
        case MeasureTag::Shortfall:
        case MeasureTag::ShortfallSlack: {
          const double value = evaluate(rel.scaled.problem.cost, x0s);
          const double cq = 0.5 * (rel.cost_bounds.lo + rel.cost_bounds.hi);
          const double rq = 0.5 * (rel.cost_bounds.hi - rel.cost_bounds.lo);
          const double q = (value - cq) / rq;
          v = std::pow(q, alpha[0]);
          if (m.tag == MeasureTag::ShortfallSlack) v *= 1.0 - rel.epsilon;
          break;
        }
      }
      y[static_cast<std::size_t>(m.offset + i)] = v;
    }
  }
  return y;
}

double max_equality_residual(const MomentRelaxation& rel, std::span<const double> y) {
  double worst = 0.0;
  for (const auto& eq : rel.equalities)
    worst = std::max(worst, std::abs(eq.lhs.apply(y) - eq.rhs));
  return worst;
}

double min_block_eigenvalue(const MomentRelaxation& rel, std::span<const double> y) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& b : rel.blocks) {
    auto dense = dense_block(b, y);
    Eigen::Map<const Eigen::MatrixXd> M(dense.data(), b.size, b.size);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    worst = std::min(worst, es.eigenvalues().minCoeff());
  }
  return worst;
}

const Equality& find_equality(const MomentRelaxation& rel, const std::string& label) {
  for (const auto& eq : rel.equalities)
    if (eq.label == label) return eq;
  throw std::runtime_error("no equality labeled " + label);
}

}  // namespace

TEST_CASE("moment basis ordering and riesz maps") {
  auto b = MomentBasis::make({"s", "x1"}, 2);
  REQUIRE(b.size() == 6);
  CHECK(b.monomials[0] == MultiIndex{0, 0});
  CHECK(b.monomials[1] == MultiIndex{1, 0});
  CHECK(b.monomials[2] == MultiIndex{0, 1});
  CHECK(b.monomials[3] == MultiIndex{2, 0});
  CHECK(b.index_of({1, 1}) == 4);
  CHECK_THROWS_AS(b.index_of({3, 0}), std::runtime_error);

  auto p = parse("2*s*x1 - 3 + x1^2", b.vars);
  auto f = riesz(b, p, 10);
  REQUIRE(f.terms.size() == 3);
  CHECK(f.terms[0] == std::pair<int, double>{10, -3.0});
  CHECK(f.terms[1] == std::pair<int, double>{14, 2.0});
  CHECK(f.terms[2] == std::pair<int, double>{15, 1.0});

  std::vector<double> y(16, 0.0);
  y[10] = 1.0;
  y[14] = 0.5;
  y[15] = 2.0;
  CHECK(f.apply(y) == doctest::Approx(-3.0 + 1.0 + 2.0));

  CHECK_THROWS_AS(riesz(b, parse("x1^3", b.vars), 0), std::runtime_error);
}

TEST_CASE("problem scaling maps onto the unit box and unit horizon") {
  auto prob = fixtures::oscillator_problem(true);
  auto scaled = scale_problem(prob);
  const auto& sp = scaled.problem;

  CHECK(sp.T == doctest::Approx(1.0));
  CHECK(sp.h == doctest::Approx(0.3));
  CHECK(scaled.info.center[0] == doctest::Approx(1.0));
  CHECK(scaled.info.center[1] == doctest::Approx(-0.25));
  CHECK(scaled.info.halfwidth[0] == doctest::Approx(1.5));
  CHECK(scaled.info.halfwidth[1] == doctest::Approx(1.75));
  REQUIRE(sp.X.box.size() == 2);
  for (const auto& iv : sp.X.box) {
    CHECK(iv.lo == doctest::Approx(-1.0));
    CHECK(iv.hi == doctest::Approx(1.0));
  }

  // Scaled drift must satisfy drift'_i(t', x') = (T / r_i) f_i(T t', c + r x').
  const auto& orig = std::get<ContinuousDynamics>(prob.dynamics);
  const auto& dyn = std::get<ContinuousDynamics>(sp.dynamics);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const double ts = 0.5 * (unit(rng) + 1.0);
    const std::vector<double> xs = {unit(rng), unit(rng)};
    const std::vector<double> scaled_pt = {ts, xs[0], xs[1]};
    const std::vector<double> orig_pt = {prob.T * ts, 1.0 + 1.5 * xs[0], -0.25 + 1.75 * xs[1]};
    for (std::size_t i = 0; i < 2; ++i) {
      const double r = scaled.info.halfwidth[i];
      CHECK(evaluate(dyn.drift[i], scaled_pt) ==
            doctest::Approx((prob.T / r) * evaluate(orig.drift[i], orig_pt)).epsilon(1e-10));
      const double want = (std::sqrt(prob.T) / r) * evaluate(orig.diffusion[i][0], orig_pt);
      CHECK(evaluate(dyn.diffusion[i][0], scaled_pt) == doctest::Approx(want).epsilon(1e-10));
    }
  }

  // Cost composes the state map; the bound value is frame-invariant.
  CHECK(evaluate(sp.cost, std::vector<double>{0.0, 0.6}) == doctest::Approx(-0.25 + 1.75 * 0.6));

  // Unscaling round-trips.
  auto back = scaled.info.unscale_state(std::vector<double>{-0.4, 0.6});
  CHECK(back[0] == doctest::Approx(1.0 + 1.5 * -0.4));
  CHECK(back[1] == doctest::Approx(-0.25 + 1.75 * 0.6));
  CHECK(scaled.info.unscale_time(0.7) == doctest::Approx(3.5));
}

TEST_CASE("discrete dynamics scale by the horizon") {
  RiskProblem p;
  p.state_vars = {"x1"};
  DiscreteDynamics dyn;
  dyn.state_vars = p.state_vars;
  dyn.dt = 0.5;
  dyn.update = {parse("0.5*x1 + 1", {"t", "x1"})};
  p.dynamics = dyn;
  p.X.vars = p.state_vars;
  p.X.box = {{-1.0, 5.0}};
  p.X0.vars = p.state_vars;
  p.X0.box = {{0.0, 1.0}};
  p.cost = parse("x1", p.state_vars);
  p.T = 4.0;
  p.h = 1.0;

  auto scaled = scale_problem(p);
  const auto& d = std::get<DiscreteDynamics>(scaled.problem.dynamics);
  CHECK(d.dt == doctest::Approx(0.125));
  // update'(x') = (F(c + r x') - c) / r with c = 2, r = 3.
  for (double xs : {-1.0, -0.3, 0.2, 1.0}) {
    const double orig = evaluate(std::get<DiscreteDynamics>(p.dynamics).update[0],
                                 std::vector<double>{0.25, 2.0 + 3.0 * xs});
    CHECK(evaluate(d.update[0], std::vector<double>{0.25, xs}) ==
          doctest::Approx((orig - 2.0) / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("temporal guards vanish on their boundaries") {
  const std::vector<std::string> vars = {"s", "t"};
  auto w = window_guard(vars, 1.0, 0.3);
  CHECK(evaluate(w, std::vector<double>{0.3, 0.0}) == doctest::Approx(0.0));
  CHECK(evaluate(w, std::vector<double>{1.0, 0.0}) == doctest::Approx(0.0));
  CHECK(evaluate(w, std::vector<double>{0.65, 0.0}) > 0.0);

  auto gp = gplus_guard(vars, 0.3);
  CHECK(evaluate(gp, std::vector<double>{0.7, 0.7}) == doctest::Approx(0.0));
  CHECK(evaluate(gp, std::vector<double>{0.7, 0.4}) == doctest::Approx(0.0));
  CHECK(evaluate(gp, std::vector<double>{0.7, 0.55}) > 0.0);
  CHECK(evaluate(gp, std::vector<double>{0.7, 0.2}) < 0.0);

  auto gm = gminus_guard(vars, 0.3, 0.0);
  CHECK(evaluate(gm, std::vector<double>{0.7, 0.0}) == doctest::Approx(0.0));
  CHECK(evaluate(gm, std::vector<double>{0.7, 0.4}) == doctest::Approx(0.0));
  CHECK(evaluate(gm, std::vector<double>{1.0, 0.2}) == doctest::Approx(0.1));
  // Discrete lag shifts the upper end down by one step.
  auto gml = gminus_guard(vars, 0.3, 0.1);
  CHECK(evaluate(gml, std::vector<double>{1.0, 0.6}) == doctest::Approx(0.0));
}

TEST_CASE("localizing blocks recognize support membership") {
  // Moments of the uniform distribution on [0,1]: y_j = 1/(j+1).
  auto basis = MomentBasis::make({"x1"}, 4);
  std::vector<double> y(static_cast<std::size_t>(basis.size()));
  for (int j = 0; j < basis.size(); ++j) y[static_cast<std::size_t>(j)] = 1.0 / (j + 1);

  auto eig_min = [&](const PsdBlock& b) {
    auto dense = dense_block(b, y);
    Eigen::Map<const Eigen::MatrixXd> M(dense.data(), b.size, b.size);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  };

  auto plain = localizing_block(basis, 0, Polynomial::constant({"x1"}, 1.0), 2,
                                MeasureTag::Initial, "plain");
  CHECK(plain.size == 3);
  CHECK(eig_min(plain) > 0.0);

  // x(1-x) >= 0 on the support: localizing matrix is PSD.  The quadratic
  // guard drops one row degree.
  auto good = localizing_block(basis, 0, parse("x1 - x1^2", {"x1"}), 2, MeasureTag::Initial,
                               "inside");
  CHECK(good.size == 2);
  CHECK(eig_min(good) > 0.0);

  // x - 2 < 0 on the support: localizing matrix must fail PSD.
  auto bad = localizing_block(basis, 0, parse("x1 - 2", {"x1"}), 2, MeasureTag::Initial,
                              "outside");
  CHECK(eig_min(bad) < -1e-3);

  // Degree bookkeeping: a quartic guard at half-degree 2 keeps only the
  // constant row; the single entry is the Riesz image of the guard.
  auto quartic = localizing_block(basis, 0, parse("x1^4", {"x1"}), 2, MeasureTag::Initial, "q4");
  CHECK(quartic.size == 1);
  REQUIRE(quartic.entries.size() == 1);
  CHECK(quartic.entries[0].var == 4);
}

TEST_CASE("constant trajectories satisfy every mean constraint") {
  auto rel = build_mean_relaxation(frozen_problem(), 3);
  CHECK(rel.k_dyn == 3);  // zero drift: the generator never raises degree

  const double sigma = 0.7;                // scaled stopping time (orig. 3.5)
  const std::vector<double> x0s = {-0.2};  // scaled constant state (orig. 0.4)
  auto y = constant_trajectory_moments(rel, sigma, x0s);

  CHECK(max_equality_residual(rel, y) <= 1e-10);
  CHECK(min_block_eigenvalue(rel, y) >= -1e-9);

  // Mass bookkeeping: initial is a probability, window carries mass h/T.
  CHECK(measure_mass(rel, MeasureTag::Initial, y) == doctest::Approx(1.0));
  CHECK(measure_mass(rel, MeasureTag::Terminal, y) == doctest::Approx(1.0));
  CHECK(measure_mass(rel, MeasureTag::WindowPlus, y) == doctest::Approx(0.3));
  CHECK(measure_mass(rel, MeasureTag::WindowMinus, y) == doctest::Approx(0.4));

  // The objective reports the windowed mean in original units.
  CHECK(rel.objective.apply(y) == doctest::Approx(0.4).epsilon(1e-10));
}

TEST_CASE("constant trajectories satisfy every shortfall constraint") {
  auto prob = frozen_problem();
  prob.risk = RiskKind::ExpectedShortfall;
  prob.epsilon = 0.25;
  auto rel = build_es_relaxation(prob, 2);
  CHECK(rel.delta == 2);
  CHECK(rel.cost_bounds.lo == doctest::Approx(-2.0));
  CHECK(rel.cost_bounds.hi == doctest::Approx(4.0));

  auto y = constant_trajectory_moments(rel, 0.7, {-0.2});
  CHECK(max_equality_residual(rel, y) <= 1e-10);
  CHECK(min_block_eigenvalue(rel, y) >= -1e-9);
  CHECK(measure_mass(rel, MeasureTag::Shortfall, y) == doctest::Approx(1.0));
  CHECK(measure_mass(rel, MeasureTag::ShortfallSlack, y) == doctest::Approx(0.75));

  // ES of a surely-constant value equals that value at every level.
  CHECK(rel.objective.apply(y) == doctest::Approx(0.4).epsilon(1e-10));
}

TEST_CASE("degenerate window h = T stays representable") {
  auto prob = frozen_problem();
  prob.h = prob.T;
  auto rel = build_mean_relaxation(prob, 2);
  auto y = constant_trajectory_moments(rel, 1.0, {-0.2});
  CHECK(max_equality_residual(rel, y) <= 1e-10);
  CHECK(min_block_eigenvalue(rel, y) >= -1e-8);
  CHECK(measure_mass(rel, MeasureTag::WindowMinus, y) == doctest::Approx(0.0));
  CHECK(rel.objective.apply(y) == doctest::Approx(0.4).epsilon(1e-9));
}

TEST_CASE("oscillator relaxation dimensions") {
  auto rel = build_mean_relaxation(fixtures::oscillator_problem(), 2);
  CHECK(rel.k == 2);
  CHECK(rel.k_dyn == 3);

  CHECK(rel.measure(MeasureTag::Initial).basis.size() == 35);
  CHECK(rel.measure(MeasureTag::Terminal).basis.size() == 35);
  CHECK(rel.measure(MeasureTag::WindowPlus).basis.size() == 210);
  CHECK(rel.measure(MeasureTag::WindowMinus).basis.size() == 210);
  CHECK(rel.num_vars == 490);

  // One Liouville row per monomial in (s,t,x) of degree <= 4, plus two
  // mass rows.
  CHECK(rel.equalities.size() == 70 + 2);

  // Block census: y0 {plain, window, 2 bounding-box quadratics, ball} --
  // ball sets pick up their bounding box as extra (valid, tightening)
  // guards -- ytau {plain, window, 2 box}, y+- {plain, window, segment,
  // 2 box} each.
  REQUIRE(rel.blocks.size() == 19);
  CHECK(rel.blocks[0].size == 10);   // y0 plain at k=2 over (s,x1,x2)
  CHECK(rel.blocks[1].size == 4);    // window guard drops one degree
  auto plus_plain = std::find_if(rel.blocks.begin(), rel.blocks.end(), [](const PsdBlock& b) {
    return b.label == "yplus:moment";
  });
  REQUIRE(plus_plain != rel.blocks.end());
  CHECK(plus_plain->size == 35);  // order k_dyn=3 over (s,t,x1,x2)

  // Objective lives on the window measure alone and rescales by 1/h.
  const int plus_lo = rel.measure(MeasureTag::WindowPlus).offset;
  const int plus_hi = plus_lo + rel.measure(MeasureTag::WindowPlus).basis.size();
  for (const auto& [id, c] : rel.objective.terms) {
    CHECK(id >= plus_lo);
    CHECK(id < plus_hi);
  }
}

TEST_CASE("twist relaxation dimensions") {
  auto rel = build_mean_relaxation(fixtures::twist_problem(), 3);
  CHECK(rel.k_dyn == 4);
  CHECK(rel.num_vars == 210 + 210 + 1287 + 1287);
  CHECK(rel.equalities.size() == 462 + 2);
  int max_block = 0;
  for (const auto& b : rel.blocks) max_block = std::max(max_block, b.size);
  CHECK(max_block == 126);

  auto rel4 = build_mean_relaxation(fixtures::twist_problem(), 4);
  CHECK(rel4.k_dyn == 5);
  CHECK(rel4.measure(MeasureTag::WindowPlus).basis.size() == 3003);
  int max4 = 0;
  for (const auto& b : rel4.blocks) max4 = std::max(max4, b.size);
  CHECK(max4 == 252);
}

TEST_CASE("shortfall assembly wiring") {
  auto prob = fixtures::oscillator_problem();
  prob.risk = RiskKind::ExpectedShortfall;
  prob.epsilon = 0.15;
  auto rel = build_es_relaxation(prob, 2);

  // Linear cost: the value-measure order matches the dynamics order.
  CHECK(rel.delta == 3);
  CHECK(rel.measure(MeasureTag::Shortfall).basis.size() == 7);
  CHECK(rel.measure(MeasureTag::ShortfallSlack).basis.size() == 7);
  CHECK(rel.num_vars == 490 + 14);
  CHECK(rel.equalities.size() == 72 + 1 + 7);

  // Value range of x2 over X, independent of scaling.
  CHECK(rel.cost_bounds.lo == doctest::Approx(-2.0));
  CHECK(rel.cost_bounds.hi == doctest::Approx(1.5));
  const double cq = 0.5 * (rel.cost_bounds.lo + rel.cost_bounds.hi);
  const double rq = 0.5 * (rel.cost_bounds.hi - rel.cost_bounds.lo);

  // Zeroth moment-matching row: (1/h') mass(y+) - eps mass(nu) - mass(nuhat).
  const auto& m0 = find_equality(rel, "shortfall:match0");
  const int plus0 = rel.measure(MeasureTag::WindowPlus).offset;
  const int nu0 = rel.measure(MeasureTag::Shortfall).offset;
  const int nuhat0 = rel.measure(MeasureTag::ShortfallSlack).offset;
  REQUIRE(m0.lhs.terms.size() == 3);
  CHECK(m0.lhs.terms[0].first == plus0);
  CHECK(m0.lhs.terms[0].second == doctest::Approx(1.0 / 0.3));
  CHECK(m0.lhs.terms[1].first == nu0);
  CHECK(m0.lhs.terms[1].second == doctest::Approx(-0.15));
  CHECK(m0.lhs.terms[2].first == nuhat0);
  CHECK(m0.lhs.terms[2].second == doctest::Approx(-1.0));

  // First row carries the affine value map cq + rq q on both value measures.
  const auto& m1 = find_equality(rel, "shortfall:match1");
  double nu_const = 0.0, nu_lin = 0.0;
  for (const auto& [id, c] : m1.lhs.terms) {
    if (id == nu0) nu_const = c;
    if (id == nu0 + 1) nu_lin = c;
  }
  CHECK(nu_const == doctest::Approx(-0.15 * cq));
  CHECK(nu_lin == doctest::Approx(-0.15 * rq));

  // Objective: E_nu[cq + rq q].
  REQUIRE(rel.objective.terms.size() == 2);
  CHECK(rel.objective.terms[0].first == nu0);
  CHECK(rel.objective.terms[0].second == doctest::Approx(cq));
  CHECK(rel.objective.terms[1].first == nu0 + 1);
  CHECK(rel.objective.terms[1].second == doctest::Approx(rq));

  // Value measures carry a plain and a range block each, sized delta+1.
  int nu_blocks = 0;
  for (const auto& b : rel.blocks)
    if (b.tag == MeasureTag::Shortfall || b.tag == MeasureTag::ShortfallSlack) {
      ++nu_blocks;
      CHECK(b.size <= 4);
    }
  CHECK(nu_blocks == 4);
}

TEST_CASE("assembly is deterministic") {
  auto a = build_mean_relaxation(fixtures::oscillator_problem(), 2);
  auto b = build_mean_relaxation(fixtures::oscillator_problem(), 2);
  CHECK(a.hash == b.hash);
  REQUIRE(a.equalities.size() == b.equalities.size());
  for (std::size_t i = 0; i < a.equalities.size(); ++i) {
    CHECK(a.equalities[i].label == b.equalities[i].label);
    CHECK(a.equalities[i].lhs.terms == b.equalities[i].lhs.terms);
  }

  auto es_prob = fixtures::oscillator_problem();
  es_prob.epsilon = 0.15;
  auto es = build_es_relaxation(es_prob, 2);
  CHECK(es.hash != a.hash);
}

TEST_CASE("assembly rejects unusable inputs") {
  CHECK_THROWS_AS(build_mean_relaxation(fixtures::oscillator_problem(), 0),
                  std::invalid_argument);

  auto bad = fixtures::oscillator_problem();
  bad.h = -1.0;
  CHECK_THROWS_AS(build_mean_relaxation(bad, 2), std::invalid_argument);

  auto es = fixtures::oscillator_problem();
  es.epsilon = 0.0;
  CHECK_THROWS_AS(build_es_relaxation(es, 2), std::invalid_argument);

  // Cost degree above the dynamics-adjusted order leaves no room for the
  // value measure.
  auto steep = frozen_problem();
  steep.risk = RiskKind::ExpectedShortfall;
  steep.epsilon = 0.5;
  steep.cost = parse("x1^3", steep.state_vars);
  CHECK_THROWS_AS(build_es_relaxation(steep, 1), std::invalid_argument);
}
