#include "winrisk/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace winrisk {

Interval interval_add(Interval a, Interval b) { return {a.lo + b.lo, a.hi + b.hi}; }

Interval interval_mul(Interval a, Interval b) {
  const double p1 = a.lo * b.lo, p2 = a.lo * b.hi, p3 = a.hi * b.lo, p4 = a.hi * b.hi;
  return {std::min(std::min(p1, p2), std::min(p3, p4)),
          std::max(std::max(p1, p2), std::max(p3, p4))};
}

Interval interval_scale(Interval a, double c) {
  return c >= 0 ? Interval{a.lo * c, a.hi * c} : Interval{a.hi * c, a.lo * c};
}

Interval interval_pow(Interval a, unsigned e) {
  Interval out{1.0, 1.0};
  for (unsigned i = 0; i < e; ++i) out = interval_mul(out, a);
  return out;
}

Interval interval_range(const Polynomial& p, const std::vector<Interval>& box) {
  if (box.size() != p.vars().size())
    throw std::invalid_argument("interval_range: box dimension mismatch");
  Interval sum{0.0, 0.0};
  for (const auto& [a, c] : p.terms()) {
    Interval term{1.0, 1.0};
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] > 0) term = interval_mul(term, interval_pow(box[i], a[i]));
    sum = interval_add(sum, interval_scale(term, c));
  }
  return sum;
}

// ---------------------------------------------------------------------------
// Sets

std::vector<Polynomial> SemialgebraicSet::guards() const {
  std::vector<Polynomial> gs;
  if (!box.empty()) {
    if (box.size() != vars.size())
      throw std::invalid_argument("set box does not match the variable count");
    for (std::size_t i = 0; i < vars.size(); ++i) {
      Polynomial x = Polynomial::variable(vars, vars[i]);
      gs.push_back((Polynomial::constant(vars, box[i].hi) - x) *
                   (x - Polynomial::constant(vars, box[i].lo)));
    }
  }
  if (ball) {
    Polynomial g = Polynomial::constant(vars, ball->radius * ball->radius);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      Polynomial d = Polynomial::variable(vars, vars[i]) -
                     Polynomial::constant(vars, ball->center[i]);
      g -= d * d;
    }
    gs.push_back(g);
  }
  for (const auto& g : extra) gs.push_back(g);
  if (ball_radius) {
    Polynomial g = Polynomial::constant(vars, *ball_radius * *ball_radius);
    for (const auto& v : vars) {
      Polynomial x = Polynomial::variable(vars, v);
      g -= x * x;
    }
    gs.push_back(g);
  }
  return gs;
}

std::vector<Interval> SemialgebraicSet::bounding_box() const {
  std::vector<Interval> bb;
  if (!box.empty()) {
    bb = box;
  } else if (ball) {
    for (double c : ball->center) bb.push_back({c - ball->radius, c + ball->radius});
  } else if (ball_radius) {
    for (std::size_t i = 0; i < vars.size(); ++i) bb.push_back({-*ball_radius, *ball_radius});
  } else {
    throw std::runtime_error("set has no bounded description (box or ball required)");
  }
  // Free-form guards can only shrink the set, never grow it, so the box is
  // a valid enclosure as-is.
  return bb;
}

bool SemialgebraicSet::contains(std::span<const double> x, double tol) const {
  if (x.size() != vars.size()) throw std::invalid_argument("contains: dimension mismatch");
  if (!box.empty())
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < box[i].lo - tol || x[i] > box[i].hi + tol) return false;
  for (const auto& g : guards())
    if (evaluate(g, x) < -tol) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Noise

double NoiseMoments::moment(unsigned j) const {
  if (j >= m.size())
    throw std::runtime_error("noise moment of degree " + std::to_string(j) +
                             " required but only " + std::to_string(m.size() ? m.size() - 1 : 0) +
                             " provided");
  return m[j];
}

double NoiseMoments::hankel_min_eig() const {
  if (m.empty()) return 0.0;
  const unsigned half = max_degree() / 2;
  Eigen::MatrixXd H(half + 1, half + 1);
  for (unsigned i = 0; i <= half; ++i)
    for (unsigned j = 0; j <= half; ++j) H(i, j) = m[i + j];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool NoiseMoments::realizable(double tol) const {
  if (m.empty() || std::abs(m[0] - 1.0) > tol) return false;
  double peak = 1.0;
  for (double v : m) peak = std::max(peak, std::abs(v));
  return hankel_min_eig() >= -tol * peak;
}

NoiseMoments law_moments(const NoiseLaw& law, unsigned max_degree) {
  NoiseMoments out;
  out.m.resize(max_degree + 1, 0.0);
  if (const auto* f = std::get_if<FiniteLaw>(&law)) {
    if (f->values.size() != f->probs.size() || f->values.empty())
      throw std::invalid_argument("finite law needs matching nonempty values/probs");
    for (unsigned j = 0; j <= max_degree; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < f->values.size(); ++i)
        s += f->probs[i] * std::pow(f->values[i], static_cast<double>(j));
      out.m[j] = s;
    }
  } else if (const auto* u = std::get_if<UniformLaw>(&law)) {
    if (!(u->b > u->a)) throw std::invalid_argument("uniform law needs a < b");
    for (unsigned j = 0; j <= max_degree; ++j)
      out.m[j] = (std::pow(u->b, j + 1.0) - std::pow(u->a, j + 1.0)) / ((j + 1.0) * (u->b - u->a));
  } else {
    const auto& g = std::get<GaussianLaw>(law);
    if (g.stddev < 0) throw std::invalid_argument("gaussian law needs stddev >= 0");
    // E[X^j] = mu E[X^(j-1)] + (j-1) sigma^2 E[X^(j-2)]
    out.m[0] = 1.0;
    if (max_degree >= 1) out.m[1] = g.mean;
    for (unsigned j = 2; j <= max_degree; ++j)
      out.m[j] = g.mean * out.m[j - 1] + (j - 1.0) * g.stddev * g.stddev * out.m[j - 2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamics and generators

std::vector<std::string> ContinuousDynamics::tx_vars() const {
  std::vector<std::string> v = {"t"};
  v.insert(v.end(), state_vars.begin(), state_vars.end());
  return v;
}

std::vector<std::string> DiscreteDynamics::tx_vars() const {
  std::vector<std::string> v = {"t"};
  v.insert(v.end(), state_vars.begin(), state_vars.end());
  return v;
}

std::vector<std::string> DiscreteDynamics::txn_vars() const {
  std::vector<std::string> v = tx_vars();
  for (const auto& n : noise) v.push_back(n.var);
  return v;
}

const std::vector<std::string>& dynamics_state_vars(const Dynamics& dyn) {
  return std::visit([](const auto& d) -> const std::vector<std::string>& { return d.state_vars; },
                    dyn);
}

namespace {

Polynomial continuous_generator(const ContinuousDynamics& dyn, const Polynomial& v) {
  const auto tx = dyn.tx_vars();
  if (v.vars() != tx)
    throw std::invalid_argument("apply_generator: test function must live over (t, states)");
  Polynomial out = partial(v, "t");
  for (std::size_t i = 0; i < dyn.state_vars.size(); ++i)
    out += dyn.drift[i] * partial(v, dyn.state_vars[i]);
  if (!dyn.diffusion.empty()) {
    const std::size_t n = dyn.state_vars.size();
    const std::size_t w = dyn.diffusion.front().size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        Polynomial aij(tx);
        for (std::size_t c = 0; c < w; ++c) aij += dyn.diffusion[i][c] * dyn.diffusion[j][c];
        if (aij.is_zero()) continue;
        Polynomial hess = partial(partial(v, dyn.state_vars[i]), dyn.state_vars[j]);
        // (1/2) sum_{i,j} a_ij d2v/dxi dxj; off-diagonal pairs appear twice.
        out += aij * hess * (i == j ? 0.5 : 1.0);
      }
    }
  }
  return out;
}

Polynomial discrete_generator(const DiscreteDynamics& dyn, const Polynomial& v) {
  const auto tx = dyn.tx_vars();
  if (v.vars() != tx)
    throw std::invalid_argument("apply_generator: test function must live over (t, states)");
  const auto big = dyn.txn_vars();
  std::map<std::string, Polynomial> repl;
  repl.emplace("t", Polynomial::variable(big, "t") + Polynomial::constant(big, dyn.dt));
  for (std::size_t i = 0; i < dyn.state_vars.size(); ++i)
    repl.emplace(dyn.state_vars[i], dyn.update[i]);
  Polynomial stepped = substitute(v, big, repl);

  // Integrate the noise out: independent components, so a mixed power
  // lambda1^e1 ... lambdaw^ew contributes the product of raw moments.
  const std::size_t base = tx.size();
  Polynomial expected(tx);
  for (const auto& [a, c] : stepped.terms()) {
    double factor = c;
    for (std::size_t k = 0; k < dyn.noise.size(); ++k)
      if (a[base + k] > 0) factor *= dyn.noise[k].moments.moment(a[base + k]);
    MultiIndex head(a.begin(), a.begin() + static_cast<long>(base));
    expected += Polynomial::monomial(tx, std::move(head), factor);
  }
  return (expected - v) * (1.0 / dyn.dt);
}

}  // namespace

Polynomial apply_generator(const Dynamics& dyn, const Polynomial& v) {
  if (const auto* c = std::get_if<ContinuousDynamics>(&dyn)) return continuous_generator(*c, v);
  return discrete_generator(std::get<DiscreteDynamics>(dyn), v);
}

Polynomial apply_augmented_generator(const Dynamics& dyn, const Polynomial& v) {
  const auto& states = dynamics_state_vars(dyn);
  std::vector<std::string> stx = {"s", "t"};
  stx.insert(stx.end(), states.begin(), states.end());
  if (v.vars() != stx)
    throw std::invalid_argument(
        "apply_augmented_generator: test function must live over (s, t, states)");
  std::vector<std::string> tx = {"t"};
  tx.insert(tx.end(), states.begin(), states.end());

  // Split v into s-power slices, push each slice through the generator with
  // s treated as a constant, and reassemble.
  std::map<unsigned, Polynomial> slices;
  for (const auto& [a, c] : v.terms()) {
    MultiIndex rest(a.begin() + 1, a.end());
    auto [it, fresh] = slices.try_emplace(a[0], Polynomial(tx));
    it->second += Polynomial::monomial(tx, std::move(rest), c);
  }
  Polynomial out(stx);
  for (const auto& [spow, slice] : slices) {
    Polynomial ls = lift(apply_generator(dyn, slice), stx);
    if (spow > 0) ls = ls * pow(Polynomial::variable(stx, "s"), spow);
    out += ls;
  }
  return out;
}

unsigned dynamics_degree(const Dynamics& dyn, unsigned k) {
  const auto& states = dynamics_state_vars(dyn);
  std::vector<std::string> tx = {"t"};
  tx.insert(tx.end(), states.begin(), states.end());
  // For a monomial s^a * m(t,x) the generator preserves the s-power, so the
  // worst case over deg <= 2k test functions takes a maximal:
  //   max over deg m <= 2k of (2k - deg m) + deg L(m).
  unsigned worst = 2 * k;
  for (const auto& mono : enumerate_monomials(tx.size(), 2 * k)) {
    Polynomial m = Polynomial::monomial(tx, mono, 1.0);
    Polynomial lm = apply_generator(dyn, m).pruned();
    if (lm.is_zero()) continue;
    worst = std::max(worst, 2 * k - total_degree(mono) + lm.degree());
  }
  return std::max(k, (worst + 1) / 2);
}

Interval cost_range(const RiskProblem& problem) {
  return interval_range(problem.cost, problem.X.bounding_box());
}

// ---------------------------------------------------------------------------
// Validation

bool has_errors(const std::vector<Diagnostic>& diags) {
  return std::any_of(diags.begin(), diags.end(),
                     [](const Diagnostic& d) { return d.severity == Severity::Error; });
}

std::string format_diagnostics(const std::vector<Diagnostic>& diags) {
  std::ostringstream out;
  for (const auto& d : diags)
    out << (d.severity == Severity::Error ? "error" : "warning") << "[" << d.code
        << "]: " << d.message << "\n";
  return out.str();
}

namespace {

void check_set(const SemialgebraicSet& set, const std::string& which,
               const std::vector<std::string>& state_vars, std::vector<Diagnostic>& out) {
  auto err = [&](const std::string& code, const std::string& msg) {
    out.push_back({Severity::Error, code, which + ": " + msg});
  };
  if (set.vars != state_vars) {
    err("set-vars", "variable list does not match the problem state variables");
    return;
  }
  if (set.box.empty() && !set.ball && !set.ball_radius)
    err("set-unbounded", "no box or ball present; the set must be certifiably bounded");
  if (!set.box.empty()) {
    if (set.box.size() != set.vars.size())
      err("set-box-dim", "box entry count does not match the variable count");
    else
      for (std::size_t i = 0; i < set.box.size(); ++i)
        if (!(set.box[i].lo < set.box[i].hi))
          err("set-box-order", "box interval for " + set.vars[i] + " is empty or reversed");
  }
  if (set.ball) {
    if (set.ball->center.size() != set.vars.size())
      err("set-ball-dim", "ball center dimension does not match the variable count");
    if (!(set.ball->radius > 0)) err("set-ball-radius", "ball radius must be positive");
  }
  if (set.ball_radius && !(*set.ball_radius > 0))
    err("set-ball-radius", "Archimedean radius must be positive");
  for (const auto& g : set.extra)
    if (g.vars() != state_vars) err("set-guard-vars", "guard over unexpected variables");
}

}  // namespace

std::vector<Diagnostic> validate_problem(const RiskProblem& problem) {
  std::vector<Diagnostic> out;
  auto err = [&](const std::string& code, const std::string& msg) {
    out.push_back({Severity::Error, code, msg});
  };
  auto warn = [&](const std::string& code, const std::string& msg) {
    out.push_back({Severity::Warning, code, msg});
  };

  if (problem.state_vars.empty()) err("states-empty", "at least one state variable is required");
  for (const auto& v : problem.state_vars) {
    if (std::find(kReservedVars.begin(), kReservedVars.end(), v) != kReservedVars.end())
      err("reserved-name", "state variable '" + v + "' collides with a reserved name");
    if (std::count(problem.state_vars.begin(), problem.state_vars.end(), v) > 1)
      err("duplicate-name", "state variable '" + v + "' appears more than once");
  }

  if (!(problem.T > 0)) err("horizon", "T must be positive");
  if (!(problem.h > 0)) err("window", "h must be positive");
  if (problem.h > problem.T * (1 + 1e-12)) err("window", "window h exceeds the horizon T");

  check_set(problem.X, "state set", problem.state_vars, out);
  check_set(problem.X0, "initial set", problem.state_vars, out);
  if (problem.X.box.size() == problem.state_vars.size()) {
    try {
      auto bb0 = problem.X0.bounding_box();
      for (std::size_t i = 0; i < bb0.size(); ++i)
        if (bb0[i].lo < problem.X.box[i].lo - 1e-12 || bb0[i].hi > problem.X.box[i].hi + 1e-12)
          warn("x0-outside", "initial set is not contained in the state set's box");
    } catch (const std::exception&) {
      // unbounded X0 already reported
    }
  }

  if (problem.cost.vars() != problem.state_vars)
    err("cost-vars", "cost must be a polynomial in the state variables");
  else if (problem.cost.degree() == 0 && problem.risk == RiskKind::ExpectedShortfall)
    err("cost-constant", "expected shortfall needs a non-constant cost");
  else if (problem.cost.degree() == 0)
    warn("cost-constant", "cost is constant; bounds are trivial");

  if (problem.risk == RiskKind::ExpectedShortfall &&
      !(problem.epsilon > 0 && problem.epsilon < 1))
    err("epsilon", "shortfall level must lie strictly between 0 and 1");

  if (const auto* c = std::get_if<ContinuousDynamics>(&problem.dynamics)) {
    if (c->state_vars != problem.state_vars)
      err("dyn-vars", "dynamics state variables do not match the problem");
    const auto tx = c->tx_vars();
    if (c->drift.size() != problem.state_vars.size())
      err("drift-dim", "drift entry count does not match the state dimension");
    for (const auto& f : c->drift)
      if (f.vars() != tx) err("drift-vars", "drift entries must live over (t, states)");
    if (!c->diffusion.empty()) {
      if (c->diffusion.size() != problem.state_vars.size())
        err("diffusion-dim", "diffusion row count does not match the state dimension");
      const std::size_t w = c->diffusion.front().size();
      for (const auto& row : c->diffusion) {
        if (row.size() != w) err("diffusion-ragged", "diffusion rows have unequal widths");
        for (const auto& g : row)
          if (g.vars() != tx) err("diffusion-vars", "diffusion entries must live over (t, states)");
      }
    }
  } else {
    const auto& d = std::get<DiscreteDynamics>(problem.dynamics);
    if (d.state_vars != problem.state_vars)
      err("dyn-vars", "dynamics state variables do not match the problem");
    if (!(d.dt > 0)) err("dt", "discrete step dt must be positive");
    if (d.dt > 0) {
      const double steps = problem.h / d.dt;
      if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
        err("window-step", "window h must be an integer multiple of dt");
      const double hsteps = problem.T / d.dt;
      if (std::abs(hsteps - std::round(hsteps)) > 1e-9 * std::max(1.0, hsteps))
        err("horizon-step", "horizon T must be an integer multiple of dt");
      if (d.dt > problem.h) err("window-step", "dt exceeds the window length h");
    }
    const auto txn = d.txn_vars();
    if (d.update.size() != problem.state_vars.size())
      err("update-dim", "update entry count does not match the state dimension");
    for (const auto& f : d.update)
      if (f.vars() != txn) err("update-vars", "update entries must live over (t, states, noise)");
    for (const auto& n : d.noise) {
      if (std::find(kReservedVars.begin(), kReservedVars.end(), n.var) != kReservedVars.end() ||
          std::find(problem.state_vars.begin(), problem.state_vars.end(), n.var) !=
              problem.state_vars.end())
        err("reserved-name", "noise variable '" + n.var + "' collides with another name");
      if (n.moments.m.empty() || std::abs(n.moments.m[0] - 1.0) > 1e-12)
        err("noise-mass", "noise moments must start with m0 = 1");
      else if (!n.moments.realizable())
        err("noise-hankel", "noise moment sequence has a negative-definite Hankel matrix");
      if (n.law) {
        try {
          NoiseMoments analytic = law_moments(*n.law, n.moments.max_degree());
          for (std::size_t j = 0; j < n.moments.m.size(); ++j) {
            const double scale = std::max(1.0, std::abs(analytic.m[j]));
            if (std::abs(analytic.m[j] - n.moments.m[j]) > 1e-9 * scale) {
              err("noise-law-mismatch",
                  "sampling law moments disagree with the listed moments for '" + n.var + "'");
              break;
            }
          }
        } catch (const std::exception& e) {
          err("noise-law", e.what());
        }
      }
    }
  }
  return out;
}

}  // namespace winrisk
