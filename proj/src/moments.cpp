#include "winrisk/moments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace winrisk {

MomentBasis MomentBasis::make(std::vector<std::string> vars, unsigned degree) {
  MomentBasis b;
  b.vars = std::move(vars);
  b.degree = degree;
  b.monomials = enumerate_monomials(b.vars.size(), degree);
  for (int i = 0; i < static_cast<int>(b.monomials.size()); ++i) b.index.emplace(b.monomials[i], i);
  return b;
}

int MomentBasis::index_of(const MultiIndex& alpha) const {
  auto it = index.find(alpha);
  if (it == index.end())
    throw std::runtime_error("monomial of degree " + std::to_string(total_degree(alpha)) +
                             " lies outside a basis of degree " + std::to_string(degree));
  return it->second;
}

double RieszForm::apply(std::span<const double> y) const {
  double sum = 0.0;
  for (const auto& [id, c] : terms) sum += c * y[static_cast<std::size_t>(id)];
  return sum;
}

namespace {

RieszForm flatten(const std::map<int, double>& acc) {
  RieszForm f;
  f.terms.reserve(acc.size());
  for (const auto& [id, c] : acc)
    if (c != 0.0) f.terms.emplace_back(id, c);
  return f;
}

}  // namespace

RieszForm riesz(const MomentBasis& basis, const Polynomial& p, int offset) {
  std::map<int, double> acc;
  for (const auto& [a, c] : p.terms()) acc[offset + basis.index_of(a)] += c;
  return flatten(acc);
}

std::string measure_name(MeasureTag tag) {
  switch (tag) {
    case MeasureTag::Initial: return "y0";
    case MeasureTag::Terminal: return "ytau";
    case MeasureTag::WindowPlus: return "yplus";
    case MeasureTag::WindowMinus: return "yminus";
    case MeasureTag::Shortfall: return "ynu";
    case MeasureTag::ShortfallSlack: return "ynuhat";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Scaling

std::vector<double> ScalingInfo::unscale_state(std::span<const double> xs) const {
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = center[i] + halfwidth[i] * xs[i];
  return out;
}

namespace {

Polynomial compose_affine(const Polynomial& p, const std::vector<std::string>& state_vars,
                          const ScalingInfo& info, double time_factor) {
  // Substitute x_i -> center_i + halfwidth_i x_i and every time variable
  // v -> time_factor * v, staying on the same variable list.
  std::map<std::string, Polynomial> repl;
  const auto& vars = p.vars();
  for (const auto& v : vars) {
    if (v == "s" || v == "t") {
      repl.emplace(v, Polynomial::variable(vars, v) * time_factor);
      continue;
    }
    auto it = std::find(state_vars.begin(), state_vars.end(), v);
    if (it != state_vars.end()) {
      const std::size_t i = static_cast<std::size_t>(it - state_vars.begin());
      repl.emplace(v, Polynomial::variable(vars, v) * info.halfwidth[i] +
                          Polynomial::constant(vars, info.center[i]));
    }
  }
  return substitute(p, vars, repl);
}

SemialgebraicSet scale_set(const SemialgebraicSet& set, const std::vector<std::string>& state_vars,
                           const ScalingInfo& info) {
  SemialgebraicSet out;
  out.vars = set.vars;
  // Each coordinate maps through x = c + r x', so intervals shift and shrink.
  const auto bb = set.bounding_box();
  for (std::size_t i = 0; i < bb.size(); ++i)
    out.box.push_back({(bb[i].lo - info.center[i]) / info.halfwidth[i],
                       (bb[i].hi - info.center[i]) / info.halfwidth[i]});
  if (set.ball) {
    Polynomial g = Polynomial::constant(set.vars, set.ball->radius * set.ball->radius);
    for (std::size_t i = 0; i < set.vars.size(); ++i) {
      Polynomial d = Polynomial::variable(set.vars, set.vars[i]) -
                     Polynomial::constant(set.vars, set.ball->center[i]);
      g -= d * d;
    }
    out.extra.push_back(compose_affine(g, state_vars, info, 1.0));
  }
  for (const auto& g : set.extra) out.extra.push_back(compose_affine(g, state_vars, info, 1.0));
  if (set.ball_radius) {
    Polynomial g = Polynomial::constant(set.vars, *set.ball_radius * *set.ball_radius);
    for (const auto& v : set.vars) {
      Polynomial x = Polynomial::variable(set.vars, v);
      g -= x * x;
    }
    out.extra.push_back(compose_affine(g, state_vars, info, 1.0));
  }
  return out;
}

}  // namespace

ScaledProblem scale_problem(const RiskProblem& problem) {
  ScaledProblem out;
  out.info.time_scale = problem.T;
  auto bb = problem.X.bounding_box();
  for (const auto& iv : bb) {
    out.info.center.push_back(0.5 * (iv.lo + iv.hi));
    out.info.halfwidth.push_back(0.5 * (iv.hi - iv.lo));
  }
  const double T = problem.T;
  const auto& sv = problem.state_vars;

  RiskProblem& p = out.problem;
  p.name = problem.name;
  p.state_vars = sv;
  p.T = 1.0;
  p.h = problem.h / T;
  p.risk = problem.risk;
  p.epsilon = problem.epsilon;
  p.X = scale_set(problem.X, sv, out.info);
  p.X0 = scale_set(problem.X0, sv, out.info);
  p.cost = compose_affine(problem.cost, sv, out.info, 1.0);

  if (const auto* c = std::get_if<ContinuousDynamics>(&problem.dynamics)) {
    ContinuousDynamics d;
    d.state_vars = sv;
    for (std::size_t i = 0; i < c->drift.size(); ++i)
      d.drift.push_back(compose_affine(c->drift[i], sv, out.info, T) *
                        (T / out.info.halfwidth[i]));
    for (std::size_t i = 0; i < c->diffusion.size(); ++i) {
      std::vector<Polynomial> row;
      for (const auto& g : c->diffusion[i])
        row.push_back(compose_affine(g, sv, out.info, T) * (std::sqrt(T) / out.info.halfwidth[i]));
      d.diffusion.push_back(std::move(row));
    }
    p.dynamics = std::move(d);
  } else {
    const auto& dd = std::get<DiscreteDynamics>(problem.dynamics);
    DiscreteDynamics d;
    d.state_vars = sv;
    d.dt = dd.dt / T;
    d.noise = dd.noise;
    for (std::size_t i = 0; i < dd.update.size(); ++i)
      d.update.push_back((compose_affine(dd.update[i], sv, out.info, T) -
                          Polynomial::constant(dd.update[i].vars(), out.info.center[i])) *
                         (1.0 / out.info.halfwidth[i]));
    p.dynamics = std::move(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Guards and blocks

Polynomial window_guard(const std::vector<std::string>& vars, double T, double h) {
  Polynomial s = Polynomial::variable(vars, "s");
  return (Polynomial::constant(vars, T) - s) * (s - Polynomial::constant(vars, h));
}

Polynomial gplus_guard(const std::vector<std::string>& vars, double h) {
  Polynomial s = Polynomial::variable(vars, "s");
  Polynomial t = Polynomial::variable(vars, "t");
  return (s - t) * (t - s + Polynomial::constant(vars, h));
}

Polynomial gminus_guard(const std::vector<std::string>& vars, double h, double lag) {
  Polynomial s = Polynomial::variable(vars, "s");
  Polynomial t = Polynomial::variable(vars, "t");
  return (s - t - Polynomial::constant(vars, h + lag)) * t;
}

PsdBlock localizing_block(const MomentBasis& basis, int offset, const Polynomial& guard,
                          unsigned half_degree, MeasureTag tag, std::string label) {
  const unsigned gdeg = guard.is_zero() ? 0 : guard.degree();
  const unsigned reduce = (gdeg + 1) / 2;
  if (reduce > half_degree)
    throw std::invalid_argument("localizing block '" + label +
                                "': guard degree exceeds the relaxation order");
  const unsigned khat = half_degree - reduce;
  PsdBlock block;
  block.tag = tag;
  block.label = std::move(label);
  auto rows = enumerate_monomials(basis.vars.size(), khat);
  block.size = static_cast<int>(rows.size());
  MultiIndex sum(basis.vars.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i; j < rows.size(); ++j) {
      std::map<int, double> acc;
      for (const auto& [g, gc] : guard.terms()) {
        for (std::size_t v = 0; v < sum.size(); ++v) sum[v] = rows[i][v] + rows[j][v] + g[v];
        acc[offset + basis.index_of(sum)] += gc;
      }
      for (const auto& [var, coeff] : acc)
        if (coeff != 0.0)
          block.entries.push_back({static_cast<int>(i), static_cast<int>(j), var, coeff});
    }
  }
  return block;
}

// ---------------------------------------------------------------------------
// Liouville constraints

std::vector<Equality> liouville_constraints(const ScaledProblem& scaled, unsigned k,
                                            const std::vector<MeasureInfo>& measures) {
  auto find = [&](MeasureTag tag) -> const MeasureInfo& {
    for (const auto& m : measures)
      if (m.tag == tag) return m;
    throw std::logic_error("liouville_constraints: missing measure");
  };
  const MeasureInfo& y0 = find(MeasureTag::Initial);
  const MeasureInfo& ytau = find(MeasureTag::Terminal);
  const MeasureInfo& yplus = find(MeasureTag::WindowPlus);
  const MeasureInfo& yminus = find(MeasureTag::WindowMinus);

  const auto& states = scaled.problem.state_vars;
  std::vector<std::string> stx = {"s", "t"};
  stx.insert(stx.end(), states.begin(), states.end());

  std::vector<Equality> out;
  for (const auto& mono : enumerate_monomials(stx.size(), 2 * k)) {
    const unsigned a = mono[0], b = mono[1];
    std::map<int, double> acc;

    // Terminal measure sits on the diagonal t = s: v(s, s, x).
    MultiIndex term(states.size() + 1);
    term[0] = a + b;
    for (std::size_t i = 0; i < states.size(); ++i) term[i + 1] = mono[i + 2];
    acc[ytau.offset + ytau.basis.index_of(term)] += 1.0;

    // Initial measure sits at t = 0, so only b = 0 test functions see it.
    if (b == 0) {
      MultiIndex init(states.size() + 1);
      init[0] = a;
      for (std::size_t i = 0; i < states.size(); ++i) init[i + 1] = mono[i + 2];
      acc[y0.offset + y0.basis.index_of(init)] -= 1.0;
    }

    // Occupation of the window and pre-window segments under the generator.
    Polynomial v = Polynomial::monomial(stx, mono, 1.0);
    Polynomial lv = apply_augmented_generator(scaled.problem.dynamics, v).pruned(1e-14);
    for (const auto& [alpha, c] : lv.terms()) {
      acc[yplus.offset + yplus.basis.index_of(alpha)] -= c;
      acc[yminus.offset + yminus.basis.index_of(alpha)] -= c;
    }

    Equality eq;
    eq.lhs = flatten(acc);
    eq.rhs = 0.0;
    eq.label = "liouville:" + render(v);
    out.push_back(std::move(eq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Relaxation assembly

const MeasureInfo& MomentRelaxation::measure(MeasureTag tag) const {
  for (const auto& m : measures)
    if (m.tag == tag) return m;
  throw std::logic_error("relaxation lacks measure " + measure_name(tag));
}

bool MomentRelaxation::has_measure(MeasureTag tag) const {
  for (const auto& m : measures)
    if (m.tag == tag) return true;
  return false;
}

namespace {

MomentRelaxation build_core(const RiskProblem& problem, unsigned k) {
  if (k < 1) throw std::invalid_argument("relaxation order k must be at least 1");
  auto diags = validate_problem(problem);
  if (has_errors(diags))
    throw std::invalid_argument("invalid problem:\n" + format_diagnostics(diags));

  MomentRelaxation rel;
  rel.k = k;
  rel.risk = problem.risk;
  rel.epsilon = problem.epsilon;
  rel.orig_T = problem.T;
  rel.orig_h = problem.h;
  rel.scaled = scale_problem(problem);
  const RiskProblem& sp = rel.scaled.problem;
  rel.k_dyn = dynamics_degree(sp.dynamics, k);

  const auto& states = sp.state_vars;
  std::vector<std::string> sx = {"s"};
  sx.insert(sx.end(), states.begin(), states.end());
  std::vector<std::string> stx = {"s", "t"};
  stx.insert(stx.end(), states.begin(), states.end());

  rel.measures.push_back({MeasureTag::Initial, MomentBasis::make(sx, 2 * k), 0});
  rel.measures.push_back({MeasureTag::Terminal, MomentBasis::make(sx, 2 * k), 0});
  rel.measures.push_back({MeasureTag::WindowPlus, MomentBasis::make(stx, 2 * rel.k_dyn), 0});
  rel.measures.push_back({MeasureTag::WindowMinus, MomentBasis::make(stx, 2 * rel.k_dyn), 0});
  int offset = 0;
  for (auto& m : rel.measures) {
    m.offset = offset;
    offset += m.basis.size();
  }
  rel.num_vars = offset;

  rel.equalities = liouville_constraints(rel.scaled, k, rel.measures);
  {
    Equality mass0;
    mass0.lhs.terms = {{rel.measure(MeasureTag::Initial).offset, 1.0}};
    mass0.rhs = 1.0;
    mass0.label = "mass:y0";
    rel.equalities.push_back(std::move(mass0));
    Equality massp;
    massp.lhs.terms = {{rel.measure(MeasureTag::WindowPlus).offset, 1.0}};
    massp.rhs = sp.h;
    massp.label = "mass:yplus";
    rel.equalities.push_back(std::move(massp));
  }

  // PSD structure: plain moment matrix, stopping-time window guard, and the
  // support guards of the respective set / time region.
  const double lag = std::holds_alternative<DiscreteDynamics>(sp.dynamics)
                         ? std::get<DiscreteDynamics>(sp.dynamics).dt
                         : 0.0;
  auto add_blocks = [&](MeasureTag tag, unsigned half, const SemialgebraicSet* set,
                        bool window_measure) {
    const MeasureInfo& m = rel.measure(tag);
    const auto& vars = m.basis.vars;
    const std::string name = measure_name(tag);
    rel.blocks.push_back(localizing_block(m.basis, m.offset,
                                          Polynomial::constant(vars, 1.0), half, tag,
                                          name + ":moment"));
    rel.blocks.push_back(localizing_block(m.basis, m.offset, window_guard(vars, sp.T, sp.h),
                                          half, tag, name + ":window"));
    if (window_measure) {
      const Polynomial g = tag == MeasureTag::WindowPlus
                               ? gplus_guard(vars, sp.h)
                               : gminus_guard(vars, sp.h, lag);
      rel.blocks.push_back(
          localizing_block(m.basis, m.offset, g, half, tag, name + ":segment"));
    }
    if (set) {
      const auto guards = set->guards();
      for (std::size_t i = 0; i < guards.size(); ++i)
        rel.blocks.push_back(localizing_block(m.basis, m.offset, lift(guards[i], vars), half,
                                              tag, name + ":set" + std::to_string(i)));
    }
  };
  add_blocks(MeasureTag::Initial, k, &sp.X0, false);
  add_blocks(MeasureTag::Terminal, k, &sp.X, false);
  add_blocks(MeasureTag::WindowPlus, rel.k_dyn, &sp.X, true);
  add_blocks(MeasureTag::WindowMinus, rel.k_dyn, &sp.X, true);
  return rel;
}

Polynomial lifted_cost(const MomentRelaxation& rel) {
  return lift(rel.scaled.problem.cost, rel.measure(MeasureTag::WindowPlus).basis.vars);
}

}  // namespace

MomentRelaxation build_mean_relaxation(const RiskProblem& problem, unsigned k) {
  MomentRelaxation rel = build_core(problem, k);
  const MeasureInfo& yplus = rel.measure(MeasureTag::WindowPlus);
  rel.objective = riesz(yplus.basis, lifted_cost(rel) * (1.0 / rel.scaled.problem.h), yplus.offset);
  rel.hash = relaxation_hash(rel);
  return rel;
}

MomentRelaxation build_es_relaxation(const RiskProblem& problem, unsigned k) {
  if (!(problem.epsilon > 0 && problem.epsilon < 1))
    throw std::invalid_argument("expected shortfall needs epsilon in (0,1)");
  RiskProblem es = problem;
  es.risk = RiskKind::ExpectedShortfall;
  MomentRelaxation rel = build_core(es, k);
  const RiskProblem& sp = rel.scaled.problem;

  const unsigned deg_p = sp.cost.degree();
  rel.delta = rel.k_dyn / deg_p;
  if (rel.delta < 1)
    throw std::invalid_argument(
        "relaxation order too small for the shortfall reformulation: the cost degree exceeds "
        "the dynamics-adjusted order");

  // The cost value variable q ranges over an interval enclosure of the cost
  // on the state box; it is itself scaled onto [-1,1].
  rel.cost_bounds = interval_range(sp.cost, sp.X.box);
  const double cq = 0.5 * (rel.cost_bounds.lo + rel.cost_bounds.hi);
  const double rq = 0.5 * (rel.cost_bounds.hi - rel.cost_bounds.lo);
  if (!(rq > 1e-12)) throw std::invalid_argument("cost range is degenerate");

  const std::vector<std::string> qv = {"q"};
  rel.measures.push_back({MeasureTag::Shortfall, MomentBasis::make(qv, 2 * rel.delta), rel.num_vars});
  rel.num_vars += rel.measures.back().basis.size();
  rel.measures.push_back(
      {MeasureTag::ShortfallSlack, MomentBasis::make(qv, 2 * rel.delta), rel.num_vars});
  rel.num_vars += rel.measures.back().basis.size();

  const MeasureInfo& yplus = rel.measure(MeasureTag::WindowPlus);
  const MeasureInfo& ynu = rel.measure(MeasureTag::Shortfall);
  const MeasureInfo& ynuhat = rel.measure(MeasureTag::ShortfallSlack);

  {
    Equality mass;
    mass.lhs.terms = {{ynu.offset, 1.0}};
    mass.rhs = 1.0;
    mass.label = "mass:ynu";
    rel.equalities.push_back(std::move(mass));
  }

  // Moment matching: the value distribution of the window occupation splits
  // as epsilon * nu + nuhat, tested against powers of the (unscaled) value.
  const Polynomial qpoly =
      Polynomial::variable(qv, "q") * rq + Polynomial::constant(qv, cq);
  const Polynomial pcost = lifted_cost(rel);
  for (unsigned l = 0; l <= 2 * rel.delta; ++l) {
    std::map<int, double> acc;
    for (const auto& [id, c] :
         riesz(yplus.basis, pow(pcost, l) * (1.0 / sp.h), yplus.offset).terms)
      acc[id] += c;
    for (const auto& [id, c] : riesz(ynu.basis, pow(qpoly, l), ynu.offset).terms)
      acc[id] -= rel.epsilon * c;
    for (const auto& [id, c] : riesz(ynuhat.basis, pow(qpoly, l), ynuhat.offset).terms)
      acc[id] -= c;
    Equality eq;
    eq.lhs = flatten(acc);
    eq.rhs = 0.0;
    eq.label = "shortfall:match" + std::to_string(l);
    rel.equalities.push_back(std::move(eq));
  }

  const Polynomial qguard =
      Polynomial::constant(qv, 1.0) - pow(Polynomial::variable(qv, "q"), 2);
  for (MeasureTag tag : {MeasureTag::Shortfall, MeasureTag::ShortfallSlack}) {
    const MeasureInfo& m = rel.measure(tag);
    rel.blocks.push_back(localizing_block(m.basis, m.offset, Polynomial::constant(qv, 1.0),
                                          rel.delta, tag, measure_name(tag) + ":moment"));
    rel.blocks.push_back(
        localizing_block(m.basis, m.offset, qguard, rel.delta, tag, measure_name(tag) + ":range"));
  }

  rel.objective = riesz(ynu.basis, qpoly, ynu.offset);
  rel.hash = relaxation_hash(rel);
  return rel;
}

// ---------------------------------------------------------------------------
// Hashing and evaluation helpers

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void feed(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  void feed(const std::string& s) { feed(s.data(), s.size()); }
  void feed_int(long long v) { feed(&v, sizeof v); }
  void feed_double(double v) { feed(format_double(v)); }
};

}  // namespace

std::uint64_t relaxation_hash(const MomentRelaxation& rel) {
  Fnv f;
  f.feed_int(rel.k);
  f.feed_int(rel.k_dyn);
  f.feed_int(rel.delta);
  f.feed_int(static_cast<int>(rel.risk));
  f.feed_double(rel.risk == RiskKind::ExpectedShortfall ? rel.epsilon : 1.0);
  f.feed_int(rel.num_vars);
  for (const auto& m : rel.measures) {
    f.feed_int(static_cast<int>(m.tag));
    f.feed_int(m.offset);
    f.feed_int(m.basis.size());
    f.feed_int(m.basis.degree);
    for (const auto& v : m.basis.vars) f.feed(v);
  }
  f.feed_int(static_cast<long long>(rel.equalities.size()));
  for (const auto& eq : rel.equalities) {
    for (const auto& [id, c] : eq.lhs.terms) {
      f.feed_int(id);
      f.feed_double(c);
    }
    f.feed_double(eq.rhs);
  }
  f.feed_int(static_cast<long long>(rel.blocks.size()));
  for (const auto& b : rel.blocks) {
    f.feed_int(static_cast<int>(b.tag));
    f.feed_int(b.size);
    for (const auto& e : b.entries) {
      f.feed_int(e.row);
      f.feed_int(e.col);
      f.feed_int(e.var);
      f.feed_double(e.coeff);
    }
  }
  for (const auto& [id, c] : rel.objective.terms) {
    f.feed_int(id);
    f.feed_double(c);
  }
  return f.h;
}

std::vector<double> dense_block(const PsdBlock& block, std::span<const double> y) {
  std::vector<double> M(static_cast<std::size_t>(block.size) * block.size, 0.0);
  for (const auto& e : block.entries) {
    const double v = e.coeff * y[static_cast<std::size_t>(e.var)];
    M[static_cast<std::size_t>(e.row) * block.size + e.col] += v;
    if (e.row != e.col) M[static_cast<std::size_t>(e.col) * block.size + e.row] += v;
  }
  return M;
}

double measure_mass(const MomentRelaxation& rel, MeasureTag tag, std::span<const double> y) {
  return y[static_cast<std::size_t>(rel.measure(tag).offset)];
}

}  // namespace winrisk
