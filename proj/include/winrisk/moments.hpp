#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "winrisk/model.hpp"
#include "winrisk/polynomial.hpp"

namespace winrisk {

/// Monomial basis over an ordered variable list up to a total degree, in the
/// project-wide graded order.  Position in `monomials` is the moment index.
struct MomentBasis {
  std::vector<std::string> vars;
  unsigned degree = 0;
  std::vector<MultiIndex> monomials;
  std::map<MultiIndex, int, GradedLess> index;

  static MomentBasis make(std::vector<std::string> vars, unsigned degree);
  int size() const { return static_cast<int>(monomials.size()); }
  int index_of(const MultiIndex& alpha) const;  // throws if out of basis
};

/// Sparse linear functional over the concatenated moment vector:
/// sum of coeff * y[var].  Entries are sorted by variable id and merged.
struct RieszForm {
  std::vector<std::pair<int, double>> terms;

  double apply(std::span<const double> y) const;
};

/// Riesz image of a polynomial under a measure's basis placed at `offset`
/// in the concatenated moment vector: each monomial maps to its moment.
RieszForm riesz(const MomentBasis& basis, const Polynomial& p, int offset);

/// The measures of the window-risk linear program, in concatenation order.
enum class MeasureTag { Initial, Terminal, WindowPlus, WindowMinus, Shortfall, ShortfallSlack };

std::string measure_name(MeasureTag tag);

struct MeasureInfo {
  MeasureTag tag;
  MomentBasis basis;
  int offset = 0;
};

/// One symmetric PSD constraint sum_var coeff * y[var] at (row,col); the
/// localizing matrix of a guard polynomial (guard = 1 gives the plain
/// moment matrix).  Entries cover the upper triangle (row <= col) only.
struct PsdBlock {
  MeasureTag tag;
  std::string label;
  int size = 0;
  struct Entry {
    int row, col;
    int var;
    double coeff;
  };
  std::vector<Entry> entries;
};

struct Equality {
  RieszForm lhs;
  double rhs = 0.0;
  std::string label;
};

/// Affine change of variables applied before assembly: time is mapped to
/// [0,1] and each state coordinate to [-1,1] via x = center + halfwidth*x'.
/// Bound values are invariant; masses scale by 1/T.
struct ScalingInfo {
  double time_scale = 1.0;  // original T
  std::vector<double> center;
  std::vector<double> halfwidth;

  std::vector<double> unscale_state(std::span<const double> xs) const;
  double unscale_time(double ts) const { return ts * time_scale; }
};

struct ScaledProblem {
  RiskProblem problem;  // T = 1, states over [-1,1] boxes
  ScalingInfo info;
};

/// Rewrites a validated problem in scaled coordinates (see ScalingInfo).
/// Drift picks up T/halfwidth, diffusion sqrt(T)/halfwidth, discrete steps
/// become dt/T.
ScaledProblem scale_problem(const RiskProblem& problem);

/// Temporal support guards, over a variable list containing "s" (and "t"
/// for the window guards):
///   window_guard      (T - s)(s - h)          stopping times in [h, T]
///   gplus             (s - t)(t - s + h)      window times t in [s-h, s]
///   gminus            (s - t - h - lag) t     pre-window times, lag = dt
///                                             for discrete dynamics else 0
Polynomial window_guard(const std::vector<std::string>& vars, double T, double h);
Polynomial gplus_guard(const std::vector<std::string>& vars, double h);
Polynomial gminus_guard(const std::vector<std::string>& vars, double h, double lag);

/// Localizing block of `guard` for a measure whose moments live in `basis`
/// at `offset`: rows/cols are the monomials of degree
/// <= half_degree - ceil(deg guard / 2), and entry (a,b) is the Riesz image
/// of guard * m_a * m_b.
PsdBlock localizing_block(const MomentBasis& basis, int offset, const Polynomial& guard,
                          unsigned half_degree, MeasureTag tag, std::string label);

/// The assembled moment-SOS relaxation: maximize objective . y subject to
/// the equalities and the PSD blocks.
struct MomentRelaxation {
  std::vector<MeasureInfo> measures;
  int num_vars = 0;
  std::vector<Equality> equalities;
  std::vector<PsdBlock> blocks;
  RieszForm objective;

  unsigned k = 0;       // relaxation order
  unsigned k_dyn = 0;   // dynamics-adjusted order of the window measures
  unsigned delta = 0;   // shortfall value-measure order (0 for mean)
  RiskKind risk = RiskKind::Mean;
  double epsilon = 1.0;
  Interval cost_bounds{0.0, 0.0};  // enclosure of the cost (ES only)
  ScaledProblem scaled;
  double orig_T = 0.0, orig_h = 0.0;
  std::uint64_t hash = 0;

  const MeasureInfo& measure(MeasureTag tag) const;
  bool has_measure(MeasureTag tag) const;
};

/// Liouville equation in weak form, one equality per test monomial
/// s^a t^b x^g of degree <= 2k:
///   E_terminal[s^(a+b) x^g] - [b=0] E_initial[s^a x^g]
///     = <L(s^a t^b x^g), window + pre-window occupation>.
/// Inputs are the scaled problem and the already-built measure table.
std::vector<Equality> liouville_constraints(const ScaledProblem& scaled, unsigned k,
                                            const std::vector<MeasureInfo>& measures);

/// Moment-SOS relaxation of the windowed-mean bound at order k.
MomentRelaxation build_mean_relaxation(const RiskProblem& problem, unsigned k);

/// Moment-SOS relaxation of the windowed expected-shortfall bound at order
/// k and level problem.epsilon.
MomentRelaxation build_es_relaxation(const RiskProblem& problem, unsigned k);

/// FNV-1a hash of the full constraint data; identical problems and orders
/// hash identically (used by the exporter sidecar and determinism tests).
std::uint64_t relaxation_hash(const MomentRelaxation& rel);

/// Dense symmetric realization of a block at a given moment vector.
std::vector<double> dense_block(const PsdBlock& block, std::span<const double> y);

/// Mass (zeroth moment) of a measure inside the concatenated vector.
double measure_mass(const MomentRelaxation& rel, MeasureTag tag, std::span<const double> y);

}  // namespace winrisk
