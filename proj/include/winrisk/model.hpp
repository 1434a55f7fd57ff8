#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "winrisk/polynomial.hpp"

namespace winrisk {

// Reserved variable names: "s" (stopping time), "t" (running time), "q"
// (cost value in the shortfall reformulation).  State and noise variables
// must avoid them.
inline const std::vector<std::string> kReservedVars = {"s", "t", "q"};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

Interval interval_add(Interval a, Interval b);
Interval interval_mul(Interval a, Interval b);
Interval interval_scale(Interval a, double c);
/// Repeated interval multiplication; deliberately conservative (e.g. the
/// square of [-1,1] evaluates to [-1,1], not [0,1]).
Interval interval_pow(Interval a, unsigned e);
/// Range enclosure of p over an axis-aligned box, term by term.
Interval interval_range(const Polynomial& p, const std::vector<Interval>& box);

struct Ball {
  std::vector<double> center;
  double radius = 0.0;
};

/// Compact basic semialgebraic set over an ordered list of state variables.
/// The description is structured: an optional axis-aligned box (encoded as
/// one quadratic guard (hi - x)(x - lo) >= 0 per coordinate at relaxation
/// time), an optional ball, free-form polynomial guards, and an optional
/// Archimedean radius R (appends R^2 - |x|^2 >= 0).  At least a box or a
/// ball must be present so the set is certifiably bounded.
struct SemialgebraicSet {
  std::vector<std::string> vars;
  std::vector<Interval> box;        // empty or one interval per variable
  std::optional<Ball> ball;
  std::vector<Polynomial> extra;    // additional guards g(x) >= 0 over `vars`
  std::optional<double> ball_radius;

  /// All guard polynomials over `vars`, in a fixed order.
  std::vector<Polynomial> guards() const;
  /// Smallest axis-aligned box known to enclose the set.  Throws if the
  /// description carries neither a box nor a ball.
  std::vector<Interval> bounding_box() const;
  /// Membership test using every structured and free-form guard.
  bool contains(std::span<const double> x, double tol = 0.0) const;
};

/// Raw moment sequence m[j] = E[lambda^j] of a scalar noise variable,
/// m[0] = 1.  Realizability is checked through the Hankel matrix.
struct NoiseMoments {
  std::vector<double> m;

  unsigned max_degree() const { return m.empty() ? 0 : static_cast<unsigned>(m.size() - 1); }
  double moment(unsigned j) const;
  /// Minimum eigenvalue of the Hankel matrix [m_(i+j)]; PSD (up to a
  /// relative tolerance) is necessary for the moments to come from a
  /// distribution.
  double hankel_min_eig() const;
  bool realizable(double tol = 1e-9) const;
};

struct FiniteLaw {
  std::vector<double> values;
  std::vector<double> probs;
};
struct UniformLaw {
  double a = 0.0, b = 1.0;
};
struct GaussianLaw {
  double mean = 0.0, stddev = 1.0;
};
using NoiseLaw = std::variant<FiniteLaw, UniformLaw, GaussianLaw>;

/// Analytic moments of a sampling law up to `max_degree` (inclusive).
NoiseMoments law_moments(const NoiseLaw& law, unsigned max_degree);

/// One scalar noise input of a discrete-time system.  Independent
/// components; mixed moments factor into products.  The sampling law is
/// optional (moment data alone supports relaxations but not simulation).
struct NoiseSpec {
  std::string var;
  NoiseMoments moments;
  std::optional<NoiseLaw> law;
};

/// dx = f(t,x) dt + g(t,x) dW with polynomial drift f (one entry per state)
/// and n-by-w polynomial diffusion g, all over variables (t, x1..xn).
struct ContinuousDynamics {
  std::vector<std::string> state_vars;
  std::vector<Polynomial> drift;
  std::vector<std::vector<Polynomial>> diffusion;  // n rows of w columns; may be empty

  std::vector<std::string> tx_vars() const;
};

/// x+ = f(t, x, lambda) every dt time units, lambda the independent noise
/// components.  Update entries live over (t, x1..xn, noise...).
struct DiscreteDynamics {
  std::vector<std::string> state_vars;
  double dt = 0.0;
  std::vector<Polynomial> update;
  std::vector<NoiseSpec> noise;

  std::vector<std::string> tx_vars() const;
  std::vector<std::string> txn_vars() const;
};

using Dynamics = std::variant<ContinuousDynamics, DiscreteDynamics>;

const std::vector<std::string>& dynamics_state_vars(const Dynamics& dyn);

enum class RiskKind { Mean, ExpectedShortfall };

/// A windowed-risk bounding instance: trajectories of `dynamics` start in
/// X0, evolve in X over [0, T], and the certified quantity is the mean or
/// the expected shortfall at level epsilon of the sliding window average of
/// cost(x) over windows of length h.
struct RiskProblem {
  std::string name;
  std::vector<std::string> state_vars;
  SemialgebraicSet X;
  SemialgebraicSet X0;
  Dynamics dynamics;
  Polynomial cost;  // over state_vars
  double T = 0.0;
  double h = 0.0;
  RiskKind risk = RiskKind::Mean;
  double epsilon = 1.0;  // shortfall level, only meaningful for ES
};

/// Infinitesimal (continuous) or difference-quotient (discrete) generator
/// applied to a test function v(t, x).  For dx = f dt + g dW,
///   Lv = dv/dt + f . grad_x v + (1/2) tr(g g^T hess_x v);
/// for x+ = f(t, x, lambda),
///   Lv = (E_lambda[v(t + dt, f(t, x, lambda))] - v(t, x)) / dt,
/// with noise powers replaced by their moments.  Result is over (t, x).
Polynomial apply_generator(const Dynamics& dyn, const Polynomial& v);

/// Same generator acting on v(s, t, x) with the stopping-time variable s
/// held constant, so L(s^a w(t,x)) = s^a L(w).
Polynomial apply_augmented_generator(const Dynamics& dyn, const Polynomial& v);

/// Smallest half-degree k_dyn >= k such that the augmented generator maps
/// polynomials of degree <= 2k into degree <= 2*k_dyn, computed by scanning
/// the monomial basis.
unsigned dynamics_degree(const Dynamics& dyn, unsigned k);

/// Interval enclosure of the cost over X's bounding box.
Interval cost_range(const RiskProblem& problem);

enum class Severity { Warning, Error };

struct Diagnostic {
  Severity severity;
  std::string code;
  std::string message;
};

/// Structural and modeling checks: positive horizon and window, window not
/// exceeding the horizon, compact set descriptions, dimension agreement,
/// reserved-name collisions, noise moment realizability, shortfall level in
/// (0,1), discrete window/step divisibility.  Errors make the problem
/// unusable; warnings flag suspicious modeling.
std::vector<Diagnostic> validate_problem(const RiskProblem& problem);

bool has_errors(const std::vector<Diagnostic>& diags);
std::string format_diagnostics(const std::vector<Diagnostic>& diags);

}  // namespace winrisk
