#pragma once

// Benchmark problem instances shared across the test binaries.

#include <string>
#include <vector>

#include "winrisk/model.hpp"
#include "winrisk/polynomial.hpp"

namespace fixtures {

inline winrisk::RiskProblem oscillator_problem(bool stochastic = false) {
  using namespace winrisk;
  RiskProblem p;
  p.name = stochastic ? "oscillator_stochastic" : "oscillator";
  p.state_vars = {"x1", "x2"};
  const std::vector<std::string> tx = {"t", "x1", "x2"};
  ContinuousDynamics dyn;
  dyn.state_vars = p.state_vars;
  dyn.drift = {parse("x1^2 - 0.7*x1 + 3*x2 + 0.01", tx),
               parse("-3*x1 - 0.7*x2 + x2^2 + 1.51", tx)};
  if (stochastic)
    dyn.diffusion = {{Polynomial::constant(tx, 0.1)}, {Polynomial::constant(tx, 0.0)}};
  p.dynamics = dyn;
  p.X.vars = p.state_vars;
  p.X.box = {{-0.5, 2.5}, {-2.0, 1.5}};
  p.X0.vars = p.state_vars;
  p.X0.ball = winrisk::Ball{{0.0, 0.7}, 0.1};
  p.cost = parse("x2", p.state_vars);
  p.T = 5.0;
  p.h = 1.5;
  p.risk = RiskKind::Mean;
  return p;
}

inline winrisk::RiskProblem twist_problem() {
  using namespace winrisk;
  RiskProblem p;
  p.name = "twist";
  p.state_vars = {"x1", "x2", "x3"};
  const std::vector<std::string> tx = {"t", "x1", "x2", "x3"};
  ContinuousDynamics dyn;
  dyn.state_vars = p.state_vars;
  dyn.drift = {parse("-2.5*x1 + x2 - 0.5*x3 + 2*x1^3 + 2*x3^3", tx),
               parse("-x1 + 1.5*x2 + 0.5*x3 - 2*x2^3 - 2*x3^3", tx),
               parse("1.5*x1 + 2.5*x2 - 2*x3 - 2*x1^3 - 2*x2^3", tx)};
  p.dynamics = dyn;
  p.X.vars = p.state_vars;
  p.X.box = {{-1.0, 1.0}, {-1.0, 1.0}, {-1.0, 1.0}};
  p.X0.vars = p.state_vars;
  p.X0.ball = winrisk::Ball{{-0.75, 0.4, -0.1}, 0.2};
  p.cost = parse("x3", p.state_vars);
  p.T = 5.0;
  p.h = 1.0;
  p.risk = RiskKind::Mean;
  return p;
}

}  // namespace fixtures
