#include "winrisk/conic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lapack.hpp"

namespace winrisk {

std::string to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::NearOptimal: return "NearOptimal";
    case SolveStatus::Infeasible: return "Infeasible";
    case SolveStatus::Unbounded: return "Unbounded";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "?";
}

ConicProgram to_conic(const MomentRelaxation& rel) {
  ConicProgram prog;
  prog.num_vars = rel.num_vars;
  prog.objective.assign(static_cast<std::size_t>(rel.num_vars), 0.0);
  for (const auto& [id, c] : rel.objective.terms)
    prog.objective[static_cast<std::size_t>(id)] = c;
  prog.rows.reserve(rel.equalities.size());
  for (const auto& eq : rel.equalities) {
    ConicProgram::Row row;
    row.terms = eq.lhs.terms;
    row.rhs = eq.rhs;
    row.label = eq.label;
    prog.rows.push_back(std::move(row));
  }
  prog.blocks.reserve(rel.blocks.size());
  for (const auto& b : rel.blocks) {
    ConicProgram::Block blk;
    blk.size = b.size;
    blk.label = b.label;
    blk.entries.reserve(b.entries.size());
    for (const auto& e : b.entries) blk.entries.push_back({e.row, e.col, e.var, e.coeff});
    prog.blocks.push_back(std::move(blk));
  }
  prog.source_hash = rel.hash;
  return prog;
}

namespace conic_detail {

// Dense column-major realization of F0 + F(y) for one block.
std::vector<double> block_matrix(const ConicProgram::Block& blk, const std::vector<double>& y) {
  const int n = blk.size;
  std::vector<double> S(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto& e : blk.entries) {
    const double v = e.var < 0 ? e.coeff : e.coeff * y[static_cast<std::size_t>(e.var)];
    S[static_cast<std::size_t>(e.row) + static_cast<std::size_t>(e.col) * n] += v;
    if (e.row != e.col)
      S[static_cast<std::size_t>(e.col) + static_cast<std::size_t>(e.row) * n] += v;
  }
  return S;
}

// Smallest eigenvalue of a dense symmetric matrix (content destroyed).
double eig_min(int n, std::vector<double>& a) {
  if (n == 0) return 0.0;
  std::vector<double> w(static_cast<std::size_t>(n));
  int lwork = -1, liwork = -1, info = 0;
  double wkopt = 0.0;
  int iwkopt = 0;
  dsyevd_("N", "U", &n, a.data(), &n, w.data(), &wkopt, &lwork, &iwkopt, &liwork, &info);
  lwork = static_cast<int>(wkopt);
  liwork = iwkopt;
  std::vector<double> work(static_cast<std::size_t>(std::max(lwork, 1)));
  std::vector<int> iwork(static_cast<std::size_t>(std::max(liwork, 1)));
  dsyevd_("N", "U", &n, a.data(), &n, w.data(), work.data(), &lwork, iwork.data(), &liwork,
          &info);
  if (info != 0) throw std::runtime_error("eigenvalue computation failed (dsyevd)");
  return w[0];
}

// <F_v, M> for every variable of the block, accumulated into out[].
void adjoint_accumulate(const ConicProgram::Block& blk, const double* M, double scale,
                        std::vector<double>& out) {
  const int n = blk.size;
  for (const auto& e : blk.entries) {
    if (e.var < 0) continue;
    const double m =
        e.row == e.col
            ? M[static_cast<std::size_t>(e.row) * (n + 1)]
            : M[static_cast<std::size_t>(e.row) + static_cast<std::size_t>(e.col) * n] +
                  M[static_cast<std::size_t>(e.col) + static_cast<std::size_t>(e.row) * n];
    out[static_cast<std::size_t>(e.var)] += scale * e.coeff * m;
  }
}

double dot_row(const ConicProgram::Row& row, const std::vector<double>& y) {
  double s = 0.0;
  for (const auto& [v, c] : row.terms) s += c * y[static_cast<std::size_t>(v)];
  return s;
}

}  // namespace conic_detail

std::vector<int> redundant_rows(const ConicProgram& prog, double tol) {
  const int m = static_cast<int>(prog.rows.size());
  if (m == 0) return {};

  // Row-normalized Gram matrix; rows are sorted by variable id, so each
  // pairwise dot is a two-pointer merge.
  std::vector<double> scale(static_cast<std::size_t>(m), 1.0);
  for (int i = 0; i < m; ++i) {
    double mx = 0.0;
    for (const auto& [v, c] : prog.rows[static_cast<std::size_t>(i)].terms)
      mx = std::max(mx, std::abs(c));
    scale[static_cast<std::size_t>(i)] = mx > 0 ? 1.0 / mx : 1.0;
  }
  std::vector<double> G(static_cast<std::size_t>(m) * m, 0.0);
  for (int i = 0; i < m; ++i) {
    const auto& ri = prog.rows[static_cast<std::size_t>(i)].terms;
    for (int j = i; j < m; ++j) {
      const auto& rj = prog.rows[static_cast<std::size_t>(j)].terms;
      double dot = 0.0;
      std::size_t a = 0, b = 0;
      while (a < ri.size() && b < rj.size()) {
        if (ri[a].first < rj[b].first)
          ++a;
        else if (ri[a].first > rj[b].first)
          ++b;
        else
          dot += ri[a++].second * rj[b++].second;
      }
      G[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * m] =
          dot * scale[static_cast<std::size_t>(i)] * scale[static_cast<std::size_t>(j)];
    }
  }

  std::vector<int> piv(static_cast<std::size_t>(m));
  std::vector<double> work(static_cast<std::size_t>(2 * m));
  int rank = 0, info = 0;
  dpstrf_("U", &m, G.data(), &m, piv.data(), &rank, &tol, work.data(), &info);
  if (info < 0) throw std::runtime_error("pivoted Cholesky failed in presolve");

  std::vector<int> dropped;
  for (int i = rank; i < m; ++i) dropped.push_back(piv[static_cast<std::size_t>(i)] - 1);
  std::sort(dropped.begin(), dropped.end());
  return dropped;
}

void refresh_residuals(const ConicProgram& prog, ConicSolution& sol, const SolveOptions& opts) {
  using namespace conic_detail;
  sol.value = 0.0;
  for (int v = 0; v < prog.num_vars; ++v)
    sol.value += prog.objective[static_cast<std::size_t>(v)] * sol.y[static_cast<std::size_t>(v)];

  double bmax = 0.0, pres = 0.0;
  for (const auto& row : prog.rows) {
    bmax = std::max(bmax, std::abs(row.rhs));
    pres = std::max(pres, std::abs(dot_row(row, sol.y) - row.rhs));
  }
  sol.primal_residual = pres / (1.0 + bmax);

  double mineig = std::numeric_limits<double>::infinity();
  double block_scale = 0.0;
  for (const auto& blk : prog.blocks) {
    auto S = block_matrix(blk, sol.y);
    for (double v : S) block_scale = std::max(block_scale, std::abs(v));
    mineig = std::min(mineig, eig_min(blk.size, S));
  }
  sol.min_eigenvalue = prog.blocks.empty() ? 0.0 : mineig;
  const double eig_violation = std::max(0.0, -sol.min_eigenvalue) / (1.0 + block_scale);

  const bool has_duals = sol.psd_duals.size() == prog.blocks.size() &&
                         sol.eq_duals.size() == prog.rows.size();
  if (has_duals) {
    std::vector<double> d(prog.objective);  // c - A'lambda + F*(Z)
    for (std::size_t i = 0; i < prog.rows.size(); ++i)
      for (const auto& [v, c] : prog.rows[i].terms)
        d[static_cast<std::size_t>(v)] -= c * sol.eq_duals[i];
    double dual_const = 0.0;
    for (std::size_t j = 0; j < prog.blocks.size(); ++j) {
      adjoint_accumulate(prog.blocks[j], sol.psd_duals[j].data(), 1.0, d);
      // <F0, Z> term of the dual objective.
      const auto& blk = prog.blocks[j];
      const int n = blk.size;
      for (const auto& e : blk.entries) {
        if (e.var >= 0) continue;
        const double z =
            sol.psd_duals[j][static_cast<std::size_t>(e.row) + static_cast<std::size_t>(e.col) * n];
        dual_const += e.coeff * z * (e.row == e.col ? 1.0 : 2.0);
      }
    }
    double cmax = 0.0, dres = 0.0;
    for (int v = 0; v < prog.num_vars; ++v) {
      cmax = std::max(cmax, std::abs(prog.objective[static_cast<std::size_t>(v)]));
      dres = std::max(dres, std::abs(d[static_cast<std::size_t>(v)]));
    }
    sol.dual_residual = dres / (1.0 + cmax);
    sol.dual_value = dual_const;
    for (std::size_t i = 0; i < prog.rows.size(); ++i)
      sol.dual_value += prog.rows[i].rhs * sol.eq_duals[i];
    sol.gap = std::abs(sol.value - sol.dual_value) /
              (1.0 + std::abs(sol.value) + std::abs(sol.dual_value));
  } else {
    sol.dual_residual = 0.0;
    sol.dual_value = sol.value;
    sol.gap = 0.0;
    if (!sol.message.empty()) sol.message += "; ";
    sol.message += "no dual information; classified on primal residuals only";
  }

  const double worst =
      std::max({sol.primal_residual, sol.dual_residual, eig_violation});
  if (worst <= opts.feas_tol && sol.gap <= opts.gap_tol)
    sol.status = SolveStatus::Optimal;
  else if (worst <= opts.near_tol && sol.gap <= opts.near_tol)
    sol.status = SolveStatus::NearOptimal;
  else
    sol.status = SolveStatus::NumericalFailure;
}

}  // namespace winrisk
