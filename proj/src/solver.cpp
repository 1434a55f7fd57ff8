// Primal-dual interior-point solver for the block-diagonal SDPs assembled
// from moment relaxations:
//
//   maximize    c . y
//   subject to  A y = b
//               S_j = F0_j + sum_v y_v F_{j,v}  PSD   for every block j
//
// The algorithm is the HKM direction with a Mehrotra predictor-corrector,
// run in infeasible mode (the slack blocks S are independent iterates and
// the residual F0 + F(y) - S shrinks geometrically with the step).  One
// Newton step solves, via the Schur complement of the saddle system,
//
//   [ H   A' ] [dy]   [g ]         H_uv = sum_j <F_u, Z_j F_v S_j^-1>
//   [ A   0  ] [dl] = [rp]
//
// H is block diagonal across groups of variables that never share a PSD
// block (for moment programs: one group per measure), which keeps the
// Cholesky factorizations at measure scale instead of program scale.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "conic_internal.hpp"
#include "lapack.hpp"
#include "winrisk/conic.hpp"

namespace winrisk {

namespace {

using conic_detail::adjoint_accumulate;
using conic_detail::dot_row;
using conic_detail::eig_min;

constexpr double kInf = std::numeric_limits<double>::infinity();

void dense_gemm(int n, double alpha, const double* A, const double* B, double beta, double* C) {
  dgemm_("N", "N", &n, &n, &n, &alpha, A, &n, B, &n, &beta, C, &n);
}

// var -> (group id, position inside group) over co-occurrence in blocks.
struct Groups {
  std::vector<int> of, pos;
  std::vector<std::vector<int>> members;
};

Groups make_groups(const ConicProgram& prog) {
  const int n = prog.num_vars;
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> root_of(static_cast<std::size_t>(n), -1);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  };
  for (const auto& blk : prog.blocks) {
    int first = -1;
    for (const auto& e : blk.entries) {
      if (e.var < 0) continue;
      if (first < 0) {
        first = find(e.var);
        continue;
      }
      const int r = find(e.var);
      if (r != first) parent[static_cast<std::size_t>(r)] = first;
    }
  }
  Groups g;
  g.of.assign(static_cast<std::size_t>(n), -1);
  g.pos.assign(static_cast<std::size_t>(n), -1);
  for (int v = 0; v < n; ++v) {
    const int r = find(v);
    if (root_of[static_cast<std::size_t>(r)] < 0) {
      root_of[static_cast<std::size_t>(r)] = static_cast<int>(g.members.size());
      g.members.emplace_back();
    }
    const int gid = root_of[static_cast<std::size_t>(r)];
    g.of[static_cast<std::size_t>(v)] = gid;
    g.pos[static_cast<std::size_t>(v)] = static_cast<int>(g.members[gid].size());
    g.members[static_cast<std::size_t>(gid)].push_back(v);
  }
  return g;
}

struct VarSlice {
  int var = 0;
  std::vector<ConicProgram::Block::Entry> entries;
  std::vector<int> cols;  // distinct indices touched (after symmetrization)
};

struct BlockWork {
  const ConicProgram::Block* def = nullptr;
  int n = 0;
  int group = -1;
  std::vector<double> F0;
  std::vector<VarSlice> vars;
  int max_cols = 0;

  std::vector<double> S, Z, W, Sfac, Zfac, RS;
  std::vector<double> G, Ginv;  // Nesterov-Todd scaling: W_nt = G G', W = W_nt^-1
  std::vector<double> sig;      // NT spectrum: G^-1 S G^-T = G' Z G = diag(sig)
  std::vector<double> dS, dZ, dSa, dZa;
  std::vector<double> ZS, ZRS, K, P, Fdy, tmp;
  std::vector<double> V, R, B;  // H-formation scratch

  void alloc() {
    const std::size_t nn = static_cast<std::size_t>(n) * n;
    for (auto* v : {&F0, &S, &Z, &W, &Sfac, &Zfac, &RS, &dS, &dZ, &dSa, &dZa, &ZS, &ZRS, &K, &P,
                    &Fdy, &tmp, &B, &G, &Ginv})
      v->assign(nn, 0.0);
    sig.assign(static_cast<std::size_t>(n), 0.0);
    V.assign(static_cast<std::size_t>(n) * std::max(max_cols, 1), 0.0);
    R.assign(static_cast<std::size_t>(std::max(max_cols, 1)) * n, 0.0);
  }

  // Fdy = sum_v dy_v F_v  (dense symmetric)
  void apply_map(const std::vector<double>& dy) {
    std::fill(Fdy.begin(), Fdy.end(), 0.0);
    for (const auto& vs : vars) {
      const double x = dy[static_cast<std::size_t>(vs.var)];
      if (x == 0.0) continue;
      for (const auto& e : vs.entries) {
        const double v = e.coeff * x;
        Fdy[static_cast<std::size_t>(e.row) + static_cast<std::size_t>(e.col) * n] += v;
        if (e.row != e.col)
          Fdy[static_cast<std::size_t>(e.col) + static_cast<std::size_t>(e.row) * n] += v;
      }
    }
  }
};

void symmetrize(int n, std::vector<double>& M) {
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < j; ++i) {
      const double v = 0.5 * (M[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] +
                              M[static_cast<std::size_t>(j) + static_cast<std::size_t>(i) * n]);
      M[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] = v;
      M[static_cast<std::size_t>(j) + static_cast<std::size_t>(i) * n] = v;
    }
}

double trace_product(int n, const std::vector<double>& A, const std::vector<double>& B) {
  double s = 0.0;
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  for (std::size_t i = 0; i < nn; ++i) s += A[i] * B[i];
  return s;
}

// Largest alpha with M + alpha dM PSD, given the Cholesky factor of M.
// Full symmetric eigendecomposition; eigenvectors replace the input columns.
bool eig_sym(int n, std::vector<double>& a, std::vector<double>& w) {
  int lwork = -1, liwork = -1, info = 0;
  double wkopt = 0.0;
  int iwkopt = 0;
  dsyevd_("V", "U", &n, a.data(), &n, w.data(), &wkopt, &lwork, &iwkopt, &liwork, &info);
  lwork = static_cast<int>(wkopt);
  liwork = iwkopt;
  std::vector<double> work(static_cast<std::size_t>(std::max(lwork, 1)));
  std::vector<int> iwork(static_cast<std::size_t>(std::max(liwork, 1)));
  dsyevd_("V", "U", &n, a.data(), &n, w.data(), work.data(), &lwork, iwork.data(), &liwork,
          &info);
  return info == 0;
}

double step_to_boundary(int n, const double* factor_upper, const std::vector<double>& dM,
                        std::vector<double>& scratch) {
  scratch = dM;
  const double one = 1.0;
  dtrsm_("L", "U", "T", "N", &n, &n, &one, factor_upper, &n, scratch.data(), &n);
  dtrsm_("R", "U", "N", "N", &n, &n, &one, factor_upper, &n, scratch.data(), &n);
  const double lam = eig_min(n, scratch);
  if (lam >= -1e-14) return kInf;
  return -1.0 / lam;
}

struct Saddle {
  // Per-group dense H (column-major), factored in place each iteration.
  std::vector<std::vector<double>> H;
  std::vector<std::vector<double>> AgT;   // group slice of A', built once
  std::vector<double> schur, schur_fac;   // m x m
  std::vector<double> pack;               // group-sized scratch
  int m = 0;
};

}  // namespace

ConicSolution solve(const ConicProgram& prog, const SolveOptions& opts) {
  // ---- validation and desk-scale refusal ---------------------------------
  if (prog.num_vars <= 0) throw std::invalid_argument("conic program has no variables");
  if (static_cast<int>(prog.objective.size()) != prog.num_vars)
    throw std::invalid_argument("objective length does not match the variable count");
  int max_block = 0;
  std::vector<char> covered(static_cast<std::size_t>(prog.num_vars), 0);
  for (const auto& blk : prog.blocks) {
    if (blk.size < 1) throw std::invalid_argument("PSD block with nonpositive size");
    max_block = std::max(max_block, blk.size);
    bool has_var = false;
    for (const auto& e : blk.entries) {
      if (e.row < 0 || e.col < e.row || e.col >= blk.size)
        throw std::invalid_argument("PSD block entry outside the upper triangle");
      if (e.var >= prog.num_vars) throw std::invalid_argument("PSD block entry variable id");
      if (e.var >= 0) {
        covered[static_cast<std::size_t>(e.var)] = 1;
        has_var = true;
      }
    }
    if (!has_var)
      throw std::invalid_argument("PSD block '" + blk.label +
                                  "' has no variable entries; constant blocks are not supported");
  }
  for (const auto& row : prog.rows)
    for (const auto& [v, c] : row.terms)
      if (v < 0 || v >= prog.num_vars) throw std::invalid_argument("equality row variable id");
  if (max_block > opts.max_block_size || prog.num_vars > opts.max_variables) {
    std::ostringstream os;
    os << "program exceeds the embedded desk-scale limits (largest block " << max_block
       << " vs " << opts.max_block_size << ", variables " << prog.num_vars << " vs "
       << opts.max_variables << "); export it with export_sdpa and use an external solver";
    throw std::invalid_argument(os.str());
  }
  for (int v = 0; v < prog.num_vars; ++v)
    if (!covered[static_cast<std::size_t>(v)])
      throw std::invalid_argument("variable " + std::to_string(v) +
                                  " appears in no PSD block; the interior-point system would "
                                  "be singular");

  ConicSolution sol;
  sol.y.assign(static_cast<std::size_t>(prog.num_vars), 0.0);
  sol.eq_duals.assign(prog.rows.size(), 0.0);

  // ---- presolve: drop dependent equality rows ----------------------------
  sol.dropped_rows = redundant_rows(prog);
  std::vector<char> is_dropped(prog.rows.size(), 0);
  for (int r : sol.dropped_rows) is_dropped[static_cast<std::size_t>(r)] = 1;
  std::vector<int> kept;
  for (std::size_t r = 0; r < prog.rows.size(); ++r)
    if (!is_dropped[r]) kept.push_back(static_cast<int>(r));
  const int m = static_cast<int>(kept.size());

  // Normalized kept rows (max |coeff| = 1) and their right-hand sides.
  std::vector<std::vector<std::pair<int, double>>> A(static_cast<std::size_t>(m));
  std::vector<double> b(static_cast<std::size_t>(m), 0.0);
  std::vector<double> row_scale(static_cast<std::size_t>(m), 1.0);
  for (int i = 0; i < m; ++i) {
    const auto& row = prog.rows[static_cast<std::size_t>(kept[static_cast<std::size_t>(i)])];
    double mx = 0.0;
    for (const auto& [v, c] : row.terms) mx = std::max(mx, std::abs(c));
    const double s = mx > 0 ? 1.0 / mx : 1.0;
    row_scale[static_cast<std::size_t>(i)] = s;
    A[static_cast<std::size_t>(i)] = row.terms;
    for (auto& [v, c] : A[static_cast<std::size_t>(i)]) c *= s;
    std::sort(A[static_cast<std::size_t>(i)].begin(), A[static_cast<std::size_t>(i)].end());
    b[static_cast<std::size_t>(i)] = row.rhs * s;
  }

  // ---- workspace ----------------------------------------------------------
  Groups groups = make_groups(prog);
  std::vector<BlockWork> blocks(prog.blocks.size());
  double fmax = 0.0;
  for (std::size_t j = 0; j < prog.blocks.size(); ++j) {
    BlockWork& w = blocks[j];
    w.def = &prog.blocks[j];
    w.n = w.def->size;
    // Group by variable, preserving ascending variable order.
    std::vector<ConicProgram::Block::Entry> sorted = w.def->entries;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.var < b.var; });
    for (const auto& e : sorted) {
      fmax = std::max(fmax, std::abs(e.coeff));
      if (e.var < 0) continue;
      if (w.group < 0) w.group = groups.of[static_cast<std::size_t>(e.var)];
      if (w.vars.empty() || w.vars.back().var != e.var) {
        w.vars.emplace_back();
        w.vars.back().var = e.var;
      }
      w.vars.back().entries.push_back(e);
    }
    for (auto& vs : w.vars) {
      std::vector<int> cols;
      for (const auto& e : vs.entries) {
        cols.push_back(e.col);
        if (e.row != e.col) cols.push_back(e.row);
      }
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      vs.cols = std::move(cols);
      w.max_cols = std::max(w.max_cols, static_cast<int>(vs.cols.size()));
    }
    w.alloc();
    for (const auto& e : w.def->entries) {
      if (e.var >= 0) continue;
      w.F0[static_cast<std::size_t>(e.row) + static_cast<std::size_t>(e.col) * w.n] += e.coeff;
      if (e.row != e.col)
        w.F0[static_cast<std::size_t>(e.col) + static_cast<std::size_t>(e.row) * w.n] += e.coeff;
    }
  }

  Saddle sd;
  sd.m = m;
  sd.H.resize(groups.members.size());
  sd.AgT.resize(groups.members.size());
  int max_group = 1;
  for (std::size_t g = 0; g < groups.members.size(); ++g) {
    const int ng = static_cast<int>(groups.members[g].size());
    max_group = std::max(max_group, ng);
    sd.H[g].assign(static_cast<std::size_t>(ng) * ng, 0.0);
    sd.AgT[g].assign(static_cast<std::size_t>(ng) * std::max(m, 1), 0.0);
  }
  for (int i = 0; i < m; ++i)
    for (const auto& [v, c] : A[static_cast<std::size_t>(i)]) {
      const int g = groups.of[static_cast<std::size_t>(v)];
      const int p = groups.pos[static_cast<std::size_t>(v)];
      sd.AgT[static_cast<std::size_t>(g)][static_cast<std::size_t>(p) +
                                          static_cast<std::size_t>(i) *
                                              groups.members[static_cast<std::size_t>(g)].size()] =
          c;
    }
  sd.schur.assign(static_cast<std::size_t>(m) * std::max(m, 1), 0.0);
  sd.schur_fac = sd.schur;
  sd.pack.assign(static_cast<std::size_t>(max_group), 0.0);
  std::vector<double> xbuf;  // dtrsm right-hand sides, reused across groups
  if (m > 0) xbuf.assign(static_cast<std::size_t>(max_group) * m, 0.0);

  // ---- starting point -----------------------------------------------------
  double bmax = 0.0, cmax = 0.0;
  for (double v : b) bmax = std::max(bmax, std::abs(v));
  for (double v : prog.objective) cmax = std::max(cmax, std::abs(v));
  const double init = std::max({10.0, 2.0 * bmax, 2.0 * cmax, 2.0 * fmax});
  int total_dim = 0;
  for (auto& w : blocks) {
    total_dim += w.n;
    for (int i = 0; i < w.n; ++i) {
      w.S[static_cast<std::size_t>(i) * (w.n + 1)] = init;
      w.Z[static_cast<std::size_t>(i) * (w.n + 1)] = init;
    }
  }

  std::vector<double>& y = sol.y;
  std::vector<double> lambda(static_cast<std::size_t>(m), 0.0);
  std::vector<double> rp(static_cast<std::size_t>(m), 0.0);
  std::vector<double> rd(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> g(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> dy(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> u(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> v1(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> dlam(static_cast<std::size_t>(m), 0.0);
  std::vector<double> srhs(static_cast<std::size_t>(m), 0.0);

  std::deque<std::string> trace;
  auto log_line = [&](const std::string& line) {
    trace.push_back(line);
    if (trace.size() > 50) trace.pop_front();
    if (opts.verbose) std::fprintf(stderr, "%s\n", line.c_str());
  };

  // Best iterate seen, by worst residual measure.
  std::vector<double> best_y = y, best_lambda = lambda;
  std::vector<std::vector<double>> best_Z(blocks.size());
  double best_worst = kInf;
  double pobj = 0.0, dobj = 0.0, prim_inf = kInf, dual_inf = kInf, rs_inf = kInf, rel_gap = kInf;
  int iter = 0;
  int stalls = 0;
  double mu0 = 0.0;
  double plateau_best = kInf;
  int since_improve = 0;
  double last_step = 1.0;
  bool need_center = false;
  int rescues = 0;
  bool converged = false;
  std::string failure;

  std::vector<double> hx(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> ref_n(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> cy(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> ref_m(static_cast<std::size_t>(m), 0.0);
  std::vector<double> cl(static_cast<std::size_t>(m), 0.0);

  // H x through the Cholesky factors: H = U'U, so Hx = U'(Ux) groupwise.
  auto apply_H = [&](const std::vector<double>& x, std::vector<double>& out) {
    const int incx = 1;
    for (std::size_t gid = 0; gid < groups.members.size(); ++gid) {
      const auto& mem = groups.members[gid];
      const int ng = static_cast<int>(mem.size());
      for (int i = 0; i < ng; ++i)
        sd.pack[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(mem[i])];
      dtrmv_("U", "N", "N", &ng, sd.H[gid].data(), &ng, sd.pack.data(), &incx);
      dtrmv_("U", "T", "N", &ng, sd.H[gid].data(), &ng, sd.pack.data(), &incx);
      for (int i = 0; i < ng; ++i)
        out[static_cast<std::size_t>(mem[i])] = sd.pack[static_cast<std::size_t>(i)];
    }
  };

  auto solve_kkt_once = [&](const std::vector<double>& rhs_n, const std::vector<double>& rhs_m,
                            std::vector<double>& out_dy, std::vector<double>& out_dl) -> bool {
    // v1 = H^-1 rhs_n
    v1 = rhs_n;
    for (std::size_t gid = 0; gid < groups.members.size(); ++gid) {
      const auto& mem = groups.members[gid];
      const int ng = static_cast<int>(mem.size());
      for (int i = 0; i < ng; ++i)
        sd.pack[static_cast<std::size_t>(i)] = v1[static_cast<std::size_t>(mem[i])];
      if (la::cholesky_solve_upper(ng, 1, sd.H[gid].data(), sd.pack.data()) != 0) return false;
      for (int i = 0; i < ng; ++i)
        v1[static_cast<std::size_t>(mem[i])] = sd.pack[static_cast<std::size_t>(i)];
    }
    if (m > 0) {
      // dl = Schur^-1 (A v1 - rhs_m)
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (const auto& [vv, cc] : A[static_cast<std::size_t>(i)])
          s += cc * v1[static_cast<std::size_t>(vv)];
        srhs[static_cast<std::size_t>(i)] = s - rhs_m[static_cast<std::size_t>(i)];
      }
      if (la::cholesky_solve_upper(m, 1, sd.schur_fac.data(), srhs.data()) != 0) return false;
      out_dl = srhs;
      // dy = H^-1 (rhs_n - A' dl)
      u = rhs_n;
      for (int i = 0; i < m; ++i)
        for (const auto& [vv, cc] : A[static_cast<std::size_t>(i)])
          u[static_cast<std::size_t>(vv)] -= cc * out_dl[static_cast<std::size_t>(i)];
      out_dy = u;
      for (std::size_t gid = 0; gid < groups.members.size(); ++gid) {
        const auto& mem = groups.members[gid];
        const int ng = static_cast<int>(mem.size());
        for (int i = 0; i < ng; ++i)
          sd.pack[static_cast<std::size_t>(i)] = out_dy[static_cast<std::size_t>(mem[i])];
        if (la::cholesky_solve_upper(ng, 1, sd.H[gid].data(), sd.pack.data()) != 0) return false;
        for (int i = 0; i < ng; ++i)
          out_dy[static_cast<std::size_t>(mem[i])] = sd.pack[static_cast<std::size_t>(i)];
      }
    } else {
      out_dl.clear();
      out_dy = v1;
    }
    return true;
  };

  // The Schur complement turns severely ill-conditioned as mu shrinks, and a
  // raw factor-solve then loses enough digits to push the dual iterates off
  // feasibility.  A couple of rounds of iterative refinement keeps the
  // computed directions consistent with the factored operators.
  auto solve_group_system = [&](const std::vector<double>& rhs_n,
                                const std::vector<double>& rhs_m, std::vector<double>& out_dy,
                                std::vector<double>& out_dl) -> bool {
    if (!solve_kkt_once(rhs_n, rhs_m, out_dy, out_dl)) return false;
    for (int round = 0; round < 2; ++round) {
      apply_H(out_dy, hx);
      double rhs_max = 0.0, res_max = 0.0;
      for (int vv = 0; vv < prog.num_vars; ++vv) {
        ref_n[static_cast<std::size_t>(vv)] =
            rhs_n[static_cast<std::size_t>(vv)] - hx[static_cast<std::size_t>(vv)];
        rhs_max = std::max(rhs_max, std::abs(rhs_n[static_cast<std::size_t>(vv)]));
      }
      for (int i = 0; i < m; ++i) {
        double ax = 0.0;
        for (const auto& [vv, cc] : A[static_cast<std::size_t>(i)]) {
          ref_n[static_cast<std::size_t>(vv)] -= cc * out_dl[static_cast<std::size_t>(i)];
          ax += cc * out_dy[static_cast<std::size_t>(vv)];
        }
        ref_m[static_cast<std::size_t>(i)] = rhs_m[static_cast<std::size_t>(i)] - ax;
        rhs_max = std::max(rhs_max, std::abs(rhs_m[static_cast<std::size_t>(i)]));
        res_max = std::max(res_max, std::abs(ref_m[static_cast<std::size_t>(i)]));
      }
      for (double v : ref_n) res_max = std::max(res_max, std::abs(v));
      if (res_max <= 1e-13 * (1.0 + rhs_max)) break;
      if (!solve_kkt_once(ref_n, ref_m, cy, cl)) break;
      for (int vv = 0; vv < prog.num_vars; ++vv)
        out_dy[static_cast<std::size_t>(vv)] += cy[static_cast<std::size_t>(vv)];
      for (int i = 0; i < m; ++i)
        out_dl[static_cast<std::size_t>(i)] += cl[static_cast<std::size_t>(i)];
    }
    return true;
  };

  // dZ comes out of products with S^-1, so its accuracy degrades as mu -> 0
  // and the dual equation A'dlam - F*(dZ) = rd stops holding, letting the
  // dual iterate drift off feasibility.  Restore it with the minimal-norm
  // fix dZ += F(w), where (F*F) w = -defect is solved matrix-free by CG
  // (F*F is a fixed, well-conditioned Gram operator).
  std::vector<double> cg_e(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> cg_x(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> cg_r(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> cg_p(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> cg_q(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> g2(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> ddy(static_cast<std::size_t>(prog.num_vars), 0.0);
  std::vector<double> ddlam(static_cast<std::size_t>(m), 0.0);
  const std::vector<double> zero_m(static_cast<std::size_t>(m), 0.0);
  int max_block_n = 0;
  for (const auto& w : blocks) max_block_n = std::max(max_block_n, w.n);
  std::vector<double> evals(static_cast<std::size_t>(std::max(max_block_n, 1)), 0.0);
  auto correct_dual_direction = [&](const std::vector<double>& rd_cur,
                                    const std::vector<double>& dlam_cur) -> double {
    cg_e = rd_cur;
    for (int i = 0; i < m; ++i)
      for (const auto& [vv, cc] : A[static_cast<std::size_t>(i)])
        cg_e[static_cast<std::size_t>(vv)] -= cc * dlam_cur[static_cast<std::size_t>(i)];
    for (auto& w : blocks) adjoint_accumulate(*w.def, w.dZ.data(), 1.0, cg_e);
    double e0 = 0.0;
    for (double v : cg_e) e0 = std::max(e0, std::abs(v));
    if (e0 <= 1e-14) return e0;

    std::fill(cg_x.begin(), cg_x.end(), 0.0);
    for (std::size_t v = 0; v < cg_r.size(); ++v) cg_r[v] = -cg_e[v];
    cg_p = cg_r;
    double rs = 0.0;
    for (double v : cg_r) rs += v * v;
    const double rs_stop = rs * 1e-16;  // 1e-8 relative residual
    for (int it = 0; it < 80 && rs > rs_stop; ++it) {
      std::fill(cg_q.begin(), cg_q.end(), 0.0);
      for (auto& w : blocks) {
        w.apply_map(cg_p);
        adjoint_accumulate(*w.def, w.Fdy.data(), 1.0, cg_q);
      }
      double pq = 0.0;
      for (std::size_t v = 0; v < cg_p.size(); ++v) pq += cg_p[v] * cg_q[v];
      if (pq <= 0.0) break;
      const double step = rs / pq;
      double rs_new = 0.0;
      for (std::size_t v = 0; v < cg_x.size(); ++v) {
        cg_x[v] += step * cg_p[v];
        cg_r[v] -= step * cg_q[v];
        rs_new += cg_r[v] * cg_r[v];
      }
      const double beta = rs_new / rs;
      for (std::size_t v = 0; v < cg_p.size(); ++v) cg_p[v] = cg_r[v] + beta * cg_p[v];
      rs = rs_new;
    }
    for (auto& w : blocks) {
      w.apply_map(cg_x);
      for (std::size_t i = 0; i < w.dZ.size(); ++i) w.dZ[i] += w.Fdy[i];
    }
    return e0;
  };

  // Cholesky with a short escalating-ridge retry; the iterates are kept
  // interior, but at extreme conditioning the factorization can still stumble.
  auto chol_ridge = [](int n, const std::vector<double>& M, std::vector<double>& fac) {
    double diag_max = 0.0;
    for (int i = 0; i < n; ++i)
      diag_max = std::max(diag_max, M[static_cast<std::size_t>(i) * (n + 1)]);
    double jit = 0.0;
    for (int attempt = 0; attempt < 4; ++attempt) {
      fac = M;
      if (jit > 0)
        for (int i = 0; i < n; ++i) fac[static_cast<std::size_t>(i) * (n + 1)] += jit;
      if (la::cholesky_upper(n, fac.data()) == 0) return true;
      jit = jit == 0 ? 1e-14 * (1.0 + diag_max) : jit * 100;
    }
    return false;
  };

  for (iter = 1; iter <= opts.max_iterations; ++iter) {
    // ---- Nesterov-Todd scaling ---------------------------------------------
    // With S = Rs'Rs and the spectral split Rs Z Rs' = V diag(sig^2) V', the
    // matrix G = Rs'V diag(sig)^-1/2 satisfies G'ZG = G^-1 S G^-T = diag(sig),
    // so W_nt = GG' maps Z onto S.  The Newton systems below only need
    // W = W_nt^-1 = Ginv'Ginv plus G/Ginv for moving into the scaled space.
    bool ok = true;
    for (auto& w : blocks) {
      const int n = w.n;
      const double one = 1.0, zero = 0.0;
      if (!chol_ridge(n, w.S, w.Sfac) || !chol_ridge(n, w.Z, w.Zfac)) {
        ok = false;
        break;
      }
      w.B = w.Z;
      dtrmm_("R", "U", "T", "N", &n, &n, &one, w.Sfac.data(), &n, w.B.data(), &n);
      dtrmm_("L", "U", "N", "N", &n, &n, &one, w.Sfac.data(), &n, w.B.data(), &n);
      symmetrize(n, w.B);
      if (!eig_sym(n, w.B, evals)) {
        ok = false;
        break;
      }
      double dmax = 0.0;
      for (int i = 0; i < n; ++i) dmax = std::max(dmax, evals[static_cast<std::size_t>(i)]);
      if (!(dmax > 0.0)) {
        ok = false;
        break;
      }
      for (int i = 0; i < n; ++i)
        w.sig[static_cast<std::size_t>(i)] =
            std::sqrt(std::max(evals[static_cast<std::size_t>(i)], 1e-28 * dmax));
      w.G = w.B;
      dtrmm_("L", "U", "T", "N", &n, &n, &one, w.Sfac.data(), &n, w.G.data(), &n);
      for (int j = 0; j < n; ++j) {
        const double s = 1.0 / std::sqrt(w.sig[static_cast<std::size_t>(j)]);
        double* col = w.G.data() + static_cast<std::size_t>(j) * n;
        for (int i = 0; i < n; ++i) col[i] *= s;
      }
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
          w.Ginv[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] =
              w.B[static_cast<std::size_t>(j) + static_cast<std::size_t>(i) * n];
      dtrsm_("R", "U", "T", "N", &n, &n, &one, w.Sfac.data(), &n, w.Ginv.data(), &n);
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i)
          w.Ginv[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] *=
              std::sqrt(w.sig[static_cast<std::size_t>(i)]);
      }
      dsyrk_("U", "T", &n, &n, &one, w.Ginv.data(), &n, &zero, w.W.data(), &n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < j; ++i)
          w.W[static_cast<std::size_t>(j) + static_cast<std::size_t>(i) * n] =
              w.W[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n];
    }
    if (!ok) {
      failure = "a cone block lost positive definiteness during scaling";
      break;
    }

    // ---- residuals and convergence ----------------------------------------
    double mu = 0.0;
    for (auto& w : blocks) mu += trace_product(w.n, w.S, w.Z);
    mu /= std::max(total_dim, 1);

    pobj = 0.0;
    for (int v = 0; v < prog.num_vars; ++v)
      pobj += prog.objective[static_cast<std::size_t>(v)] * y[static_cast<std::size_t>(v)];
    dobj = 0.0;
    for (int i = 0; i < m; ++i) dobj += b[static_cast<std::size_t>(i)] * lambda[static_cast<std::size_t>(i)];
    for (auto& w : blocks) dobj += trace_product(w.n, w.F0, w.Z);

    prim_inf = 0.0;
    for (int i = 0; i < m; ++i) {
      double s = -b[static_cast<std::size_t>(i)];
      for (const auto& [vv, cc] : A[static_cast<std::size_t>(i)])
        s += cc * y[static_cast<std::size_t>(vv)];
      rp[static_cast<std::size_t>(i)] = -s;
      prim_inf = std::max(prim_inf, std::abs(s));
    }
    prim_inf /= 1.0 + bmax;

    rs_inf = 0.0;
    for (auto& w : blocks) {
      w.apply_map(y);
      for (std::size_t i = 0; i < w.RS.size(); ++i) {
        w.RS[i] = w.F0[i] + w.Fdy[i] - w.S[i];
        rs_inf = std::max(rs_inf, std::abs(w.RS[i]));
      }
    }
    rs_inf /= 1.0 + fmax;

    rd = prog.objective;
    for (int i = 0; i < m; ++i)
      for (const auto& [vv, cc] : A[static_cast<std::size_t>(i)])
        rd[static_cast<std::size_t>(vv)] -= cc * lambda[static_cast<std::size_t>(i)];
    for (auto& w : blocks) adjoint_accumulate(*w.def, w.Z.data(), 1.0, rd);
    dual_inf = 0.0;
    for (double v : rd) dual_inf = std::max(dual_inf, std::abs(v));
    dual_inf /= 1.0 + cmax;

    rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));

    {
      std::ostringstream os;
      os << "it " << iter << " mu " << mu << " pobj " << pobj << " dobj " << dobj << " pinf "
         << prim_inf << " rsinf " << rs_inf << " dinf " << dual_inf << " gap " << rel_gap;
      log_line(os.str());
    }

    const double worst = std::max({prim_inf, rs_inf, dual_inf, rel_gap});
    if (worst < best_worst) {
      best_worst = worst;
      best_y = y;
      best_lambda = lambda;
      for (std::size_t j = 0; j < blocks.size(); ++j) best_Z[j] = blocks[j].Z;
    }
    if (std::max({prim_inf, rs_inf, dual_inf}) <= opts.feas_tol && rel_gap <= opts.gap_tol) {
      converged = true;
      break;
    }

    // Divergence heuristics (dual objective collapsing => primal infeasible;
    // primal objective exploding while feasible => unbounded).  The relaxed
    // thresholds back up the hard ones when a runaway iterate is about to be
    // cut short by the guards below.
    const double scale = 1.0 + bmax + cmax;
    const bool guard_trip =
        iter > 5 && (mu > 1e14 * (1.0 + mu0) || worst > 1e8 * (1.0 + best_worst));
    const double inf_cut = guard_trip ? 1e6 : 1e10;
    const double res_cut = guard_trip ? 1e-2 : 1e-4;
    if (dobj < -inf_cut * scale && dual_inf < res_cut) {
      sol.status = SolveStatus::Infeasible;
      sol.message = "dual objective diverges; the equalities admit no PSD-consistent point";
      sol.iterations = iter;
      return sol;
    }
    if (pobj > inf_cut * scale && prim_inf < res_cut && rs_inf < res_cut) {
      sol.status = SolveStatus::Unbounded;
      sol.message = "primal objective diverges along a feasible ray";
      sol.iterations = iter;
      return sol;
    }

    if (iter == 1) mu0 = mu;
    if (guard_trip) {
      failure = "iterates diverged";
      break;
    }
    // Give up once the residuals flatline; the best iterate is what we have.
    if (best_worst < 0.95 * plateau_best) {
      plateau_best = best_worst;
      since_improve = 0;
    } else if (++since_improve >= 15) {
      failure = "progress stalled";
      break;
    }

    // ---- form and factor H and the Schur complement -----------------------
    for (auto& H : sd.H) std::fill(H.begin(), H.end(), 0.0);
    for (auto& w : blocks) {
      auto& H = sd.H[static_cast<std::size_t>(w.group)];
      const int ng = static_cast<int>(groups.members[static_cast<std::size_t>(w.group)].size());
      const int n = w.n;
      for (std::size_t ui = 0; ui < w.vars.size(); ++ui) {
        const auto& us = w.vars[ui];
        const int K = static_cast<int>(us.cols.size());
        // V = W F_u restricted to the touched columns.
        std::fill(w.V.begin(), w.V.begin() + static_cast<std::size_t>(n) * K, 0.0);
        auto colpos = [&](int c) {
          return static_cast<int>(std::lower_bound(us.cols.begin(), us.cols.end(), c) -
                                  us.cols.begin());
        };
        for (const auto& e : us.entries) {
          const double* zc = w.W.data() + static_cast<std::size_t>(e.row) * n;
          double* vc = w.V.data() + static_cast<std::size_t>(colpos(e.col)) * n;
          for (int i = 0; i < n; ++i) vc[i] += e.coeff * zc[i];
          if (e.row != e.col) {
            const double* zc2 = w.W.data() + static_cast<std::size_t>(e.col) * n;
            double* vc2 = w.V.data() + static_cast<std::size_t>(colpos(e.row)) * n;
            for (int i = 0; i < n; ++i) vc2[i] += e.coeff * zc2[i];
          }
        }
        // R = rows of W touched by F_u.
        for (int j = 0; j < n; ++j) {
          const double* wc = w.W.data() + static_cast<std::size_t>(j) * n;
          double* rc = w.R.data() + static_cast<std::size_t>(j) * K;
          for (int k = 0; k < K; ++k) rc[k] = wc[us.cols[static_cast<std::size_t>(k)]];
        }
        // B = W F_u W.
        const double one = 1.0, zero = 0.0;
        dgemm_("N", "N", &n, &n, &K, &one, w.V.data(), &n, w.R.data(), &K, &zero, w.B.data(),
               &n);
        // H entries <F_v, B> for v <= u.
        const int pu = groups.pos[static_cast<std::size_t>(us.var)];
        for (std::size_t vi = 0; vi <= ui; ++vi) {
          const auto& vs = w.vars[vi];
          double h = 0.0;
          for (const auto& e : vs.entries) {
            if (e.row == e.col)
              h += e.coeff * w.B[static_cast<std::size_t>(e.row) * (n + 1)];
            else
              h += e.coeff *
                   (w.B[static_cast<std::size_t>(e.col) + static_cast<std::size_t>(e.row) * n] +
                    w.B[static_cast<std::size_t>(e.row) + static_cast<std::size_t>(e.col) * n]);
          }
          const int pv = groups.pos[static_cast<std::size_t>(vs.var)];
          H[static_cast<std::size_t>(std::min(pu, pv)) +
            static_cast<std::size_t>(std::max(pu, pv)) * ng] += h;
        }
      }
    }
    ok = true;
    for (std::size_t gid = 0; gid < groups.members.size() && ok; ++gid) {
      const int ng = static_cast<int>(groups.members[gid].size());
      double diag_max = 0.0;
      for (int i = 0; i < ng; ++i)
        diag_max = std::max(diag_max, sd.H[gid][static_cast<std::size_t>(i) * (ng + 1)]);
      double jitter = 0.0;
      for (int attempt = 0; attempt < 4; ++attempt) {
        std::vector<double> Hf = sd.H[gid];
        if (jitter > 0)
          for (int i = 0; i < ng; ++i) Hf[static_cast<std::size_t>(i) * (ng + 1)] += jitter;
        if (la::cholesky_upper(ng, Hf.data()) == 0) {
          sd.H[gid] = std::move(Hf);
          jitter = -1.0;
          break;
        }
        jitter = jitter == 0 ? 1e-13 * (1.0 + diag_max) : jitter * 100;
      }
      if (jitter >= 0) ok = false;
    }
    if (!ok) {
      failure = "the interior-point normal matrix could not be factored";
      break;
    }

    if (m > 0) {
      std::fill(sd.schur.begin(), sd.schur.end(), 0.0);
      for (std::size_t gid = 0; gid < groups.members.size(); ++gid) {
        const int ng = static_cast<int>(groups.members[gid].size());
        std::copy(sd.AgT[gid].begin(), sd.AgT[gid].end(), xbuf.begin());
        const double one = 1.0;
        dtrsm_("L", "U", "T", "N", &ng, &m, &one, sd.H[gid].data(), &ng, xbuf.data(), &ng);
        dsyrk_("U", "T", &m, &ng, &one, xbuf.data(), &ng, &one, sd.schur.data(), &m);
      }
      double diag_max = 0.0;
      for (int i = 0; i < m; ++i)
        diag_max = std::max(diag_max, sd.schur[static_cast<std::size_t>(i) * (m + 1)]);
      double jitter = 0.0;
      ok = false;
      for (int attempt = 0; attempt < 4; ++attempt) {
        sd.schur_fac = sd.schur;
        if (jitter > 0)
          for (int i = 0; i < m; ++i)
            sd.schur_fac[static_cast<std::size_t>(i) * (m + 1)] += jitter;
        if (la::cholesky_upper(m, sd.schur_fac.data()) == 0) {
          ok = true;
          break;
        }
        jitter = jitter == 0 ? 1e-13 * (1.0 + diag_max) : jitter * 100;
      }
      if (!ok) {
        failure = "the Schur complement of the equality system could not be factored";
        break;
      }
    }

    // ---- predictor ---------------------------------------------------------
    // In the scaled space the affine complementarity residual is -sig^2, whose
    // image back outside is exactly -Z, so P = -Z - W RS W.  The W RS W term is
    // stashed in ZRS for the corrector, whose right-hand side reuses it.
    for (auto& w : blocks) {
      const int n = w.n;
      const double one = 1.0, zero = 0.0;
      dgemm_("N", "N", &n, &n, &n, &one, w.W.data(), &n, w.RS.data(), &n, &zero, w.tmp.data(),
             &n);
      dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.W.data(), &n, &zero, w.ZRS.data(),
             &n);
      symmetrize(n, w.ZRS);
      for (std::size_t i = 0; i < w.P.size(); ++i) w.P[i] = -w.Z[i] - w.ZRS[i];
    }
    g = rd;
    for (auto& w : blocks) adjoint_accumulate(*w.def, w.P.data(), 1.0, g);
    if (!solve_group_system(g, rp, dy, dlam)) {
      failure = "saddle-point solve failed in the predictor";
      break;
    }
    double alpha_p_aff = 1.0, alpha_d_aff = 1.0;
    for (auto& w : blocks) {
      w.apply_map(dy);
      for (std::size_t i = 0; i < w.dSa.size(); ++i) w.dSa[i] = w.Fdy[i] + w.RS[i];
      // dZ = -Z - W dS W, symmetrized.
      const int n = w.n;
      const double one = 1.0, zero = 0.0;
      dgemm_("N", "N", &n, &n, &n, &one, w.W.data(), &n, w.dSa.data(), &n, &zero, w.tmp.data(),
             &n);
      dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.W.data(), &n, &zero, w.dZa.data(),
             &n);
      for (std::size_t i = 0; i < w.dZa.size(); ++i) w.dZa[i] = -w.Z[i] - w.dZa[i];
      symmetrize(n, w.dZa);
      alpha_p_aff = std::min(alpha_p_aff, step_to_boundary(n, w.Sfac.data(), w.dSa, w.tmp));
      alpha_d_aff = std::min(alpha_d_aff, step_to_boundary(n, w.Zfac.data(), w.dZa, w.tmp));
    }

    double mu_aff = 0.0;
    for (auto& w : blocks) {
      const int n = w.n;
      for (int cc = 0; cc < n; ++cc)
        for (int rr = 0; rr < n; ++rr) {
          const std::size_t id = static_cast<std::size_t>(rr) + static_cast<std::size_t>(cc) * n;
          mu_aff += (w.S[id] + alpha_p_aff * w.dSa[id]) * (w.Z[id] + alpha_d_aff * w.dZa[id]);
        }
    }
    mu_aff /= std::max(total_dim, 1);
    double sigma = std::pow(std::max(mu_aff, 0.0) / mu, 3);
    sigma = std::clamp(sigma, 1e-8, 1.0);
    // After a near-zero step, bias towards the central path before pushing on.
    if (need_center) sigma = std::max(sigma, 0.8);

    // ---- corrector ---------------------------------------------------------
    // The scaled complementarity residual sigma*mu*I - sig^2 - sym(ds~ dz~)
    // (with ds~ = Ginv dSa Ginv', dz~ = G' dZa G) passes through the inverse
    // Lyapunov map M_ij -> 2 M_ij / (sig_i + sig_j) and back out of the scaled
    // space; K keeps that image so dZ = K - W dS W after the solve.
    for (auto& w : blocks) {
      const int n = w.n;
      const double one = 1.0, zero = 0.0;
      const double target = sigma * mu;
      dgemm_("N", "N", &n, &n, &n, &one, w.Ginv.data(), &n, w.dSa.data(), &n, &zero,
             w.tmp.data(), &n);
      dgemm_("N", "T", &n, &n, &n, &one, w.tmp.data(), &n, w.Ginv.data(), &n, &zero, w.ZS.data(),
             &n);
      dgemm_("T", "N", &n, &n, &n, &one, w.G.data(), &n, w.dZa.data(), &n, &zero, w.tmp.data(),
             &n);
      dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.G.data(), &n, &zero, w.B.data(),
             &n);
      dgemm_("N", "N", &n, &n, &n, &one, w.ZS.data(), &n, w.B.data(), &n, &zero, w.tmp.data(),
             &n);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i <= j; ++i) {
          const std::size_t ij = static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n;
          const std::size_t ji = static_cast<std::size_t>(j) + static_cast<std::size_t>(i) * n;
          double r = -0.5 * (w.tmp[ij] + w.tmp[ji]);
          if (i == j)
            r += target - w.sig[static_cast<std::size_t>(i)] * w.sig[static_cast<std::size_t>(i)];
          r *= 2.0 / (w.sig[static_cast<std::size_t>(i)] + w.sig[static_cast<std::size_t>(j)]);
          w.B[ij] = r;
          w.B[ji] = r;
        }
      dgemm_("T", "N", &n, &n, &n, &one, w.Ginv.data(), &n, w.B.data(), &n, &zero, w.tmp.data(),
             &n);
      dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.Ginv.data(), &n, &zero, w.K.data(),
             &n);
      for (std::size_t i = 0; i < w.P.size(); ++i) w.P[i] = w.K[i] - w.ZRS[i];
    }
    g = rd;
    for (auto& w : blocks) adjoint_accumulate(*w.def, w.P.data(), 1.0, g);
    if (!solve_group_system(g, rp, dy, dlam)) {
      failure = "saddle-point solve failed in the corrector";
      break;
    }
    double alpha_p = 1.0, alpha_d = 1.0;
    for (auto& w : blocks) {
      w.apply_map(dy);
      const int n = w.n;
      for (std::size_t i = 0; i < w.dS.size(); ++i) w.dS[i] = w.Fdy[i] + w.RS[i];
      const double one = 1.0, zero = 0.0;
      dgemm_("N", "N", &n, &n, &n, &one, w.W.data(), &n, w.dS.data(), &n, &zero, w.tmp.data(),
             &n);
      dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.W.data(), &n, &zero, w.dZ.data(),
             &n);
      for (std::size_t i = 0; i < w.dZ.size(); ++i) w.dZ[i] = w.K[i] - w.dZ[i];
      symmetrize(n, w.dZ);
    }
    auto primal_step_len = [&]() {
      double a = 1.0;
      for (auto& w : blocks)
        a = std::min(a, step_to_boundary(w.n, w.Sfac.data(), w.dS, w.tmp));
      return a;
    };
    auto dual_step_len = [&](bool corrected) {
      double a = 1.0;
      for (auto& w : blocks)
        a = std::min(a, step_to_boundary(w.n, w.Zfac.data(), corrected ? w.dZ : w.dZa, w.tmp));
      return a;
    };
    alpha_p = primal_step_len();
    alpha_d = dual_step_len(true);

    // ---- multiple centrality corrections -----------------------------------
    // When a step dies early, the complementarity spectrum has outliers; push
    // them back into a window around the trial barrier parameter with extra
    // back-solves against the factorization already in hand.
    for (int round = 0; round < 3 && std::min(alpha_p, alpha_d) < 0.7; ++round) {
      const double ap_t = std::min(1.0, alpha_p + 0.3);
      const double ad_t = std::min(1.0, alpha_d + 0.3);
      double mu_t = 0.0;
      for (auto& w : blocks) {
        const int n = w.n;
        const std::size_t nn = static_cast<std::size_t>(n) * n;
        const double one = 1.0, zero = 0.0;
        // Trial point in the scaled space: Vs = sig + ap ds~, Vz = sig + ad dz~;
        // Vs Vz shares its spectrum with the unscaled trial product.
        dgemm_("N", "N", &n, &n, &n, &one, w.Ginv.data(), &n, w.dS.data(), &n, &zero,
               w.tmp.data(), &n);
        dgemm_("N", "T", &n, &n, &n, &one, w.tmp.data(), &n, w.Ginv.data(), &n, &zero,
               w.ZS.data(), &n);
        dgemm_("T", "N", &n, &n, &n, &one, w.G.data(), &n, w.dZ.data(), &n, &zero, w.tmp.data(),
               &n);
        dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.G.data(), &n, &zero,
               w.ZRS.data(), &n);
        for (std::size_t i = 0; i < nn; ++i) {
          w.ZS[i] *= ap_t;
          w.ZRS[i] *= ad_t;
        }
        for (int i = 0; i < n; ++i) {
          w.ZS[static_cast<std::size_t>(i) * (n + 1)] += w.sig[static_cast<std::size_t>(i)];
          w.ZRS[static_cast<std::size_t>(i) * (n + 1)] += w.sig[static_cast<std::size_t>(i)];
        }
        dense_gemm(n, 1.0, w.ZRS.data(), w.ZS.data(), 0.0, w.B.data());
        for (int i = 0; i < n; ++i) mu_t += w.B[static_cast<std::size_t>(i) * (n + 1)];
      }
      mu_t /= std::max(total_dim, 1);
      if (!(mu_t > 0.0)) break;

      bool have_target = false;
      bool eig_ok = true;
      for (auto& w : blocks) {
        const int n = w.n;
        symmetrize(n, w.B);
        if (!eig_sym(n, w.B, evals)) {
          eig_ok = false;
          break;
        }
        // K_g = Q (clamp(L) - L) Q'
        bool nonzero = false;
        for (int j = 0; j < n; ++j) {
          const double lam = evals[static_cast<std::size_t>(j)];
          const double target = std::clamp(lam, 0.1 * mu_t, 10.0 * mu_t);
          const double delta = target - lam;
          if (std::abs(delta) > 1e-14 * (1.0 + std::abs(lam))) nonzero = true;
          for (int i = 0; i < n; ++i)
            w.tmp[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] =
                w.B[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] * delta;
        }
        const double one = 1.0, zero = 0.0;
        dgemm_("N", "T", &n, &n, &n, &one, w.tmp.data(), &n, w.B.data(), &n, &zero, w.P.data(),
               &n);
        if (nonzero) have_target = true;
        // Same pipeline as the corrector residual: inverse Lyapunov map, then
        // out of the scaled space; K holds the unscaled image.
        for (int j = 0; j < n; ++j)
          for (int i = 0; i < n; ++i)
            w.P[static_cast<std::size_t>(i) + static_cast<std::size_t>(j) * n] *=
                2.0 / (w.sig[static_cast<std::size_t>(i)] + w.sig[static_cast<std::size_t>(j)]);
        dgemm_("T", "N", &n, &n, &n, &one, w.Ginv.data(), &n, w.P.data(), &n, &zero,
               w.tmp.data(), &n);
        dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.Ginv.data(), &n, &zero,
               w.K.data(), &n);
      }
      if (!eig_ok || !have_target) break;

      std::fill(g2.begin(), g2.end(), 0.0);
      for (auto& w : blocks) adjoint_accumulate(*w.def, w.K.data(), 1.0, g2);
      if (!solve_group_system(g2, zero_m, ddy, ddlam)) break;

      for (auto& w : blocks) {
        const int n = w.n;
        const std::size_t nn = static_cast<std::size_t>(n) * n;
        w.apply_map(ddy);
        for (std::size_t i = 0; i < nn; ++i) w.ZS[i] = w.dS[i] + w.Fdy[i];
        const double one = 1.0, zero = 0.0;
        dgemm_("N", "N", &n, &n, &n, &one, w.W.data(), &n, w.Fdy.data(), &n, &zero,
               w.tmp.data(), &n);
        dgemm_("N", "N", &n, &n, &n, &one, w.tmp.data(), &n, w.W.data(), &n, &zero, w.B.data(),
               &n);
        for (std::size_t i = 0; i < nn; ++i) w.B[i] = w.K[i] - w.B[i];
        symmetrize(n, w.B);
        for (std::size_t i = 0; i < nn; ++i) w.ZRS[i] = w.dZ[i] + w.B[i];
      }
      double ap2 = 1.0, ad2 = 1.0;
      for (auto& w : blocks) {
        ap2 = std::min(ap2, step_to_boundary(w.n, w.Sfac.data(), w.ZS, w.tmp));
        ad2 = std::min(ad2, step_to_boundary(w.n, w.Zfac.data(), w.ZRS, w.tmp));
      }
      if (std::min(ap2, ad2) < std::min(alpha_p, alpha_d) + 0.02) break;
      for (auto& w : blocks) {
        std::copy(w.ZS.begin(), w.ZS.end(), w.dS.begin());
        std::copy(w.ZRS.begin(), w.ZRS.end(), w.dZ.begin());
      }
      for (int v = 0; v < prog.num_vars; ++v)
        dy[static_cast<std::size_t>(v)] += ddy[static_cast<std::size_t>(v)];
      for (int i = 0; i < m; ++i)
        dlam[static_cast<std::size_t>(i)] += ddlam[static_cast<std::size_t>(i)];
      alpha_p = ap2;
      alpha_d = ad2;
    }

    // ---- dual feasibility restoration --------------------------------------
    if (mu < 1e-3 * (1.0 + mu0)) {
      for (auto& w : blocks) w.dZa = w.dZ;  // raw fallback
      const double defect = correct_dual_direction(rd, dlam) / (1.0 + cmax);
      const double ad_corr = dual_step_len(true);
      if (ad_corr >= 1e-4 || defect > 10.0 * (dual_inf + 1e-12)) {
        alpha_d = ad_corr;
      } else {
        // The tweak jams against the cone while the raw direction both moves
        // and cannot add meaningful drift; keep the raw one.
        for (auto& w : blocks) std::copy(w.dZa.begin(), w.dZa.end(), w.dZ.begin());
      }
    }
    const double tau = iter <= 3 ? 0.95 : opts.step_fraction;
    alpha_p = std::min(1.0, tau * alpha_p);
    alpha_d = std::min(1.0, tau * alpha_d);

    // Brake steps that would let complementarity explode.
    for (int guard = 0; guard < 6 && mu > 0.0; ++guard) {
      double mu_new = 0.0;
      for (auto& w : blocks) {
        const int n = w.n;
        for (int cc = 0; cc < n; ++cc)
          for (int rr = 0; rr < n; ++rr) {
            const std::size_t id =
                static_cast<std::size_t>(rr) + static_cast<std::size_t>(cc) * n;
            mu_new += (w.S[id] + alpha_p * w.dS[id]) * (w.Z[id] + alpha_d * w.dZ[id]);
          }
      }
      mu_new /= std::max(total_dim, 1);
      if (mu_new <= 5.0 * mu) break;
      alpha_p *= 0.5;
      alpha_d *= 0.5;
    }

    {
      std::ostringstream os;
      os << "    sigma " << sigma << " alpha_p " << alpha_p << " alpha_d " << alpha_d;
      log_line(os.str());
    }

    if (alpha_p < 1e-8 && alpha_d < 1e-8) {
      if (++stalls >= 3) {
        failure = "step lengths collapsed";
        break;
      }
    } else if (alpha_p < 1e-4 && alpha_d < 1e-4 && best_worst <= opts.near_tol) {
      // Steps have died inside the near-tolerance ball: further iterations
      // only burn time without moving the residuals.
      if (++stalls >= 2) {
        failure = "steps exhausted at near tolerance";
        break;
      }
    } else {
      stalls = 0;
    }
    need_center = std::min(alpha_p, alpha_d) < 0.01;

    for (int v = 0; v < prog.num_vars; ++v)
      y[static_cast<std::size_t>(v)] += alpha_p * dy[static_cast<std::size_t>(v)];
    for (int i = 0; i < m; ++i)
      lambda[static_cast<std::size_t>(i)] += alpha_d * dlam[static_cast<std::size_t>(i)];
    for (auto& w : blocks) {
      for (std::size_t i = 0; i < w.S.size(); ++i) {
        w.S[i] += alpha_p * w.dS[i];
        w.Z[i] += alpha_d * w.dZ[i];
      }
    }

    // One cone pinned at its boundary while the other still moves: nudge the
    // stuck iterate back inside so later directions can close the residuals.
    if (mu > 0.0 && rescues < 5) {
      const double jit = std::max(mu * 1e-2, 1e-13);
      if (alpha_d < 1e-6 && alpha_p > 1e-3) {
        for (auto& w : blocks)
          for (int i = 0; i < w.n; ++i) w.Z[static_cast<std::size_t>(i) * (w.n + 1)] += jit;
        ++rescues;
      } else if (alpha_p < 1e-6 && alpha_d > 1e-3) {
        for (auto& w : blocks)
          for (int i = 0; i < w.n; ++i) w.S[static_cast<std::size_t>(i) * (w.n + 1)] += jit;
        ++rescues;
      }
    }
  }

  // ---- wrap up -------------------------------------------------------------
  if (!converged) {
    y = best_y;
    lambda = best_lambda;
    for (std::size_t j = 0; j < blocks.size(); ++j)
      if (!best_Z[j].empty()) blocks[j].Z = best_Z[j];
  }
  sol.iterations = std::min(iter, opts.max_iterations);
  for (int i = 0; i < m; ++i)
    sol.eq_duals[static_cast<std::size_t>(kept[static_cast<std::size_t>(i)])] =
        lambda[static_cast<std::size_t>(i)] * row_scale[static_cast<std::size_t>(i)];
  sol.psd_duals.resize(blocks.size());
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    // Row-major output equals column-major for symmetric data.
    sol.psd_duals[j] = blocks[j].Z;
  }

  refresh_residuals(prog, sol, opts);
  if (!failure.empty() && sol.status == SolveStatus::Optimal) {
    // A late numerical failure after reaching tolerance is still a success.
    failure.clear();
  }
  if (!failure.empty()) {
    std::ostringstream os;
    os << failure << " after " << sol.iterations << " iterations; trace:";
    for (const auto& line : trace) os << "\n  " << line;
    sol.message = os.str();
    if (sol.status == SolveStatus::NearOptimal || sol.status == SolveStatus::Optimal) {
      // Residual-based classification stands: the best iterate is usable.
    } else {
      sol.status = SolveStatus::NumericalFailure;
    }
  } else if (!converged && sol.status == SolveStatus::NumericalFailure) {
    std::ostringstream os;
    os << "iteration cap reached without convergence; trace:";
    for (const auto& line : trace) os << "\n  " << line;
    sol.message = os.str();
  }

  // Dependent rows that disagree with the kept system mean the original
  // program was inconsistent, not ill-conditioned.
  if (!sol.dropped_rows.empty() && sol.status == SolveStatus::NumericalFailure) {
    double kept_res = 0.0, dropped_res = 0.0;
    for (std::size_t r = 0; r < prog.rows.size(); ++r) {
      const double res = std::abs(dot_row(prog.rows[r], sol.y) - prog.rows[r].rhs);
      if (is_dropped[r])
        dropped_res = std::max(dropped_res, res);
      else
        kept_res = std::max(kept_res, res);
    }
    if (kept_res <= opts.near_tol * (1.0 + bmax) && dropped_res > opts.near_tol * (1.0 + bmax)) {
      sol.status = SolveStatus::Infeasible;
      sol.message = "equalities are mutually inconsistent (a dependent row disagrees with the "
                    "span of the others by " +
                    std::to_string(dropped_res) + ")";
    }
  }
  return sol;
}

}  // namespace winrisk
