#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "winrisk/moments.hpp"

namespace winrisk {

/// Conic program over a real vector y:
///   maximize objective . y
///   subject to rows:    sum_v terms * y_v = rhs
///              blocks:  F0 + sum_v F_v y_v  is positive semidefinite
/// Block entries store the upper triangle (row <= col); an entry with
/// var == -1 contributes to the constant matrix F0.
struct ConicProgram {
  int num_vars = 0;
  std::vector<double> objective;  // dense, length num_vars

  struct Row {
    std::vector<std::pair<int, double>> terms;  // sorted by variable id
    double rhs = 0.0;
    std::string label;
  };
  std::vector<Row> rows;

  struct Block {
    int size = 0;
    std::string label;
    struct Entry {
      int row, col;  // 0-based, row <= col
      int var;       // -1 for the constant part
      double coeff;
    };
    std::vector<Entry> entries;
  };
  std::vector<Block> blocks;

  std::uint64_t source_hash = 0;  // hash of the originating relaxation, if any
};

/// Maps an assembled moment relaxation onto the conic form 1:1.
ConicProgram to_conic(const MomentRelaxation& rel);

enum class SolveStatus { Optimal, NearOptimal, Infeasible, Unbounded, NumericalFailure };

std::string to_string(SolveStatus status);

struct SolveOptions {
  double gap_tol = 1e-7;   // relative duality gap
  double feas_tol = 1e-7;  // relative primal/dual feasibility
  double near_tol = 1e-2;  // NearOptimal threshold at the iteration cap
  int max_iterations = 120;
  double step_fraction = 0.98;  // fraction of the distance to the boundary
  int max_block_size = 260;     // desk-scale refusal thresholds
  int max_variables = 20000;
  bool verbose = false;
};

struct ConicSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  std::vector<double> y;
  double value = 0.0;       // objective . y
  double dual_value = 0.0;  // b . lambda + <F0, Z>

  std::vector<double> eq_duals;                 // one per input row
  std::vector<std::vector<double>> psd_duals;   // dense Z per block, row-major

  double primal_residual = 0.0;  // ||b - A y||_inf / (1 + ||b||_inf)
  double dual_residual = 0.0;    // ||c - A'lambda + F*(Z)||_inf / (1 + ||c||_inf)
  double min_eigenvalue = 0.0;   // min eigenvalue of F0 + F(y) over blocks
  double gap = 0.0;              // |value - dual| / (1 + |value| + |dual|)
  int iterations = 0;
  std::vector<int> dropped_rows;  // redundant equalities removed in presolve
  std::string message;
};

/// Indices of equality rows that are linearly dependent on earlier rows
/// (detected through a pivoted Cholesky factorization of the row Gram
/// matrix after row normalization).
std::vector<int> redundant_rows(const ConicProgram& prog, double tol = 1e-10);

/// Primal-dual interior-point solve (HKM direction, Mehrotra
/// predictor-corrector, native equality handling).  Deterministic for
/// identical inputs and options.  Throws std::invalid_argument for
/// malformed programs and for programs beyond the desk-scale limits in
/// `opts` (use the SDPA export and an external solver for those).
ConicSolution solve(const ConicProgram& prog, const SolveOptions& opts = {});

/// Recomputes the feasibility residuals, eigenvalue floor, and duality gap
/// of an externally produced (y, duals) pair against `prog`, and classifies
/// the result: Optimal within `opts` tolerances, NearOptimal within
/// opts.near_tol, NumericalFailure otherwise.
void refresh_residuals(const ConicProgram& prog, ConicSolution& sol, const SolveOptions& opts = {});

/// Writes SDPA sparse format (.dat-s): one SDPA variable per y entry,
/// objective negated (SDPA minimizes), each PSD block verbatim, and all
/// equality rows folded into one trailing diagonal block of paired
/// inequalities (A y - b >= 0 and b - A y >= 0).  A JSON sidecar at
/// path + ".json" records the program hash, dimensions, and `extra`
/// (e.g. the scaling transform) so solutions can be mapped back.
void export_sdpa(const ConicProgram& prog, const std::string& path,
                 const std::string& extra_sidecar_json = "");

/// Reads a .dat-s file produced by export_sdpa back into a ConicProgram
/// (labels are not round-tripped).  If a sidecar is present it is used to
/// recover the equality pairing; otherwise trailing diagonal blocks are
/// kept as ordinary PSD blocks.
ConicProgram import_sdpa(const std::string& path);

/// Writes a solution in the CSDP text layout: first line the y vector,
/// then "1 blk i j v" lines for the primal slack and "2 blk i j v" lines
/// for the dual blocks, using the block numbering of the exported file.
void export_solution(const ConicProgram& prog, const ConicSolution& sol,
                     const std::string& path);

/// Reads a CSDP-layout solution file for a program exported by
/// export_sdpa, maps it back onto (y, equality duals, PSD duals), and
/// classifies it via refresh_residuals.
ConicSolution import_sdpa_solution(const std::string& path, const ConicProgram& prog,
                                   const SolveOptions& opts = {});

}  // namespace winrisk
