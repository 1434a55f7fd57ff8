// SDPA sparse (.dat-s) export/import and CSDP-layout solution files.
//
// The exported problem is the standard SDPA form  min c.x  s.t.
// X = sum_i x_i F_i - F0 PSD, with one SDPA variable per entry of the
// moment vector y.  Since this toolkit maximizes, the objective is negated
// on the way out and back.  Equality rows have no native SDPA encoding, so
// they are folded into one trailing diagonal block holding the pairs
// A y - b >= 0 and b - A y >= 0.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "conic_internal.hpp"
#include "winrisk/conic.hpp"

namespace winrisk {

namespace {

std::string fmt17(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific, 16);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& tok, const std::string& context) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error("bad number '" + tok + "' in " + context);
  return v;
}

long parse_long(const std::string& tok, const std::string& context) {
  long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw std::runtime_error("bad integer '" + tok + "' in " + context);
  return v;
}

// Tokenizer for SDPA data lines: separators include the optional
// punctuation the format allows in the block-size line.
std::vector<std::string> tokens_of(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',' || ch == '(' || ch == ')' ||
        ch == '{' || ch == '}') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool is_comment(const std::string& line) {
  for (char ch : line) {
    if (std::isspace(static_cast<unsigned char>(ch))) continue;
    return ch == '*' || ch == '"';
  }
  return true;  // blank
}

std::string sidecar_path(const std::string& path) { return path + ".json"; }

struct SdpaEntry {
  long mat, block, i, j;
  double value;
};

}  // namespace

void export_sdpa(const ConicProgram& prog, const std::string& path,
                 const std::string& extra_sidecar_json) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");

  const int m_eq = static_cast<int>(prog.rows.size());
  const int nblocks = static_cast<int>(prog.blocks.size()) + (m_eq > 0 ? 1 : 0);

  out << "* windowed-risk moment relaxation export\n";
  out << "* maximization objective negated (SDPA minimizes)\n";
  if (m_eq > 0)
    out << "* final diagonal block encodes " << m_eq
        << " equality rows as paired inequalities (Ay-b >= 0, b-Ay >= 0)\n";
  out << prog.num_vars << "\n";
  out << nblocks << "\n";
  for (std::size_t j = 0; j < prog.blocks.size(); ++j)
    out << prog.blocks[j].size << (j + 1 < prog.blocks.size() || m_eq > 0 ? " " : "");
  if (m_eq > 0) out << -2 * m_eq;
  out << "\n";
  for (int v = 0; v < prog.num_vars; ++v)
    out << fmt17(-prog.objective[static_cast<std::size_t>(v)])
        << (v + 1 < prog.num_vars ? " " : "");
  out << "\n";

  // PSD blocks: F0_sdpa = -F0_ours, variable matrices verbatim.  Entries
  // are grouped by matrix number (constant first), then by position.
  for (std::size_t j = 0; j < prog.blocks.size(); ++j) {
    auto entries = prog.blocks[j].entries;
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.var != b.var) return a.var < b.var;
      if (a.row != b.row) return a.row < b.row;
      return a.col < b.col;
    });
    for (const auto& e : entries) {
      if (e.coeff == 0.0) continue;
      const double value = e.var < 0 ? -e.coeff : e.coeff;
      out << (e.var < 0 ? 0 : e.var + 1) << " " << j + 1 << " " << e.row + 1 << " " << e.col + 1
          << " " << fmt17(value) << "\n";
    }
  }
  if (m_eq > 0) {
    const long blockno = static_cast<long>(prog.blocks.size()) + 1;
    for (int r = 0; r < m_eq; ++r) {
      const auto& row = prog.rows[static_cast<std::size_t>(r)];
      const long dpos = 2 * r + 1, dneg = 2 * r + 2;
      if (row.rhs != 0.0) {
        out << 0 << " " << blockno << " " << dpos << " " << dpos << " " << fmt17(row.rhs)
            << "\n";
        out << 0 << " " << blockno << " " << dneg << " " << dneg << " " << fmt17(-row.rhs)
            << "\n";
      }
      for (const auto& [v, c] : row.terms) {
        if (c == 0.0) continue;
        out << v + 1 << " " << blockno << " " << dpos << " " << dpos << " " << fmt17(c) << "\n";
        out << v + 1 << " " << blockno << " " << dneg << " " << dneg << " " << fmt17(-c) << "\n";
      }
    }
  }
  out.close();
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");

  nlohmann::json side;
  side["format"] = "sdpa-sparse";
  {
    std::ostringstream os;
    os << "0x" << std::hex << prog.source_hash;
    side["hash"] = os.str();
  }
  side["num_vars"] = prog.num_vars;
  side["num_equalities"] = m_eq;
  side["equality_block"] = m_eq > 0;
  side["objective_negated"] = true;
  std::vector<int> sizes;
  for (const auto& b : prog.blocks) sizes.push_back(b.size);
  side["psd_block_sizes"] = sizes;
  if (!extra_sidecar_json.empty()) side["extra"] = nlohmann::json::parse(extra_sidecar_json);
  std::ofstream sout(sidecar_path(path));
  if (!sout) throw std::runtime_error("cannot open '" + sidecar_path(path) + "' for writing");
  sout << side.dump(2) << "\n";
}

ConicProgram import_sdpa(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");

  bool equality_block = false;
  std::uint64_t hash = 0;
  {
    std::ifstream side(sidecar_path(path));
    if (side) {
      nlohmann::json j = nlohmann::json::parse(side);
      equality_block = j.value("equality_block", false);
      if (j.contains("hash")) {
        const std::string h = j["hash"].get<std::string>();
        hash = std::stoull(h, nullptr, 16);
      }
    }
  }

  std::vector<std::string> header_tokens;
  std::string line;
  // Header: m, nblocks, block sizes, objective -- in token order, comments
  // skipped.
  std::vector<std::string> pending;
  auto next_tokens = [&]() -> std::vector<std::string> {
    while (std::getline(in, line)) {
      if (is_comment(line)) continue;
      auto t = tokens_of(line);
      if (!t.empty()) return t;
    }
    throw std::runtime_error("unexpected end of '" + path + "'");
  };

  const long nvars = parse_long(next_tokens().at(0), "variable count");
  const long nblocks = parse_long(next_tokens().at(0), "block count");
  std::vector<long> sizes;
  while (static_cast<long>(sizes.size()) < nblocks)
    for (const auto& t : next_tokens()) sizes.push_back(parse_long(t, "block sizes"));
  if (static_cast<long>(sizes.size()) != nblocks)
    throw std::runtime_error("block structure line does not match the block count");
  std::vector<double> csdpa;
  while (static_cast<long>(csdpa.size()) < nvars)
    for (const auto& t : next_tokens()) csdpa.push_back(parse_double(t, "objective"));
  if (static_cast<long>(csdpa.size()) != nvars)
    throw std::runtime_error("objective line does not match the variable count");

  std::vector<SdpaEntry> entries;
  while (std::getline(in, line)) {
    if (is_comment(line)) continue;
    auto t = tokens_of(line);
    if (t.empty()) continue;
    if (t.size() != 5) throw std::runtime_error("malformed entry line '" + line + "'");
    entries.push_back({parse_long(t[0], "entry"), parse_long(t[1], "entry"),
                       parse_long(t[2], "entry"), parse_long(t[3], "entry"),
                       parse_double(t[4], "entry")});
  }

  ConicProgram prog;
  prog.num_vars = static_cast<int>(nvars);
  prog.source_hash = hash;
  prog.objective.resize(static_cast<std::size_t>(nvars));
  for (long v = 0; v < nvars; ++v)
    prog.objective[static_cast<std::size_t>(v)] = -csdpa[static_cast<std::size_t>(v)];

  const bool last_is_equalities = equality_block && nblocks > 0 && sizes.back() < 0 &&
                                  (-sizes.back()) % 2 == 0;
  const long n_psd = last_is_equalities ? nblocks - 1 : nblocks;
  prog.blocks.resize(static_cast<std::size_t>(n_psd));
  for (long j = 0; j < n_psd; ++j) {
    prog.blocks[static_cast<std::size_t>(j)].size =
        static_cast<int>(std::abs(sizes[static_cast<std::size_t>(j)]));
    prog.blocks[static_cast<std::size_t>(j)].label = "block" + std::to_string(j + 1);
  }
  if (last_is_equalities) prog.rows.resize(static_cast<std::size_t>(-sizes.back() / 2));

  for (const auto& e : entries) {
    if (e.block < 1 || e.block > nblocks) throw std::runtime_error("entry block out of range");
    if (e.mat < 0 || e.mat > nvars) throw std::runtime_error("entry matrix number out of range");
    if (last_is_equalities && e.block == nblocks) {
      if (e.i != e.j) throw std::runtime_error("off-diagonal entry in the equality block");
      const long r = (e.i - 1) / 2;
      const bool positive = (e.i % 2) == 1;
      if (r < 0 || r >= static_cast<long>(prog.rows.size()))
        throw std::runtime_error("equality row index out of range");
      if (!positive) continue;  // the mirrored copy carries no new data
      auto& row = prog.rows[static_cast<std::size_t>(r)];
      if (e.mat == 0)
        row.rhs = e.value;
      else
        row.terms.emplace_back(static_cast<int>(e.mat - 1), e.value);
    } else {
      auto& blk = prog.blocks[static_cast<std::size_t>(e.block - 1)];
      if (e.i < 1 || e.j < e.i || e.j > blk.size)
        throw std::runtime_error("entry indices outside the block upper triangle");
      blk.entries.push_back({static_cast<int>(e.i - 1), static_cast<int>(e.j - 1),
                             static_cast<int>(e.mat - 1), e.mat == 0 ? -e.value : e.value});
    }
  }
  for (auto& row : prog.rows) std::sort(row.terms.begin(), row.terms.end());
  return prog;
}

void export_solution(const ConicProgram& prog, const ConicSolution& sol,
                     const std::string& path) {
  if (static_cast<int>(sol.y.size()) != prog.num_vars)
    throw std::invalid_argument("solution length does not match the program");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (int v = 0; v < prog.num_vars; ++v)
    out << fmt17(sol.y[static_cast<std::size_t>(v)]) << (v + 1 < prog.num_vars ? " " : "");
  out << "\n";

  // Matrix 1: the primal slack realized from y; matrix 2: the dual blocks.
  for (std::size_t j = 0; j < prog.blocks.size(); ++j) {
    const auto& blk = prog.blocks[j];
    auto S = conic_detail::block_matrix(blk, sol.y);
    for (int r = 0; r < blk.size; ++r)
      for (int c = r; c < blk.size; ++c) {
        const double v = S[static_cast<std::size_t>(r) + static_cast<std::size_t>(c) * blk.size];
        if (v != 0.0) out << "1 " << j + 1 << " " << r + 1 << " " << c + 1 << " " << fmt17(v)
                          << "\n";
      }
  }
  const long eq_block = static_cast<long>(prog.blocks.size()) + 1;
  for (std::size_t r = 0; r < prog.rows.size(); ++r) {
    const double resid = conic_detail::dot_row(prog.rows[r], sol.y) - prog.rows[r].rhs;
    out << "1 " << eq_block << " " << 2 * r + 1 << " " << 2 * r + 1 << " " << fmt17(resid)
        << "\n";
    out << "1 " << eq_block << " " << 2 * r + 2 << " " << 2 * r + 2 << " " << fmt17(-resid)
        << "\n";
  }
  if (sol.psd_duals.size() == prog.blocks.size()) {
    for (std::size_t j = 0; j < prog.blocks.size(); ++j) {
      const auto& Z = sol.psd_duals[j];
      const int n = prog.blocks[j].size;
      for (int r = 0; r < n; ++r)
        for (int c = r; c < n; ++c) {
          const double v = Z[static_cast<std::size_t>(r) * n + c];
          if (v != 0.0)
            out << "2 " << j + 1 << " " << r + 1 << " " << c + 1 << " " << fmt17(v) << "\n";
        }
    }
  }
  for (std::size_t r = 0; r < sol.eq_duals.size(); ++r) {
    const double lam = sol.eq_duals[r];
    out << "2 " << eq_block << " " << 2 * r + 1 << " " << 2 * r + 1 << " "
        << fmt17(std::max(lam, 0.0)) << "\n";
    out << "2 " << eq_block << " " << 2 * r + 2 << " " << 2 * r + 2 << " "
        << fmt17(std::max(-lam, 0.0)) << "\n";
  }
  out.close();
  if (!out) throw std::runtime_error("failed while writing '" + path + "'");
}

ConicSolution import_sdpa_solution(const std::string& path, const ConicProgram& prog,
                                   const SolveOptions& opts) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty solution file '" + path + "'");
  auto head = tokens_of(line);
  if (static_cast<int>(head.size()) != prog.num_vars)
    throw std::runtime_error("solution vector length " + std::to_string(head.size()) +
                             " does not match the program's " + std::to_string(prog.num_vars) +
                             " variables");
  ConicSolution sol;
  sol.y.resize(static_cast<std::size_t>(prog.num_vars));
  for (std::size_t v = 0; v < head.size(); ++v)
    sol.y[v] = parse_double(head[v], "solution vector");

  sol.eq_duals.assign(prog.rows.size(), 0.0);
  sol.psd_duals.resize(prog.blocks.size());
  for (std::size_t j = 0; j < prog.blocks.size(); ++j)
    sol.psd_duals[j].assign(
        static_cast<std::size_t>(prog.blocks[j].size) * prog.blocks[j].size, 0.0);
  const long eq_block = static_cast<long>(prog.blocks.size()) + 1;
  bool saw_dual = false;

  while (std::getline(in, line)) {
    if (is_comment(line)) continue;
    auto t = tokens_of(line);
    if (t.empty()) continue;
    if (t.size() != 5) throw std::runtime_error("malformed solution entry '" + line + "'");
    const long mat = parse_long(t[0], "solution entry");
    const long block = parse_long(t[1], "solution entry");
    const long i = parse_long(t[2], "solution entry");
    const long j = parse_long(t[3], "solution entry");
    const double value = parse_double(t[4], "solution entry");
    if (mat != 1 && mat != 2) throw std::runtime_error("solution matrix number must be 1 or 2");
    if (mat == 1) continue;  // primal slack is recomputed locally
    saw_dual = true;
    if (block == eq_block && !prog.rows.empty()) {
      if (i != j) throw std::runtime_error("off-diagonal entry in the equality dual block");
      const long r = (i - 1) / 2;
      if (r < 0 || r >= static_cast<long>(prog.rows.size()))
        throw std::runtime_error("equality dual index out of range");
      sol.eq_duals[static_cast<std::size_t>(r)] += (i % 2 == 1) ? value : -value;
    } else {
      if (block < 1 || block > static_cast<long>(prog.blocks.size()))
        throw std::runtime_error("solution block out of range");
      const int n = prog.blocks[static_cast<std::size_t>(block - 1)].size;
      if (i < 1 || j < i || j > n)
        throw std::runtime_error("solution entry outside the block upper triangle");
      auto& Z = sol.psd_duals[static_cast<std::size_t>(block - 1)];
      Z[static_cast<std::size_t>(i - 1) * n + (j - 1)] = value;
      Z[static_cast<std::size_t>(j - 1) * n + (i - 1)] = value;
    }
  }
  if (!saw_dual) {
    sol.psd_duals.clear();
    sol.eq_duals.clear();
  }
  refresh_residuals(prog, sol, opts);
  return sol;
}

}  // namespace winrisk
