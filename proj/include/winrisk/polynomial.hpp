#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace winrisk {

/// Exponent vector over an ordered variable list; entry i holds the power of
/// variable i.  A multi-index is only meaningful together with the variable
/// list of the polynomial (or moment basis) that owns it.
using MultiIndex = std::vector<unsigned>;

unsigned total_degree(const MultiIndex& a);

/// The one term/basis order used throughout the project: lower total degree
/// first; within a degree, higher powers on earlier variables come first.
/// With variables (x1, x2) the induced sequence is
///   1, x1, x2, x1^2, x1*x2, x2^2, x1^3, ...
bool graded_before(const MultiIndex& a, const MultiIndex& b);

struct GradedLess {
  bool operator()(const MultiIndex& a, const MultiIndex& b) const {
    return graded_before(a, b);
  }
};

/// All monomials over `nvars` variables with total degree <= max_degree,
/// listed in the graded order above.  Size is C(nvars + max_degree, nvars).
std::vector<MultiIndex> enumerate_monomials(std::size_t nvars, unsigned max_degree);

/// Thrown by parse() with a 1-based column offset into the input string.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t column)
      : std::runtime_error(what), column_(column) {}
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

/// Sparse multivariate polynomial with double coefficients over a fixed,
/// ordered variable list.  Binary operations require both operands to carry
/// an identical variable list; use lift() to move a polynomial into a larger
/// variable context first.  Terms with coefficient exactly 0 are never
/// stored, so is_zero() and term iteration are canonical.
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::vector<std::string> vars) : vars_(std::move(vars)) {}

  static Polynomial constant(std::vector<std::string> vars, double c);
  static Polynomial variable(std::vector<std::string> vars, std::string_view name);
  static Polynomial monomial(std::vector<std::string> vars, MultiIndex alpha, double c);

  const std::vector<std::string>& vars() const { return vars_; }
  const std::map<MultiIndex, double, GradedLess>& terms() const { return terms_; }

  bool is_zero() const { return terms_.empty(); }
  /// Total degree; 0 for the zero polynomial.
  unsigned degree() const;
  /// Largest power of variable `v` appearing in any term.
  unsigned degree_in(std::string_view v) const;
  double coeff(const MultiIndex& alpha) const;
  void set_coeff(MultiIndex alpha, double c);
  std::size_t num_terms() const { return terms_.size(); }

  Polynomial& operator+=(const Polynomial& rhs);
  Polynomial& operator-=(const Polynomial& rhs);
  Polynomial& operator*=(double c);
  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double c) { return a *= c; }
  friend Polynomial operator*(double c, Polynomial a) { return a *= c; }
  friend Polynomial operator-(Polynomial a) { return a *= -1.0; }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b);

  /// Drops terms with |coeff| <= eps * max|coeff|.  Used after generator
  /// applications to discard floating-point cancellation residue before
  /// degree scans.
  Polynomial pruned(double eps = 1e-12) const;

  std::size_t var_index(std::string_view name) const;  // throws if absent

 private:
  std::vector<std::string> vars_;
  std::map<MultiIndex, double, GradedLess> terms_;
};

Polynomial pow(const Polynomial& base, unsigned e);
Polynomial partial(const Polynomial& p, std::string_view var);
double evaluate(const Polynomial& p, std::span<const double> point);

/// Re-expresses `p` over `new_vars`, which must contain every variable of
/// `p` (any order).
Polynomial lift(const Polynomial& p, std::vector<std::string> new_vars);

/// Simultaneous substitution: every variable of `p` is replaced by the
/// polynomial mapped to it (all replacements over `new_vars`).  Variables
/// without an entry must appear in `new_vars` and map to themselves.
Polynomial substitute(const Polynomial& p, const std::vector<std::string>& new_vars,
                      const std::map<std::string, Polynomial>& replacements);

/// Parses the text grammar
///   expression := ('+'|'-')? term (('+'|'-') term)*
///   term       := coefficient? ('*'? var ('^' integer)?)*
/// over the given variable list.  Whitespace is insignificant; identifiers
/// are [a-zA-Z][a-zA-Z0-9_]*.  Throws ParseError with a column number.
Polynomial parse(std::string_view text, std::vector<std::string> vars);

/// Canonical text form, parseable by parse(): terms in graded order, unit
/// coefficients elided, '*' between factors, '^' for powers >= 2.
std::string render(const Polynomial& p);

/// Shortest round-trip decimal for a double (used by render and exporters).
std::string format_double(double v);

}  // namespace winrisk
