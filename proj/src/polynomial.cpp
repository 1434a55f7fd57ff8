#include "winrisk/polynomial.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace winrisk {

unsigned total_degree(const MultiIndex& a) {
  unsigned d = 0;
  for (unsigned e : a) d += e;
  return d;
}

bool graded_before(const MultiIndex& a, const MultiIndex& b) {
  const unsigned da = total_degree(a), db = total_degree(b);
  if (da != db) return da < db;
  // Same degree: higher power on the earliest differing variable first.
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

std::vector<MultiIndex> enumerate_monomials(std::size_t nvars, unsigned max_degree) {
  std::vector<MultiIndex> out;
  MultiIndex cur(nvars, 0);
  // Recursive enumeration emitting each degree level in graded order.
  auto rec = [&](auto&& self, std::size_t pos, unsigned remaining) -> void {
    if (pos + 1 == nvars) {
      cur[pos] = remaining;
      out.push_back(cur);
      cur[pos] = 0;
      return;
    }
    for (unsigned e = remaining; e + 1 != 0; --e) {
      cur[pos] = e;
      self(self, pos + 1, remaining - e);
    }
    cur[pos] = 0;
  };
  if (nvars == 0) {
    out.push_back({});
    return out;
  }
  for (unsigned d = 0; d <= max_degree; ++d) rec(rec, 0, d);
  return out;
}

Polynomial Polynomial::constant(std::vector<std::string> vars, double c) {
  Polynomial p(std::move(vars));
  if (c != 0.0) p.terms_[MultiIndex(p.vars_.size(), 0)] = c;
  return p;
}

Polynomial Polynomial::variable(std::vector<std::string> vars, std::string_view name) {
  Polynomial p(std::move(vars));
  MultiIndex a(p.vars_.size(), 0);
  a[p.var_index(name)] = 1;
  p.terms_[std::move(a)] = 1.0;
  return p;
}

Polynomial Polynomial::monomial(std::vector<std::string> vars, MultiIndex alpha, double c) {
  Polynomial p(std::move(vars));
  if (alpha.size() != p.vars_.size())
    throw std::invalid_argument("monomial: exponent size mismatch");
  if (c != 0.0) p.terms_[std::move(alpha)] = c;
  return p;
}

unsigned Polynomial::degree() const {
  unsigned d = 0;
  for (const auto& [a, c] : terms_) d = std::max(d, total_degree(a));
  return d;
}

unsigned Polynomial::degree_in(std::string_view v) const {
  const std::size_t i = var_index(v);
  unsigned d = 0;
  for (const auto& [a, c] : terms_) d = std::max(d, a[i]);
  return d;
}

double Polynomial::coeff(const MultiIndex& alpha) const {
  auto it = terms_.find(alpha);
  return it == terms_.end() ? 0.0 : it->second;
}

void Polynomial::set_coeff(MultiIndex alpha, double c) {
  if (alpha.size() != vars_.size())
    throw std::invalid_argument("set_coeff: exponent size mismatch");
  if (c == 0.0)
    terms_.erase(alpha);
  else
    terms_[std::move(alpha)] = c;
}

std::size_t Polynomial::var_index(std::string_view name) const {
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i] == name) return i;
  throw std::invalid_argument("unknown variable '" + std::string(name) + "'");
}

namespace {

void check_same_vars(const Polynomial& a, const Polynomial& b, const char* op) {
  if (a.vars() != b.vars())
    throw std::invalid_argument(std::string(op) +
                                ": operands live over different variable lists");
}

}  // namespace

Polynomial& Polynomial::operator+=(const Polynomial& rhs) {
  check_same_vars(*this, rhs, "operator+");
  for (const auto& [a, c] : rhs.terms_) {
    auto [it, fresh] = terms_.try_emplace(a, c);
    if (!fresh) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }
  return *this;
}

Polynomial& Polynomial::operator-=(const Polynomial& rhs) {
  check_same_vars(*this, rhs, "operator-");
  for (const auto& [a, c] : rhs.terms_) {
    auto [it, fresh] = terms_.try_emplace(a, -c);
    if (!fresh) {
      it->second -= c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }
  return *this;
}

Polynomial& Polynomial::operator*=(double c) {
  if (c == 0.0) {
    terms_.clear();
    return *this;
  }
  for (auto& [a, v] : terms_) v *= c;
  return *this;
}

Polynomial operator*(const Polynomial& a, const Polynomial& b) {
  check_same_vars(a, b, "operator*");
  Polynomial out(a.vars());
  MultiIndex prod(a.vars().size());
  for (const auto& [aa, ca] : a.terms()) {
    for (const auto& [ab, cb] : b.terms()) {
      for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = aa[i] + ab[i];
      const double c = ca * cb;
      auto [it, fresh] = out.terms_.try_emplace(prod, c);
      if (!fresh) {
        it->second += c;
        if (it->second == 0.0) out.terms_.erase(it);
      }
    }
  }
  return out;
}

Polynomial Polynomial::pruned(double eps) const {
  double peak = 0.0;
  for (const auto& [a, c] : terms_) peak = std::max(peak, std::abs(c));
  Polynomial out(vars_);
  for (const auto& [a, c] : terms_)
    if (std::abs(c) > eps * peak) out.terms_[a] = c;
  return out;
}

Polynomial pow(const Polynomial& base, unsigned e) {
  Polynomial acc = Polynomial::constant(base.vars(), 1.0);
  Polynomial sq = base;
  unsigned k = e;
  while (k > 0) {
    if (k & 1u) acc = acc * sq;
    k >>= 1;
    if (k > 0) sq = sq * sq;
  }
  return acc;
}

Polynomial partial(const Polynomial& p, std::string_view var) {
  const std::size_t i = p.var_index(var);
  Polynomial out(p.vars());
  for (const auto& [a, c] : p.terms()) {
    if (a[i] == 0) continue;
    MultiIndex b = a;
    b[i] -= 1;
    out.set_coeff(std::move(b), c * static_cast<double>(a[i]));
  }
  return out;
}

double evaluate(const Polynomial& p, std::span<const double> point) {
  if (point.size() != p.vars().size())
    throw std::invalid_argument("evaluate: point dimension mismatch");
  double sum = 0.0;
  for (const auto& [a, c] : p.terms()) {
    double m = c;
    for (std::size_t i = 0; i < a.size(); ++i) {
      double x = point[i];
      for (unsigned e = 0; e < a[i]; ++e) m *= x;
    }
    sum += m;
  }
  return sum;
}

Polynomial lift(const Polynomial& p, std::vector<std::string> new_vars) {
  std::vector<std::size_t> where(p.vars().size());
  for (std::size_t i = 0; i < p.vars().size(); ++i) {
    auto it = std::find(new_vars.begin(), new_vars.end(), p.vars()[i]);
    if (it == new_vars.end())
      throw std::invalid_argument("lift: target variable list lacks '" + p.vars()[i] + "'");
    where[i] = static_cast<std::size_t>(it - new_vars.begin());
  }
  Polynomial out(std::move(new_vars));
  for (const auto& [a, c] : p.terms()) {
    MultiIndex b(out.vars().size(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) b[where[i]] = a[i];
    out.set_coeff(std::move(b), c);
  }
  return out;
}

Polynomial substitute(const Polynomial& p, const std::vector<std::string>& new_vars,
                      const std::map<std::string, Polynomial>& replacements) {
  std::vector<Polynomial> images;
  images.reserve(p.vars().size());
  for (const auto& v : p.vars()) {
    auto it = replacements.find(v);
    if (it != replacements.end()) {
      if (it->second.vars() != new_vars)
        throw std::invalid_argument("substitute: replacement for '" + v +
                                    "' not over the target variable list");
      images.push_back(it->second);
    } else {
      images.push_back(Polynomial::variable(new_vars, v));
    }
  }
  Polynomial out(new_vars);
  for (const auto& [a, c] : p.terms()) {
    Polynomial term = Polynomial::constant(new_vars, c);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i] > 0) term = term * pow(images[i], a[i]);
    out += term;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Cursor {
  std::string_view text;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  bool done() {
    skip_ws();
    return pos >= text.size();
  }
  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos + 1); }
};

bool starts_number(char c) { return (c >= '0' && c <= '9') || c == '.'; }
bool starts_ident(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

double parse_number(Cursor& cur) {
  cur.skip_ws();
  const char* begin = cur.text.data() + cur.pos;
  const char* end = cur.text.data() + cur.text.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr == begin) cur.fail("expected a numeric coefficient");
  cur.pos += static_cast<std::size_t>(ptr - begin);
  return value;
}

std::string parse_ident(Cursor& cur) {
  cur.skip_ws();
  std::size_t start = cur.pos;
  if (start >= cur.text.size() || !starts_ident(cur.text[start]))
    cur.fail("expected a variable name");
  std::size_t end = start + 1;
  while (end < cur.text.size()) {
    char c = cur.text[end];
    if (starts_ident(c) || (c >= '0' && c <= '9') || c == '_')
      ++end;
    else
      break;
  }
  std::string name(cur.text.substr(start, end - start));
  cur.pos = end;
  return name;
}

}  // namespace

Polynomial parse(std::string_view text, std::vector<std::string> vars) {
  Polynomial result(vars);
  Cursor cur{text};
  if (cur.done()) cur.fail("empty expression");

  bool first = true;
  while (!cur.done()) {
    double sign = 1.0;
    char c = cur.peek();
    if (c == '+' || c == '-') {
      sign = (c == '-') ? -1.0 : 1.0;
      ++cur.pos;
    } else if (!first) {
      cur.fail("expected '+' or '-' between terms");
    }
    cur.skip_ws();

    double coeff = sign;
    MultiIndex alpha(vars.size(), 0);
    bool saw_factor = false;

    if (starts_number(cur.peek())) {
      coeff = sign * parse_number(cur);
      saw_factor = true;
    }
    while (true) {
      cur.skip_ws();
      char n = cur.pos < cur.text.size() ? cur.text[cur.pos] : '\0';
      bool explicit_star = false;
      if (n == '*') {
        ++cur.pos;
        explicit_star = true;
        cur.skip_ws();
        n = cur.pos < cur.text.size() ? cur.text[cur.pos] : '\0';
      }
      if (!starts_ident(n)) {
        if (explicit_star) cur.fail("expected a variable after '*'");
        break;
      }
      std::size_t name_col = cur.pos + 1;
      std::string name = parse_ident(cur);
      std::size_t vi;
      try {
        vi = result.var_index(name);
      } catch (const std::invalid_argument&) {
        throw ParseError("unknown variable '" + name + "'", name_col);
      }
      unsigned e = 1;
      cur.skip_ws();
      if (cur.pos < cur.text.size() && cur.text[cur.pos] == '^') {
        ++cur.pos;
        cur.skip_ws();
        std::size_t start = cur.pos;
        unsigned long val = 0;
        while (cur.pos < cur.text.size() && std::isdigit(static_cast<unsigned char>(cur.text[cur.pos]))) {
          val = val * 10 + static_cast<unsigned long>(cur.text[cur.pos] - '0');
          ++cur.pos;
        }
        if (cur.pos == start) cur.fail("expected an integer exponent after '^'");
        e = static_cast<unsigned>(val);
      }
      alpha[vi] += e;
      saw_factor = true;
    }
    if (!saw_factor) cur.fail("expected a term");
    result += Polynomial::monomial(vars, std::move(alpha), coeff);
    first = false;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rendering

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string render(const Polynomial& p) {
  if (p.is_zero()) return "0";
  std::ostringstream out;
  bool first = true;
  for (const auto& [a, c] : p.terms()) {
    const bool neg = c < 0.0;
    const double mag = std::abs(c);
    if (first) {
      if (neg) out << '-';
    } else {
      out << (neg ? " - " : " + ");
    }
    const bool has_vars = total_degree(a) > 0;
    const bool unit = mag == 1.0;
    if (!has_vars || !unit) out << format_double(mag);
    bool need_star = !has_vars ? false : !unit;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == 0) continue;
      if (need_star) out << '*';
      out << p.vars()[i];
      if (a[i] > 1) out << '^' << a[i];
      need_star = true;
    }
    first = false;
  }
  return out.str();
}

}  // namespace winrisk
