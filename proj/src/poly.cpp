#include "momentoc/poly.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace momentoc {

uint32_t MultiIndex::degree() const {
  uint32_t d = 0;
  for (uint32_t x : e) d += x;
  return d;
}

MultiIndex MultiIndex::plus(const MultiIndex& o) const {
  MultiIndex r(*this);
  for (size_t i = 0; i < e.size(); ++i) r.e[i] += o.e[i];
  return r;
}

bool GradedLexLess::operator()(const MultiIndex& a, const MultiIndex& b) const {
  uint32_t da = a.degree(), db = b.degree();
  if (da != db) return da < db;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.e[i] != b.e[i]) return a.e[i] > b.e[i];
  }
  return false;
}

PolyParseError::PolyParseError(const std::string& msg, size_t pos)
    : std::runtime_error(msg + " (at position " + std::to_string(pos) + ")"), position(pos) {}

Polynomial Polynomial::constant(std::vector<std::string> vars, double c) {
  Polynomial p(std::move(vars));
  p.add_term(MultiIndex(p.vars_.size()), c);
  return p;
}

Polynomial Polynomial::variable(std::vector<std::string> vars, size_t index) {
  Polynomial p(std::move(vars));
  MultiIndex m(p.vars_.size());
  m[index] = 1;
  p.add_term(m, 1.0);
  return p;
}

uint32_t Polynomial::degree() const {
  uint32_t d = 0;
  for (const auto& [m, c] : terms_) d = std::max(d, m.degree());
  return d;
}

uint32_t Polynomial::degree_in(const std::vector<size_t>& var_indices) const {
  uint32_t d = 0;
  for (const auto& [m, c] : terms_) {
    uint32_t t = 0;
    for (size_t i : var_indices) t += m[i];
    d = std::max(d, t);
  }
  return d;
}

double Polynomial::coefficient(const MultiIndex& m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? 0.0 : it->second;
}

double Polynomial::max_abs_coefficient() const {
  double m = 0.0;
  for (const auto& [mi, c] : terms_) m = std::max(m, std::abs(c));
  return m;
}

void Polynomial::add_term(const MultiIndex& m, double c) {
  if (m.size() != vars_.size()) throw std::invalid_argument("multi-index arity mismatch");
  auto [it, inserted] = terms_.try_emplace(m, c);
  if (!inserted) it->second += c;
  if (it->second == 0.0) terms_.erase(it);
}

void Polynomial::check_same_vars(const Polynomial& o) const {
  if (vars_ != o.vars_) throw std::invalid_argument("polynomial variable lists differ");
}

Polynomial Polynomial::operator+(const Polynomial& o) const {
  check_same_vars(o);
  Polynomial r(*this);
  for (const auto& [m, c] : o.terms_) r.add_term(m, c);
  return r;
}

Polynomial Polynomial::operator-(const Polynomial& o) const {
  check_same_vars(o);
  Polynomial r(*this);
  for (const auto& [m, c] : o.terms_) r.add_term(m, -c);
  return r;
}

Polynomial Polynomial::operator-() const {
  Polynomial r(vars_);
  for (const auto& [m, c] : terms_) r.terms_.emplace(m, -c);
  return r;
}

Polynomial Polynomial::operator*(const Polynomial& o) const {
  check_same_vars(o);
  Polynomial r(vars_);
  for (const auto& [ma, ca] : terms_) {
    for (const auto& [mb, cb] : o.terms_) {
      r.add_term(ma.plus(mb), ca * cb);
    }
  }
  return r;
}

Polynomial Polynomial::operator*(double s) const {
  Polynomial r(vars_);
  if (s == 0.0) return r;
  for (const auto& [m, c] : terms_) r.terms_.emplace(m, c * s);
  return r;
}

Polynomial Polynomial::pow(uint32_t k) const {
  Polynomial r = Polynomial::constant(vars_, 1.0);
  for (uint32_t i = 0; i < k; ++i) r = r * (*this);
  return r;
}

bool Polynomial::near_equal(const Polynomial& o, double tol) const {
  if (vars_ != o.vars_) return false;
  Polynomial d = *this - o;
  return d.max_abs_coefficient() <= tol;
}

double Polynomial::evaluate(const std::vector<double>& point) const {
  if (point.size() != vars_.size()) throw std::invalid_argument("evaluation point arity mismatch");
  double total = 0.0;
  for (const auto& [m, c] : terms_) {
    double v = c;
    for (size_t i = 0; i < m.size(); ++i) {
      uint32_t e = m[i];
      if (e == 0) continue;
      double base = point[i], acc = 1.0;
      while (e) {  // fast exponentiation keeps evaluation deterministic and cheap
        if (e & 1) acc *= base;
        base *= base;
        e >>= 1;
      }
      v *= acc;
    }
    total += v;
  }
  return total;
}

Polynomial Polynomial::differentiate(size_t var_index) const {
  Polynomial r(vars_);
  for (const auto& [m, c] : terms_) {
    if (m[var_index] == 0) continue;
    MultiIndex d(m);
    d[var_index] -= 1;
    r.add_term(d, c * m[var_index]);
  }
  return r;
}

Polynomial Polynomial::compose(const std::vector<Polynomial>& images) const {
  if (images.size() != vars_.size()) throw std::invalid_argument("compose needs one image per variable");
  const std::vector<std::string>& new_vars = images.empty() ? vars_ : images[0].vars();
  Polynomial r(new_vars);
  for (const auto& [m, c] : terms_) {
    Polynomial term = Polynomial::constant(new_vars, c);
    for (size_t i = 0; i < m.size(); ++i) {
      if (m[i] > 0) term = term * images[i].pow(m[i]);
    }
    r = r + term;
  }
  return r;
}

std::string Polynomial::to_string() const {
  if (terms_.empty()) return "0";
  std::ostringstream out;
  bool first = true;
  char buf[64];
  for (const auto& [m, c] : terms_) {
    double mag = std::abs(c);
    if (first) {
      if (c < 0) out << "-";
      first = false;
    } else {
      out << (c < 0 ? " - " : " + ");
    }
    bool has_var = m.degree() > 0;
    std::snprintf(buf, sizeof buf, "%.17g", mag);
    if (!has_var || mag != 1.0) {
      out << buf;
      if (has_var) out << "*";
    }
    bool first_var = true;
    for (size_t i = 0; i < m.size(); ++i) {
      if (m[i] == 0) continue;
      if (!first_var) out << "*";
      first_var = false;
      out << vars_[i];
      if (m[i] > 1) out << "^" << m[i];
    }
  }
  return out.str();
}

namespace {

struct Parser {
  const std::string& text;
  const std::vector<std::string>& vars;
  size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  bool eof() {
    skip_ws();
    return pos >= text.size();
  }
  char peek() {
    skip_ws();
    return pos < text.size() ? text[pos] : '\0';
  }
  bool consume(char c) {
    if (peek() == c) {
      ++pos;
      return true;
    }
    return false;
  }

  double parse_number_literal() {
    skip_ws();
    size_t start = pos;
    const char* begin = text.c_str() + pos;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) throw PolyParseError("expected number", pos);
    pos += static_cast<size_t>(end - begin);
    // Rational literal a/b: '/' immediately followed by a number.
    if (pos < text.size() && text[pos] == '/') {
      size_t save = pos;
      ++pos;
      const char* dbegin = text.c_str() + pos;
      char* dend = nullptr;
      double den = std::strtod(dbegin, &dend);
      if (dend == dbegin) {
        pos = save;  // not a rational literal; leave '/' for the caller to reject
        return v;
      }
      if (den == 0.0) throw PolyParseError("rational literal with zero denominator", save);
      pos += static_cast<size_t>(dend - dbegin);
      v /= den;
    }
    (void)start;
    return v;
  }

  uint32_t parse_uint() {
    skip_ws();
    if (pos >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos])))
      throw PolyParseError("expected nonnegative integer exponent", pos);
    uint64_t v = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      v = v * 10 + static_cast<uint64_t>(text[pos] - '0');
      if (v > 1000) throw PolyParseError("exponent too large", pos);
      ++pos;
    }
    return static_cast<uint32_t>(v);
  }

  Polynomial parse_base() {
    skip_ws();
    if (pos >= text.size()) throw PolyParseError("unexpected end of expression", pos);
    char c = text[pos];
    if (c == '(') {
      ++pos;
      Polynomial inner = parse_expr();
      if (!consume(')')) throw PolyParseError("expected ')'", pos);
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      return Polynomial::constant(vars, parse_number_literal());
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos;
      while (pos < text.size() &&
             (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
        ++pos;
      std::string name = text.substr(start, pos - start);
      for (size_t i = 0; i < vars.size(); ++i) {
        if (vars[i] == name) return Polynomial::variable(vars, i);
      }
      throw PolyParseError("unknown variable '" + name + "'", start);
    }
    throw PolyParseError(std::string("unexpected character '") + c + "'", pos);
  }

  Polynomial parse_factor() {
    if (consume('-')) return -parse_factor();
    Polynomial base = parse_base();
    if (consume('^')) {
      uint32_t k = parse_uint();
      return base.pow(k);
    }
    return base;
  }

  Polynomial parse_term() {
    Polynomial p = parse_factor();
    while (consume('*')) p = p * parse_factor();
    return p;
  }

  Polynomial parse_expr() {
    bool negate = consume('-');
    Polynomial p = parse_term();
    if (negate) p = -p;
    while (true) {
      if (consume('+')) {
        p = p + parse_term();
      } else if (consume('-')) {
        p = p - parse_term();
      } else {
        break;
      }
    }
    return p;
  }
};

}  // namespace

Polynomial parse_polynomial(const std::string& text, const std::vector<std::string>& vars) {
  Parser parser{text, vars};
  Polynomial p = parser.parse_expr();
  if (!parser.eof())
    throw PolyParseError("trailing characters after expression", parser.pos);
  return p;
}

Polynomial homogenize_control(const Polynomial& p, const std::vector<size_t>& control_indices,
                              size_t w0_index, uint32_t target) {
  Polynomial r(p.vars());
  for (const auto& [m, c] : p.terms()) {
    uint32_t cdeg = 0;
    for (size_t i : control_indices) cdeg += m[i];
    if (cdeg > target)
      throw std::invalid_argument("term control degree " + std::to_string(cdeg) +
                                  " exceeds homogenization target " + std::to_string(target));
    MultiIndex h(m);
    h[w0_index] += target - cdeg;
    r.add_term(h, c);
  }
  return r;
}

std::vector<MultiIndex> monomial_basis(size_t nvars, uint32_t max_degree) {
  std::vector<MultiIndex> out;
  out.reserve(binomial(nvars + max_degree, nvars));
  MultiIndex current(nvars);
  // Enumerate by total degree, then recursively in lex position.
  for (uint32_t d = 0; d <= max_degree; ++d) {
    // Generate all exponent vectors with sum d, first variable highest first.
    std::vector<MultiIndex> level;
    MultiIndex m(nvars);
    auto rec = [&](auto&& self, size_t var, uint32_t remaining) -> void {
      if (var + 1 == nvars) {
        m[var] = remaining;
        level.push_back(m);
        return;
      }
      for (int32_t e = static_cast<int32_t>(remaining); e >= 0; --e) {
        m[var] = static_cast<uint32_t>(e);
        self(self, var + 1, remaining - static_cast<uint32_t>(e));
      }
      m[var] = 0;
    };
    if (nvars == 0) {
      if (d == 0) out.push_back(MultiIndex());
      continue;
    }
    rec(rec, 0, d);
    for (auto& mi : level) out.push_back(std::move(mi));
  }
  (void)current;
  return out;
}

uint64_t binomial(uint64_t n, uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  uint64_t r = 1;
  for (uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
  }
  return r;
}

}  // namespace momentoc
