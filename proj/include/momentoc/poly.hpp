#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace momentoc {

/// Exponent vector over a fixed, ordered variable list.
struct MultiIndex {
  std::vector<uint32_t> e;

  MultiIndex() = default;
  explicit MultiIndex(size_t nvars) : e(nvars, 0) {}
  MultiIndex(std::initializer_list<uint32_t> init) : e(init) {}

  size_t size() const { return e.size(); }
  uint32_t operator[](size_t i) const { return e[i]; }
  uint32_t& operator[](size_t i) { return e[i]; }
  uint32_t degree() const;
  MultiIndex plus(const MultiIndex& o) const;

  bool operator==(const MultiIndex& o) const { return e == o.e; }
};

/// Graded lexicographic order: lower total degree first; within a degree,
/// higher power on an earlier variable comes first (1, x, y, x^2, xy, y^2, ...).
struct GradedLexLess {
  bool operator()(const MultiIndex& a, const MultiIndex& b) const;
};

class PolyParseError : public std::runtime_error {
 public:
  PolyParseError(const std::string& msg, size_t pos);
  size_t position;
};

/// Sparse multivariate polynomial with double coefficients over a declared
/// ordered variable list. Terms are kept in graded-lex order and zero
/// coefficients are never stored, so iteration order is canonical.
class Polynomial {
 public:
  using TermMap = std::map<MultiIndex, double, GradedLexLess>;

  Polynomial() = default;
  explicit Polynomial(std::vector<std::string> vars) : vars_(std::move(vars)) {}

  static Polynomial constant(std::vector<std::string> vars, double c);
  static Polynomial variable(std::vector<std::string> vars, size_t index);

  const std::vector<std::string>& vars() const { return vars_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  uint32_t degree() const;
  /// Total degree counting only the given variables.
  uint32_t degree_in(const std::vector<size_t>& var_indices) const;
  double coefficient(const MultiIndex& m) const;
  double max_abs_coefficient() const;

  void add_term(const MultiIndex& m, double c);

  Polynomial operator+(const Polynomial& o) const;
  Polynomial operator-(const Polynomial& o) const;
  Polynomial operator-() const;
  Polynomial operator*(const Polynomial& o) const;
  Polynomial operator*(double s) const;
  Polynomial pow(uint32_t k) const;

  bool operator==(const Polynomial& o) const {
    return vars_ == o.vars_ && near_equal(o, 0.0);
  }
  /// Coefficient-wise comparison within tol.
  bool near_equal(const Polynomial& o, double tol) const;

  double evaluate(const std::vector<double>& point) const;
  Polynomial differentiate(size_t var_index) const;

  /// Maps variable i of this polynomial to images[i], a polynomial over a new
  /// variable list. All images must share that list.
  Polynomial compose(const std::vector<Polynomial>& images) const;

  std::string to_string() const;

 private:
  std::vector<std::string> vars_;
  TermMap terms_;

  void check_same_vars(const Polynomial& o) const;
};

inline Polynomial operator*(double s, const Polynomial& p) { return p * s; }

/// Parses the expression grammar
///   expr   := ('-')? term (('+'|'-') term)*
///   term   := factor ('*' factor)*
///   factor := ('-' factor) | base ('^' uint)?
///   base   := number | ident | '(' expr ')'
/// over the declared variables. Numbers accept decimal and rational literals
/// a/b. Unknown identifiers and ill-formed input raise PolyParseError with the
/// offending position.
Polynomial parse_polynomial(const std::string& text, const std::vector<std::string>& vars);

/// Multiplies each term by w0^(target - d) where d is the term's degree in
/// control_indices. Errors if any term has d > target.
Polynomial homogenize_control(const Polynomial& p, const std::vector<size_t>& control_indices,
                              size_t w0_index, uint32_t target);

/// All monomials over nvars variables with total degree <= max_degree,
/// in graded-lex order. Size is binomial(nvars + max_degree, nvars).
std::vector<MultiIndex> monomial_basis(size_t nvars, uint32_t max_degree);

uint64_t binomial(uint64_t n, uint64_t k);

}  // namespace momentoc
