#pragma once

#include <map>

#include "momentoc/compactify.hpp"
#include "momentoc/conic.hpp"

namespace momentoc {

/// Linear combination of moment slots.
using LinComb = std::vector<std::pair<size_t, double>>;

/// Monomial bookkeeping for one measure: the full graded-lex basis up to the
/// moment degree, and the subset that survives the substitution rules. Moment
/// variables are indexed by position in reduced_basis.
struct MomentIndexing {
  std::vector<std::string> vars;
  uint32_t degree = 0;  // moment degree bound (2d)
  std::vector<MultiIndex> full_basis;
  std::vector<MultiIndex> reduced_basis;
  std::map<MultiIndex, size_t, GradedLexLess> slot;
};

/// Rewrites monomials modulo the substitution rules (var^power -> rhs). Heads
/// are distinct variables with head-free right hand sides, so rewriting
/// terminates and the normal form is unique regardless of rule order.
class MomentReducer {
 public:
  MomentReducer(std::vector<std::string> vars, std::vector<SubstitutionRule> rules,
                uint32_t degree);

  const MomentIndexing& indexing() const { return idx_; }
  bool is_reduced(const MultiIndex& m) const;

  /// Canonical form of a monomial as a combination of reduced slots.
  const LinComb& reduce(const MultiIndex& m) const;

  /// Canonical form of a polynomial (merged, zero-free).
  LinComb reduce_poly(const Polynomial& p) const;

  /// Canonical form as a polynomial over the same variables.
  Polynomial reduce_to_poly(const Polynomial& p) const;

 private:
  MomentIndexing idx_;
  std::vector<SubstitutionRule> rules_;
  mutable std::map<MultiIndex, LinComb, GradedLexLess> memo_;
};

/// Moment relaxation of a compactified problem at a given order d, as a conic
/// program together with the metadata needed to read certificates and moments
/// back out of it.
struct Relaxation {
  int order = 1;
  CompactifiedProblem problem;
  MomentIndexing indexing;  // main measure
  size_t n_main = 0;        // slots of the main measure (prefix of z)

  bool free_initial = false, free_terminal = false;
  std::vector<MultiIndex> boundary_basis;  // state monomials up to 2d
  size_t mu0_offset = 0, muf_offset = 0;   // z offsets of boundary measures

  ConicProgram program;

  struct RowInfo {
    enum class Kind { Test, Lift, BoundaryMass };
    Kind kind = Kind::Test;
    MultiIndex alpha;  // test monomial (tau, states) for Test rows
    int lift = -1;     // equality constraint index for Lift rows
  };
  std::vector<RowInfo> row_info;

  struct BlockInfo {
    enum class Kind { Moment, Localizing, BoundaryMoment, BoundaryLocalizing, MassBound };
    Kind kind = Kind::Moment;
    int support_index = -1;   // which support row localizes
    int boundary = 0;         // 0 initial, 1 terminal
    uint32_t basis_degree = 0;
  };
  std::vector<BlockInfo> block_info;

  size_t slot_of(const MultiIndex& reduced_monomial) const;
};

/// Smallest order whose moment space covers all problem data.
int minimal_order(const CompactifiedProblem& C);

/// Builds the order-d relaxation. force_free_terminal overrides a fixed
/// terminal condition with a free one.
Relaxation build_relaxation(const CompactifiedProblem& C, int order,
                            bool force_free_terminal = false);

/// Sparse text dump of the assembled program.
std::string dump_program(const Relaxation& R);

}  // namespace momentoc
