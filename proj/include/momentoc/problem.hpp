#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "momentoc/poly.hpp"

namespace momentoc {

struct ProblemFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BoundaryCondition {
  enum class Kind { Fixed, Free, Moments };
  Kind kind = Kind::Fixed;
  std::vector<double> point;    // Fixed: one value per state
  std::vector<double> moments;  // Moments: raw moments 1, <y>, <y^2>, ... (scalar state only)
};

enum class ControlLift { None, Sqrt, Abs };

struct ControlSpec {
  std::vector<int> sign;          // per control: 0 unrestricted, +1 means u_i >= 0
  std::vector<ControlLift> lift;  // per control
  std::optional<double> mass_bound;
};

/// A cost contribution numerator/denominator with the denominator depending on
/// the controls only. Assumed positive on the admissible control range.
struct RationalCostTerm {
  Polynomial numerator;
  Polynomial denominator;
};

/// Optimal control problem data as declared by the user: minimize the integral
/// of the lagrangian subject to polynomial dynamics, a basic semialgebraic
/// state set, boundary conditions, and a control growth exponent p that fixes
/// the admissible control space L^p.
///
/// Variable list convention: (t, y1..yn, u1..um, abs_ui... for abs-lifted
/// controls, in control order). All polynomial fields share this list.
struct ControlProblem {
  std::string name;
  int n = 0;  // states
  int m = 0;  // controls
  int p_exponent = 1;
  double t0 = 0.0, tf = 1.0;

  Polynomial lagrangian;
  std::vector<RationalCostTerm> rational_cost;
  std::vector<Polynomial> dynamics;  // one per state

  std::vector<Polynomial> state_set;  // g_i(y) >= 0 over (y1..yn)
  std::vector<std::optional<std::array<double, 2>>> state_box;  // declared per-state bounds

  BoundaryCondition initial, terminal;
  ControlSpec control;

  bool coercive_attested = false;

  std::vector<std::string> full_vars() const;   // (t, y, u, abs syms)
  std::vector<std::string> state_vars() const;  // (y1..yn)
  std::vector<size_t> control_indices() const;  // u and abs-symbol positions
  double horizon() const { return tf - t0; }

  /// Largest |y_i| bound implied by boxes and any ball-form constraint
  /// r - sum y_i^2; zero when nothing bounds the coordinate.
  std::vector<double> state_bounds() const;

  std::string serialize() const;
  uint64_t hash() const;
  bool operator==(const ControlProblem& o) const { return serialize() == o.serialize(); }
};

/// Parses the sectioned problem format ([meta], [dynamics], [cost],
/// [state_set], [boundary], [control], [options]) and validates the result:
/// growth bound (control degree of the data at most p), dimensional
/// consistency, t0 < tf, and presence of a state ball bound. A ball constraint
/// radius - sum y_i^2 is auto-inserted from declared box bounds when no
/// ball-form constraint exists, with radius 1.5 x the largest coordinate
/// bound. Fails when neither is available.
ControlProblem load_problem_text(const std::string& text);
ControlProblem load_problem_file(const std::string& path);

/// Built-in example problems: impulse, smeared, rendezvous, weierstrass,
/// weierstrass-regularized. The regularized variant accepts the coercivity
/// weight epsilon (default 1e-2).
ControlProblem builtin_problem(const std::string& name, double epsilon = 1e-2);

/// Resolves "builtin:<name>" to a builtin and anything else as a file path.
ControlProblem resolve_problem(const std::string& spec);

bool is_builtin_problem(const std::string& name);
std::vector<std::string> builtin_problem_names();

}  // namespace momentoc
