#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "momentoc/poly.hpp"
#include "momentoc/problem.hpp"

namespace momentoc {

/// How the control space is compactified. Sphere keeps the weight variable w0
/// with the relation w0^p + sum w_i^p = 1 (p even, or odd with nonnegative
/// controls). Simplex is the p = 1 nonnegative case with w0 = 1 - sum w_i
/// eliminated. Abs handles signed controls at p = 1 through auxiliary
/// magnitude variables r_i with r_i^2 = w_i^2. Sqrt substitutes u_i = v_i^2
/// for nonnegative controls and compactifies v with exponent 2p.
enum class CompactMode { Sphere, Simplex, Abs, Sqrt };

struct ScalingRecord {
  double t0 = 0.0, h = 1.0;         // t = t0 + h * tau
  std::vector<double> state_scale;  // y_i = s_i * eta_i
};

/// Rewrite rule head var^power -> rhs, valid on the support set. Heads are
/// distinct variables and the right hand sides are head-free, so repeated
/// rewriting terminates with a canonical form.
struct SubstitutionRule {
  size_t var = 0;
  uint32_t power = 1;
  Polynomial rhs;
};

struct ControlPoint {
  bool infinite = false;
  std::vector<double> u;  // value, or a unit direction when infinite
};

/// The problem transported to the compact measure space. Variables are
/// (tau, y1..yn, [w0], w1..wm, [r1..rm], [q1..qk]) where tau is the unit-time
/// variable, y_i the scaled states, w the compactified controls, r_i the
/// control magnitudes in Abs mode, and q_k the lifted rational cost terms.
/// Every integrand is divided by 1 + |u|_p^p, which makes it a polynomial in
/// these variables; time_weight is the image of that reciprocal itself.
struct CompactifiedProblem {
  ControlProblem source;
  CompactMode mode = CompactMode::Sphere;
  int n = 0, m = 0, p = 1;
  int target = 1;  // homogenization degree in the w variables

  std::vector<std::string> vars;
  std::optional<size_t> w0_index;
  std::vector<size_t> w_index;         // w1..wm
  std::vector<size_t> abs_index;       // r1..rm (Abs mode)
  std::vector<size_t> rational_index;  // q variables

  ScalingRecord scaling;

  Polynomial time_weight;            // image of 1/(1+|u|_p^p)
  std::vector<Polynomial> dynamics;  // images of (h/s_i) f_i / (1+|u|_p^p)
  Polynomial cost;                   // image of the whole scaled integrand
  Polynomial mass_integrand;         // image of |u|_p^p/(1+|u|_p^p)

  std::vector<Polynomial> support;            // g >= 0 rows over vars
  std::vector<SubstitutionRule> rules;        // moment-reducing equalities
  std::vector<Polynomial> equalities;         // h = 0 rows (rational lifts)
  std::vector<Polynomial> rational_num, rational_den;  // q_k * den = num data

  std::vector<double> eta0, etaf;      // scaled fixed endpoints (empty if not fixed)
  std::vector<double> eta0_moments;    // scaled moments for a distributional start

  size_t tau_index() const { return 0; }
  size_t state_index(int i) const { return 1 + i; }

  /// Values of the (w0?, w, r?) block for a finite control value.
  std::vector<double> w_block(const std::vector<double>& u) const;

  /// Full measure-space point for an admissible (t, y, u).
  std::vector<double> lift_point(double t, const std::vector<double>& y,
                                 const std::vector<double>& u) const;

  /// Control value encoded by a measure-space point. Points with the
  /// compactification denominator below 1e-9 are reported as infinite with a
  /// unit direction.
  ControlPoint control_value(const std::vector<double>& point) const;

  /// Deterministic sample of points in the support set, mixing moderate
  /// controls, heavy-tailed magnitudes, and points on the infinity face.
  std::vector<std::vector<double>> sample_support(int count, uint64_t seed) const;
};

CompactifiedProblem compactify(const ControlProblem& P);

}  // namespace momentoc
