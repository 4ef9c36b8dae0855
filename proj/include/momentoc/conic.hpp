#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace momentoc {

/// Linear conic program over variables z:
///   min c'z   s.t.   (equality rows)  sum_j a_j z_j = rhs   per row,
///                    (cone blocks)    A_k(z) + C_k in K_k,
/// where K_k is either the PSD cone of dim x dim symmetric matrices or the
/// nonnegative orthant of length dim. Block maps are sparse lists of
/// upper-triangle entries; symmetric mirroring is implicit for PSD blocks.
struct ConeBlock {
  enum class Type { PSD, NonNeg };
  struct Entry {
    int r = 0, c = 0;  // r <= c for PSD; c == 0 for NonNeg
    size_t var = 0;
    double coeff = 0.0;
  };
  Type type = Type::PSD;
  int dim = 0;
  std::vector<Entry> entries;
  std::vector<Entry> constants;  // entries with var ignored: C_k
};

struct EqualityRow {
  std::vector<std::pair<size_t, double>> terms;
  double rhs = 0.0;
};

struct ConicProgram {
  size_t n_vars = 0;
  std::vector<double> cost;  // c
  std::vector<EqualityRow> rows;
  std::vector<ConeBlock> blocks;

  std::vector<double> init_hint;      // optional starting z
  std::optional<size_t> mass_index;   // z slot holding the measure mass
};

enum class SolveStatus { Optimal, Unbounded, Infeasible, IterationLimit, Breakdown };

struct IterateRecord {
  int iter = 0;
  double primal_obj = 0, dual_obj = 0, gap = 0;
  double primal_infeas = 0, dual_infeas = 0;
  double step_primal = 0, step_dual = 0;
  double mass = 0;  // z[mass_index] when available
};

struct SolveOptions {
  double tol = 1e-8;
  int max_iter = 300;
  bool trace = false;   // keep per-iteration records
  double init_primal = 1.0, init_dual = 1.0;  // starting cone scaling
};

struct SolveResult {
  SolveStatus status = SolveStatus::Breakdown;
  std::vector<double> z;                    // primal variables
  std::vector<double> y;                    // equality multipliers
  std::vector<Eigen::MatrixXd> cone_duals;  // X_k, one per block
  std::vector<Eigen::MatrixXd> cone_slacks; // S_k = A_k(z) + C_k
  double primal_obj = 0, dual_obj = 0, gap = 0;
  double primal_infeas = 0, dual_infeas = 0;
  int iterations = 0;
  std::vector<IterateRecord> trace;
  std::string message;
};

SolveResult solve_conic(const ConicProgram& prog, const SolveOptions& opts = {});

/// Heuristic divergence check on the iterate trace: the recorded mass grew by
/// a factor of ten while the objective did not increase, which is how measure
/// programs without a mass bound and with vanishing optimal weight look.
bool detect_unbounded(const std::vector<IterateRecord>& trace);

}  // namespace momentoc
