#include "momentoc/conic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "support/barrier_reference.hpp"

using namespace momentoc;

namespace {

ConeBlock nonneg_identity(size_t first_var, int dim, double constant = 0.0) {
  ConeBlock blk;
  blk.type = ConeBlock::Type::NonNeg;
  blk.dim = dim;
  for (int i = 0; i < dim; i++) blk.entries.push_back({i, 0, first_var + (size_t)i, 1.0});
  if (constant != 0.0)
    for (int i = 0; i < dim; i++) blk.constants.push_back({i, 0, 0, constant});
  return blk;
}

// Random bounded feasible program: cones are feasible at a known z0 by
// construction and a box keeps the feasible set compact.
ConicProgram random_program(uint64_t seed, Eigen::VectorXd& z0_out) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_int_distribution<int> ndist(3, 7), ddist(2, 4), rdist(1, 3);

  ConicProgram prog;
  size_t n = (size_t)ndist(rng);
  prog.n_vars = n;
  Eigen::VectorXd z0(n);
  for (size_t j = 0; j < n; j++) z0((Eigen::Index)j) = 0.5 * N(rng);

  int n_psd = 1 + (int)(rng() % 2);
  for (int k = 0; k < n_psd; k++) {
    int d = ddist(rng);
    ConeBlock blk;
    blk.type = ConeBlock::Type::PSD;
    blk.dim = d;
    for (size_t j = 0; j < n; j++) {
      int picks = 1 + (int)(rng() % 3);
      for (int t = 0; t < picks; t++) {
        int r = (int)(rng() % (uint64_t)d), c = (int)(rng() % (uint64_t)d);
        if (r > c) std::swap(r, c);
        blk.entries.push_back({r, c, j, N(rng)});
      }
    }
    // C := M - A(z0) with M safely positive definite, so z0 is interior.
    Eigen::MatrixXd R(d, d);
    for (int i = 0; i < d; i++)
      for (int jc = 0; jc < d; jc++) R(i, jc) = N(rng);
    Eigen::MatrixXd M = R * R.transpose() + 0.8 * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd Az = Eigen::MatrixXd::Zero(d, d);
    for (const auto& e : blk.entries) {
      Az(e.r, e.c) += e.coeff * z0((Eigen::Index)e.var);
      if (e.r != e.c) Az(e.c, e.r) += e.coeff * z0((Eigen::Index)e.var);
    }
    Eigen::MatrixXd C = M - Az;
    for (int i = 0; i < d; i++)
      for (int jc = i; jc < d; jc++) blk.constants.push_back({i, jc, 0, C(i, jc)});
    prog.blocks.push_back(std::move(blk));
  }

  // Box |z_j| <= 10 keeps everything bounded.
  {
    ConeBlock blk;
    blk.type = ConeBlock::Type::NonNeg;
    blk.dim = (int)(2 * n);
    for (size_t j = 0; j < n; j++) {
      blk.entries.push_back({(int)j, 0, j, 1.0});
      blk.entries.push_back({(int)(n + j), 0, j, -1.0});
      blk.constants.push_back({(int)j, 0, 0, 10.0});
      blk.constants.push_back({(int)(n + j), 0, 0, 10.0});
    }
    prog.blocks.push_back(std::move(blk));
  }

  int m = std::min(rdist(rng), (int)n - 2);
  for (int r = 0; r < m; r++) {
    EqualityRow row;
    double rhs = 0.0;
    for (size_t j = 0; j < n; j++) {
      double a = N(rng);
      row.terms.push_back({j, a});
      rhs += a * z0((Eigen::Index)j);
    }
    row.rhs = rhs;
    prog.rows.push_back(std::move(row));
  }

  prog.cost.assign(n, 0.0);
  for (size_t j = 0; j < n; j++) prog.cost[j] = N(rng);
  z0_out = z0;
  return prog;
}

}  // namespace

TEST(TwoByTwo, KnownOptimum) {
  // min z with [[1, z],[z, 1]] psd: optimum at z = -1.
  ConicProgram prog;
  prog.n_vars = 1;
  prog.cost = {1.0};
  ConeBlock blk;
  blk.type = ConeBlock::Type::PSD;
  blk.dim = 2;
  blk.entries.push_back({0, 1, 0, 1.0});
  blk.constants.push_back({0, 0, 0, 1.0});
  blk.constants.push_back({1, 1, 0, 1.0});
  prog.blocks.push_back(blk);

  auto res = solve_conic(prog);
  ASSERT_EQ(res.status, SolveStatus::Optimal) << res.message;
  EXPECT_NEAR(res.z[0], -1.0, 1e-6);
  EXPECT_NEAR(res.primal_obj, res.dual_obj, 1e-6);
}

TEST(Lp, SimplexVertex) {
  ConicProgram prog;
  prog.n_vars = 5;
  prog.cost = {0.9, -0.3, 0.4, -1.7, 0.2};
  prog.blocks.push_back(nonneg_identity(0, 5));
  EqualityRow row;
  for (size_t j = 0; j < 5; j++) row.terms.push_back({j, 1.0});
  row.rhs = 1.0;
  prog.rows.push_back(row);

  auto res = solve_conic(prog);
  ASSERT_EQ(res.status, SolveStatus::Optimal) << res.message;
  EXPECT_NEAR(res.primal_obj, -1.7, 1e-7);
  EXPECT_NEAR(res.z[3], 1.0, 1e-6);
}

TEST(NoEqualities, BoxedMinimum) {
  // min z0 + z1 with z_i >= 1: exercises the m = 0 path.
  ConicProgram prog;
  prog.n_vars = 2;
  prog.cost = {1.0, 1.0};
  prog.blocks.push_back(nonneg_identity(0, 2, -1.0));
  auto res = solve_conic(prog);
  ASSERT_EQ(res.status, SolveStatus::Optimal) << res.message;
  EXPECT_NEAR(res.primal_obj, 2.0, 1e-6);
}

TEST(Random, AgreesWithBarrierReference) {
  int solved = 0;
  for (uint64_t seed = 1; seed <= 20; seed++) {
    Eigen::VectorXd z0;
    ConicProgram prog = random_program(seed, z0);
    auto ref = momentoc::testing::barrier_solve(prog, z0, 1e-9);
    ASSERT_TRUE(ref.ok) << "seed " << seed << ": " << ref.message;
    // Degenerate random instances bottom out near 1e-8; 1e-7 is safely above
    // that floor and far below the comparison tolerance.
    SolveOptions opts;
    opts.tol = 1e-7;
    auto res = solve_conic(prog, opts);
    ASSERT_EQ(res.status, SolveStatus::Optimal) << "seed " << seed << ": " << res.message;
    EXPECT_LE(res.primal_infeas, 1e-6) << "seed " << seed;
    EXPECT_LE(res.dual_infeas, 1e-6) << "seed " << seed;
    EXPECT_NEAR(res.primal_obj, ref.obj, 1e-5 * (1.0 + std::abs(ref.obj)))
        << "seed " << seed;
    solved++;
  }
  EXPECT_EQ(solved, 20);
}

TEST(Determinism, BitIdenticalAcrossRuns) {
  Eigen::VectorXd z0;
  ConicProgram prog = random_program(42, z0);
  auto a = solve_conic(prog);
  auto b = solve_conic(prog);
  ASSERT_EQ(a.status, b.status);
  ASSERT_EQ(a.iterations, b.iterations);
  ASSERT_EQ(a.z.size(), b.z.size());
  EXPECT_EQ(std::memcmp(a.z.data(), b.z.data(), a.z.size() * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(a.y.data(), b.y.data(), a.y.size() * sizeof(double)), 0);
}

TEST(WeakDuality, HoldsOnFeasibleIterates) {
  Eigen::VectorXd z0;
  ConicProgram prog = random_program(7, z0);
  SolveOptions opts;
  opts.trace = true;
  opts.tol = 1e-7;  // same numerical floor as the random agreement suite
  auto res = solve_conic(prog, opts);
  ASSERT_EQ(res.status, SolveStatus::Optimal);
  int checked = 0;
  for (const auto& rec : res.trace) {
    if (rec.primal_infeas > 1e-7 || rec.dual_infeas > 1e-7) continue;
    EXPECT_GE(rec.primal_obj, rec.dual_obj - 1e-6 * (1.0 + std::abs(rec.primal_obj)));
    checked++;
  }
  EXPECT_GT(checked, 0);
}

TEST(Unbounded, MassDivergenceIsDetected) {
  // min -z0 with only z0 >= 0: primal unbounded below.
  ConicProgram prog;
  prog.n_vars = 1;
  prog.cost = {-1.0};
  prog.blocks.push_back(nonneg_identity(0, 1));
  prog.mass_index = 0;
  SolveOptions opts;
  opts.trace = true;
  auto res = solve_conic(prog, opts);
  EXPECT_EQ(res.status, SolveStatus::Unbounded) << res.message;
  EXPECT_TRUE(detect_unbounded(res.trace));
}

TEST(Infeasible, ContradictoryRowsDoNotReportOptimal) {
  ConicProgram prog;
  prog.n_vars = 1;
  prog.cost = {1.0};
  prog.blocks.push_back(nonneg_identity(0, 1));
  EqualityRow r0, r1;
  r0.terms.push_back({0, 1.0});
  r0.rhs = 0.0;
  r1.terms.push_back({0, 1.0});
  r1.rhs = 1.0;
  prog.rows.push_back(r0);
  prog.rows.push_back(r1);
  auto res = solve_conic(prog);
  EXPECT_NE(res.status, SolveStatus::Optimal);
}

TEST(Trace, RecordsMassColumn) {
  ConicProgram prog;
  prog.n_vars = 2;
  prog.cost = {1.0, 0.0};
  prog.blocks.push_back(nonneg_identity(0, 2, -0.5));
  prog.mass_index = 1;
  SolveOptions opts;
  opts.trace = true;
  auto res = solve_conic(prog, opts);
  ASSERT_EQ(res.status, SolveStatus::Optimal);
  ASSERT_FALSE(res.trace.empty());
  for (size_t i = 1; i < res.trace.size(); i++)
    EXPECT_EQ(res.trace[i].iter, res.trace[i - 1].iter + 1);
}
