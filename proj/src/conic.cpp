#include "momentoc/conic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace momentoc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One cone block prepared for iteration. Diagonal blocks (the nonnegative
// orthant) store S, X and friends as dim x 1 columns; semidefinite blocks
// store dense symmetric matrices. Entries are regrouped per variable with
// ascending variable ids so Schur assembly fills the upper triangle only.
struct Blk {
  bool diag = false;
  int d = 0;
  struct E {
    int r, c;
    double a;
  };
  std::vector<size_t> vars;
  std::vector<int> ptr;  // vars.size()+1 offsets into es
  std::vector<E> es;
  std::vector<std::vector<std::pair<int, double>>> by_row;  // diag: row -> (local var, coeff)
  MatrixXd C;
  double c_norm = 0.0;

  MatrixXd S, X, Rc;
  Eigen::LLT<MatrixXd> Slt, Xlt;
  MatrixXd dSa, dXa, dS, dX;

  // Nesterov-Todd scaling of the current iterate, built from the Cholesky
  // factors X = Lx Lx', S = Ls Ls' and the SVD Lx' Ls = U Sig V'.  The
  // congruence G = Ls^-T V Sig^1/2 maps both variables onto the diagonal
  // scaled point, G' S G = G^-1 X G^-T = Sig, and W^-1 = G G' gives the NT
  // metric with W X W = S.
  MatrixXd Winv, G, Ginv;
  VectorXd sig;
};

void prepare_block(Blk& b, const ConeBlock& src, size_t n_vars) {
  b.diag = src.type == ConeBlock::Type::NonNeg;
  b.d = src.dim;
  std::map<size_t, std::vector<Blk::E>> grouped;
  for (const auto& e : src.entries) {
    if (e.var >= n_vars) throw std::runtime_error("cone entry references unknown variable");
    grouped[e.var].push_back({e.r, b.diag ? 0 : e.c, e.coeff});
  }
  b.ptr.push_back(0);
  for (auto& [var, list] : grouped) {
    b.vars.push_back(var);
    for (const auto& e : list) b.es.push_back(e);
    b.ptr.push_back((int)b.es.size());
  }
  b.C = MatrixXd::Zero(b.d, b.diag ? 1 : b.d);
  for (const auto& e : src.constants) {
    if (b.diag) {
      b.C(e.r, 0) += e.coeff;
    } else {
      b.C(e.r, e.c) += e.coeff;
      if (e.r != e.c) b.C(e.c, e.r) += e.coeff;
    }
  }
  b.c_norm = b.C.norm();
  if (b.diag) {
    b.by_row.resize((size_t)b.d);
    for (size_t a = 0; a < b.vars.size(); a++)
      for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++)
        b.by_row[(size_t)b.es[(size_t)t].r].push_back({(int)a, b.es[(size_t)t].a});
  }
}

// A_k(z) + C_k.
MatrixXd block_affine(const Blk& b, const VectorXd& z) {
  MatrixXd M = b.C;
  for (size_t a = 0; a < b.vars.size(); a++) {
    double v = z((Eigen::Index)b.vars[a]);
    if (v == 0.0) continue;
    for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++) {
      const auto& e = b.es[(size_t)t];
      if (b.diag) {
        M(e.r, 0) += e.a * v;
      } else {
        M(e.r, e.c) += e.a * v;
        if (e.r != e.c) M(e.c, e.r) += e.a * v;
      }
    }
  }
  return M;
}

// out[j] += sum over entries of <A_j, M>, M symmetric (or diagonal column).
void block_gather(const Blk& b, const MatrixXd& M, VectorXd& out, double sign) {
  for (size_t a = 0; a < b.vars.size(); a++) {
    double acc = 0.0;
    for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++) {
      const auto& e = b.es[(size_t)t];
      if (b.diag)
        acc += e.a * M(e.r, 0);
      else
        acc += e.r == e.c ? e.a * M(e.r, e.c) : e.a * (M(e.r, e.c) + M(e.c, e.r));
    }
    out((Eigen::Index)b.vars[a]) += sign * acc;
  }
}

double block_inner(const Blk& b, const MatrixXd& A, const MatrixXd& B) {
  if (b.diag) return A.col(0).dot(B.col(0));
  return (A.array() * B.array()).sum();
}

// Largest step alpha with P + alpha dP staying in the cone, capped at cap.
double step_length(const Blk& b, const MatrixXd& P, const Eigen::LLT<MatrixXd>& Plt,
                   const MatrixXd& dP, double cap) {
  if (b.diag) {
    double alpha = cap;
    for (int i = 0; i < b.d; i++)
      if (dP(i, 0) < 0.0) alpha = std::min(alpha, -P(i, 0) / dP(i, 0));
    return alpha;
  }
  MatrixXd M = Plt.matrixL().solve(dP);
  M = Plt.matrixL().solve(M.transpose()).transpose();
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()),
                                             Eigen::EigenvaluesOnly);
  double lmin = es.eigenvalues().minCoeff();
  if (lmin >= -1e-14) return cap;
  return std::min(cap, -1.0 / lmin);
}

// W^-1 M W^-1 for dense blocks, elementwise X.*M./S for diagonal ones (the
// diagonal scaling x/s equals the NT weight there).
MatrixXd nt_conj(const Blk& b, const MatrixXd& M) {
  if (b.diag) return (b.X.col(0).array() * M.col(0).array() / b.S.col(0).array()).matrix();
  MatrixXd T = b.Winv * M * b.Winv;
  return 0.5 * (T + T.transpose());
}

// The scaled-operator products below run in extended precision.  Near
// complementarity the sandwich Winv M Winv amplifies intermediates by the
// condition of the scaling while the result stays O(1), and that cancellation
// is exactly what limits the achievable dual residual.  Carrying the product
// through long double before rounding the result removes the floor.
using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// nt_conj(A_lin(v)) for one block, evaluated in long double.
MatL nt_affine_hi(const Blk& b, const VecL& v) {
  if (b.diag) {
    MatL M = MatL::Zero(b.d, 1);
    for (size_t a = 0; a < b.vars.size(); a++) {
      long double w = v((Eigen::Index)b.vars[a]);
      if (w == 0.0L) continue;
      for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++)
        M(b.es[(size_t)t].r, 0) += (long double)b.es[(size_t)t].a * w;
    }
    for (int i = 0; i < b.d; i++)
      M(i, 0) *= (long double)b.X(i, 0) / (long double)b.S(i, 0);
    return M;
  }
  MatL Av = MatL::Zero(b.d, b.d);
  for (size_t a = 0; a < b.vars.size(); a++) {
    long double w = v((Eigen::Index)b.vars[a]);
    if (w == 0.0L) continue;
    for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++) {
      const auto& e = b.es[(size_t)t];
      Av(e.r, e.c) += (long double)e.a * w;
      if (e.r != e.c) Av(e.c, e.r) += (long double)e.a * w;
    }
  }
  MatL Wl = b.Winv.cast<long double>();
  MatL T = Wl * Av * Wl;
  return 0.5L * (T + T.transpose()).eval();
}

void gather_hi(const Blk& b, const MatL& M, VecL& out) {
  for (size_t a = 0; a < b.vars.size(); a++) {
    long double acc = 0.0L;
    for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++) {
      const auto& e = b.es[(size_t)t];
      if (b.diag)
        acc += (long double)e.a * M(e.r, 0);
      else
        acc += e.r == e.c ? (long double)e.a * M(e.r, e.c)
                          : (long double)e.a * (M(e.r, e.c) + M(e.c, e.r));
    }
    out((Eigen::Index)b.vars[a]) += acc;
  }
}

// Recompute the NT scaling for a dense block from the current Cholesky
// factors.  Going through the SVD of Lx' Ls keeps full relative accuracy even
// when X and S are nearly singular at complementarity.
void nt_scale(Blk& b) {
  if (b.diag) return;
  MatrixXd Lx = b.Xlt.matrixL();
  MatrixXd Ls = b.Slt.matrixL();
  Eigen::JacobiSVD<MatrixXd> svd(Lx.transpose() * Ls,
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
  b.sig = svd.singularValues().cwiseMax(1e-300);
  VectorXd rt = b.sig.cwiseSqrt();
  b.G = b.Slt.matrixU().solve(svd.matrixV() * rt.asDiagonal());
  b.Ginv = rt.cwiseInverse().asDiagonal() * svd.matrixV().transpose() * Ls.transpose();
  b.Winv = b.G * b.G.transpose();
}

struct Work {
  size_t n = 0;
  Eigen::Index m = 0;
  VectorXd c, b;
  std::vector<std::vector<std::pair<size_t, double>>> rows;
  MatrixXd At;
  std::vector<Blk> blocks;
  double nu = 0.0;
  double b_norm = 0.0, c_norm = 0.0;
};

VectorXd apply_rows(const Work& W, const VectorXd& z) {
  VectorXd out = VectorXd::Zero(W.m);
  for (Eigen::Index r = 0; r < W.m; r++) {
    double acc = 0.0;
    for (const auto& [j, a] : W.rows[(size_t)r]) acc += a * z((Eigen::Index)j);
    out(r) = acc;
  }
  return out;
}

// Schur matrix H_{jl} = sum_k tr(A_kj Winv A_kl Winv); upper triangle, mirrored.
void form_schur(Work& W, MatrixXd& H) {
  H.setZero();
  for (auto& b : W.blocks) {
    if (b.diag) {
      VectorXd w = b.X.col(0).array() / b.S.col(0).array();
      for (int i = 0; i < b.d; i++) {
        const auto& touch = b.by_row[(size_t)i];
        for (size_t p = 0; p < touch.size(); p++)
          for (size_t q = p; q < touch.size(); q++) {
            size_t j = b.vars[(size_t)touch[p].first], l = b.vars[(size_t)touch[q].first];
            double v = touch[p].second * touch[q].second * w(i);
            if (j <= l)
              H((Eigen::Index)j, (Eigen::Index)l) += v;
            else
              H((Eigen::Index)l, (Eigen::Index)j) += v;
          }
      }
      continue;
    }
    MatrixXd B = MatrixXd::Zero(b.d, b.d);
    MatrixXd U(b.d, b.d);
    std::vector<int> touched;
    for (size_t a = 0; a < b.vars.size(); a++) {
      touched.clear();
      for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++) {
        const auto& e = b.es[(size_t)t];
        B.row(e.r) += e.a * b.Winv.row(e.c);
        touched.push_back(e.r);
        if (e.r != e.c) {
          B.row(e.c) += e.a * b.Winv.row(e.r);
          touched.push_back(e.c);
        }
      }
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      MatrixXd Bp((Eigen::Index)touched.size(), b.d);
      MatrixXd Sp(b.d, (Eigen::Index)touched.size());
      for (size_t i = 0; i < touched.size(); i++) {
        Bp.row((Eigen::Index)i) = B.row(touched[i]);
        Sp.col((Eigen::Index)i) = b.Winv.col(touched[i]);
      }
      U.noalias() = Sp * Bp;
      size_t j = b.vars[a];
      for (size_t bb = a; bb < b.vars.size(); bb++) {
        double acc = 0.0;
        for (int t = b.ptr[bb]; t < b.ptr[bb + 1]; t++) {
          const auto& e = b.es[(size_t)t];
          acc += e.r == e.c ? e.a * U(e.r, e.c) : e.a * (U(e.r, e.c) + U(e.c, e.r));
        }
        H((Eigen::Index)j, (Eigen::Index)b.vars[bb]) += acc;
      }
      for (int r : touched) B.row(r).setZero();
    }
  }
  H.triangularView<Eigen::StrictlyLower>() = H.transpose().triangularView<Eigen::StrictlyLower>();
}

// Extended precision Schur formation for the endgame.  Once the scaled point
// degenerates the double-precision matrix no longer represents the small
// eigenvalues of the operator at all, and no factorization trick recovers
// them; forming and factoring in long double keeps the refinement loop
// contracting all the way down to the target tolerance.
void form_schur_hi(Work& W, MatL& H) {
  H.setZero();
  for (auto& b : W.blocks) {
    if (b.diag) {
      for (int i = 0; i < b.d; i++) {
        long double w = (long double)b.X(i, 0) / (long double)b.S(i, 0);
        const auto& touch = b.by_row[(size_t)i];
        for (size_t p = 0; p < touch.size(); p++)
          for (size_t q = p; q < touch.size(); q++) {
            size_t j = b.vars[(size_t)touch[p].first], l = b.vars[(size_t)touch[q].first];
            long double v = (long double)touch[p].second * (long double)touch[q].second * w;
            if (j <= l)
              H((Eigen::Index)j, (Eigen::Index)l) += v;
            else
              H((Eigen::Index)l, (Eigen::Index)j) += v;
          }
      }
      continue;
    }
    MatL Wl = b.Winv.cast<long double>();
    MatL M(b.d, b.d);
    for (size_t a = 0; a < b.vars.size(); a++) {
      M.setZero();
      for (int t = b.ptr[a]; t < b.ptr[a + 1]; t++) {
        const auto& e = b.es[(size_t)t];
        M.noalias() += (long double)e.a * (Wl.col(e.r) * Wl.row(e.c));
        if (e.r != e.c) M.noalias() += (long double)e.a * (Wl.col(e.c) * Wl.row(e.r));
      }
      size_t j = b.vars[a];
      for (size_t bb = a; bb < b.vars.size(); bb++) {
        long double acc = 0.0L;
        for (int t = b.ptr[bb]; t < b.ptr[bb + 1]; t++) {
          const auto& e = b.es[(size_t)t];
          acc += e.r == e.c ? (long double)e.a * M(e.r, e.c)
                            : (long double)e.a * (M(e.r, e.c) + M(e.c, e.r));
        }
        H((Eigen::Index)j, (Eigen::Index)b.vars[bb]) += acc;
      }
    }
  }
  H.triangularView<Eigen::StrictlyLower>() = H.transpose().triangularView<Eigen::StrictlyLower>();
}

}  // namespace

bool detect_unbounded(const std::vector<IterateRecord>& trace) {
  if (trace.size() < 3) return false;
  double m0 = std::max(std::abs(trace.front().mass), 1e-6);
  double m1 = trace.back().mass;
  bool grew = m1 >= 10.0 * m0;
  bool obj_flat = trace.back().primal_obj <=
                  trace.front().primal_obj + 1e-6 * (1.0 + std::abs(trace.front().primal_obj));
  return grew && obj_flat;
}

SolveResult solve_conic(const ConicProgram& prog, const SolveOptions& opts) {
  SolveResult res;
  Work W;
  W.n = prog.n_vars;
  W.m = (Eigen::Index)prog.rows.size();
  W.c = VectorXd::Zero((Eigen::Index)W.n);
  for (size_t j = 0; j < prog.cost.size() && j < W.n; j++) W.c((Eigen::Index)j) = prog.cost[j];
  W.b = VectorXd::Zero(W.m);
  W.rows.resize((size_t)W.m);
  for (Eigen::Index r = 0; r < W.m; r++) {
    W.b(r) = prog.rows[(size_t)r].rhs;
    W.rows[(size_t)r] = prog.rows[(size_t)r].terms;
  }
  W.At = MatrixXd::Zero((Eigen::Index)W.n, W.m);
  for (Eigen::Index r = 0; r < W.m; r++)
    for (const auto& [j, a] : W.rows[(size_t)r]) W.At((Eigen::Index)j, r) += a;
  W.blocks.reserve(prog.blocks.size());
  for (const auto& src : prog.blocks) {
    W.blocks.emplace_back();
    try {
      prepare_block(W.blocks.back(), src, W.n);
    } catch (const std::exception& ex) {
      res.status = SolveStatus::Breakdown;
      res.message = ex.what();
      return res;
    }
    W.nu += W.blocks.back().d;
  }
  if (W.blocks.empty()) {
    res.status = SolveStatus::Breakdown;
    res.message = "program has no cone blocks";
    return res;
  }
  W.b_norm = W.b.norm();
  W.c_norm = W.c.norm();

  VectorXd z = VectorXd::Zero((Eigen::Index)W.n);
  if (prog.init_hint.size() == W.n)
    for (size_t j = 0; j < W.n; j++) z((Eigen::Index)j) = prog.init_hint[j];
  VectorXd y = VectorXd::Zero(W.m);

  double xi = opts.init_dual * (1.0 + W.c.lpNorm<Eigen::Infinity>());
  for (auto& b : W.blocks) {
    MatrixXd S0 = block_affine(b, z);
    if (b.diag) {
      double floor = opts.init_primal * (1.0 + b.c_norm / std::sqrt((double)b.d));
      b.S = S0.cwiseMax(floor);
      b.X = MatrixXd::Constant(b.d, 1, xi);
    } else {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(S0, Eigen::EigenvaluesOnly);
      double lmin = es.eigenvalues().minCoeff();
      double shift = std::max(0.0, -lmin) + opts.init_primal * (1.0 + b.c_norm / b.d);
      b.S = S0 + shift * MatrixXd::Identity(b.d, b.d);
      b.X = xi * MatrixXd::Identity(b.d, b.d);
    }
  }

  const Eigen::Index n = (Eigen::Index)W.n;
  const double z_guard = 1e10 * (1.0 + z.lpNorm<Eigen::Infinity>());

  // The equality rows are handled in null-space form.  A is fixed, so one QR
  // factorization of A' up front yields an orthonormal kernel basis F and a
  // particular-solution map; every Newton step then satisfies A dz = r_p by
  // construction, and ill-conditioning of the Schur matrix can no longer
  // leak into the equality residual.
  Eigen::Index arank = 0;
  MatrixXd F, Q1, R11;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic> Pcol;
  if (W.m > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> aqr(W.At);
    arank = aqr.rank();
    MatrixXd Qfull = aqr.householderQ() * MatrixXd::Identity(n, n);
    Q1 = Qfull.leftCols(arank);
    F = Qfull.rightCols(n - arank);
    R11 = aqr.matrixQR().topLeftCorner(arank, arank).triangularView<Eigen::Upper>();
    Pcol = aqr.colsPermutation();
  } else {
    F = MatrixXd::Identity(n, n);
  }
  const Eigen::Index nf = F.cols();

  MatrixXd H(n, n), Hr(nf, nf), Hs(nf, nf);
  VectorXd hd(nf);
  Eigen::LDLT<MatrixXd> Hlt;
  // Extended precision copies, materialized the first time the conditioning
  // trigger fires and kept for the rest of the solve.
  MatL Hl, Hrl, Hsl, Fl;
  VecL hdl;
  Eigen::LDLT<MatL> Hltl;
  bool use_hi = false;

  // A zp = rhs for consistent rows; rank-deficient rows are dropped.
  auto particular = [&](const VectorXd& rhs) {
    if (arank == 0) return VectorXd(VectorXd::Zero(n));
    VectorXd s = Pcol.transpose() * rhs;
    VectorXd w = R11.transpose().triangularView<Eigen::Lower>().solve(s.head(arank));
    return VectorXd(Q1 * w);
  };
  // Least squares multiplier update: A' dy ~ g.
  auto multipliers = [&](const VectorXd& g) {
    VectorXd u = VectorXd::Zero(W.m);
    if (arank > 0)
      u.head(arank) = R11.triangularView<Eigen::Upper>().solve(Q1.transpose() * g);
    return VectorXd(Pcol * u);
  };

  auto record_state = [&](int iter, double pobj, double dobj, double gap, double pinf,
                          double dinf, double ap, double ad) {
    IterateRecord rec;
    rec.iter = iter;
    rec.primal_obj = pobj;
    rec.dual_obj = dobj;
    rec.gap = gap;
    rec.primal_infeas = pinf;
    rec.dual_infeas = dinf;
    rec.step_primal = ap;
    rec.step_dual = ad;
    rec.mass = z((Eigen::Index)prog.mass_index.value_or(0));
    res.trace.push_back(rec);
  };

  double last_ap = 0.0, last_ad = 0.0;
  res.status = SolveStatus::IterationLimit;

  // Snapshot of the best iterate seen, by worst-of residual metric. Degenerate
  // programs can deteriorate after their numerical floor; the best iterate is
  // what gets returned.
  double best_metric = std::numeric_limits<double>::infinity();
  int best_iter = -1;
  VectorXd zb = z, yb = y;
  std::vector<MatrixXd> Sb, Xb;

  int iter = 0;
  for (; iter < opts.max_iter; iter++) {
    VectorXd r_p = W.b - apply_rows(W, z);
    VectorXd astar_x = VectorXd::Zero(n);
    for (auto& b : W.blocks) block_gather(b, b.X, astar_x, 1.0);
    VectorXd R_d = W.c - W.At * y - astar_x;

    double pobj = W.c.dot(z);
    double dobj = W.b.dot(y);
    double comp = 0.0, rc_norm = 0.0, c_scale = 0.0;
    for (auto& b : W.blocks) {
      dobj -= block_inner(b, b.X, b.C);
      comp += block_inner(b, b.X, b.S);
      b.Rc = block_affine(b, z) - b.S;
      rc_norm += b.Rc.squaredNorm();
      c_scale += b.C.squaredNorm();
    }
    double mu = comp / W.nu;
    double pinf = std::max(r_p.norm() / (1.0 + W.b_norm),
                           std::sqrt(rc_norm) / (1.0 + std::sqrt(c_scale)));
    double dinf = R_d.norm() / (1.0 + W.c_norm);
    double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));

    record_state(iter, pobj, dobj, gap, pinf, dinf, last_ap, last_ad);

    double metric = std::max({pinf, dinf, gap});
    if (metric < best_metric) {
      best_metric = metric;
      best_iter = iter;
      zb = z;
      yb = y;
      Sb.clear();
      Xb.clear();
      for (auto& b : W.blocks) {
        Sb.push_back(b.S);
        Xb.push_back(b.X);
      }
    }

    if (pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol) {
      res.status = SolveStatus::Optimal;
      break;
    }
    if (best_iter >= 0 && iter - best_iter >= 25) {
      res.message = "stalled at the numerical precision floor";
      break;
    }
    // Once close to the floor, a large relapse means the directions have gone
    // numerically rank deficient; further iterations only drift.
    if (best_metric < 1e4 * opts.tol && metric > 1e4 * best_metric) {
      res.message = "stalled at the numerical precision floor";
      break;
    }
    if (z.lpNorm<Eigen::Infinity>() > z_guard) {
      res.status = detect_unbounded(res.trace) ? SolveStatus::Unbounded : SolveStatus::Breakdown;
      res.message = "iterates diverged";
      break;
    }
    if (mu < 1e-2 * opts.tol * opts.tol && pinf > std::max(1e2 * opts.tol, 1e-5)) {
      res.status = SolveStatus::Infeasible;
      res.message = "complementarity vanished with primal residual stuck";
      break;
    }

    bool factor_ok = true;
    for (auto& b : W.blocks) {
      if (b.diag) {
        if ((b.S.col(0).array() <= 0.0).any() || (b.X.col(0).array() <= 0.0).any())
          factor_ok = false;
        continue;
      }
      b.Slt.compute(b.S);
      b.Xlt.compute(b.X);
      if (b.Slt.info() != Eigen::Success || b.Xlt.info() != Eigen::Success) {
        factor_ok = false;
        break;
      }
      nt_scale(b);
    }
    if (!factor_ok) {
      res.status = SolveStatus::Breakdown;
      res.message = "cone iterate lost definiteness";
      break;
    }

    // Moment programs spread the spectrum of the reduced matrix over many
    // orders of magnitude.  While the spread is moderate a Jacobi-equilibrated
    // double factorization is enough; past that, double formation rounds the
    // small eigenvalues away entirely, so the endgame forms and factors the
    // reduced system in long double instead.
    if (!use_hi) {
      form_schur(W, H);
      Hr.noalias() = F.transpose() * H * F;
      hd = Hr.diagonal().cwiseMax(1e-300).cwiseSqrt();
      use_hi = nf > 0 && hd.maxCoeff() > 1e5 * hd.minCoeff();
    }
    if (use_hi) {
      if (Fl.size() == 0) {
        Fl = F.cast<long double>();
        Hl.resize(n, n);
      }
      form_schur_hi(W, Hl);
      Hrl.noalias() = Fl.transpose() * Hl * Fl;
      hdl = Hrl.diagonal().cwiseMax((long double)1e-300).cwiseSqrt();
      Hsl = hdl.cwiseInverse().asDiagonal() * Hrl * hdl.cwiseInverse().asDiagonal();
      long double ridge = 1e-17L;
      bool chol_ok = false;
      for (int attempt = 0; attempt < 7; attempt++) {
        Hltl.compute(Hsl + ridge * MatL::Identity(nf, nf));
        if (Hltl.info() == Eigen::Success && (Hltl.vectorD().array() > 0.0L).all()) {
          chol_ok = true;
          break;
        }
        ridge *= 100.0L;
      }
      if (!chol_ok) {
        res.status = SolveStatus::Breakdown;
        res.message = "schur complement is not positive definite";
        break;
      }
    } else {
      Hs = hd.cwiseInverse().asDiagonal() * Hr * hd.cwiseInverse().asDiagonal();
      double ridge = 1e-14;
      bool chol_ok = false;
      for (int attempt = 0; attempt < 7; attempt++) {
        Hlt.compute(Hs + ridge * MatrixXd::Identity(nf, nf));
        if (Hlt.info() == Eigen::Success && (Hlt.vectorD().array() > 0.0).all()) {
          chol_ok = true;
          break;
        }
        ridge *= 100.0;
      }
      if (!chol_ok) {
        res.status = SolveStatus::Breakdown;
        res.message = "schur complement is not positive definite";
        break;
      }
    }
    // The factorizations above are preconditioners; residuals and multipliers
    // are measured against the block operator itself, in extended precision,
    // so refinement drives the residual that actually enters the next dual
    // iterate.
    auto hexact = [&](const VectorXd& v) {
      VecL vl = v.cast<long double>();
      VecL out = VecL::Zero((Eigen::Index)n);
      for (auto& b : W.blocks) gather_hi(b, nt_affine_hi(b, vl), out);
      return VectorXd(out.cast<double>());
    };
    auto rsolve = [&](const VectorXd& r) {
      if (use_hi) {
        VecL rs = r.cast<long double>().cwiseQuotient(hdl);
        VecL xs = Hltl.solve(rs);
        xs += Hltl.solve(rs - Hsl * xs);
        return VectorXd(xs.cwiseQuotient(hdl).cast<double>());
      }
      VectorXd rs = r.cwiseQuotient(hd);
      VectorXd xs = Hlt.solve(rs);
      xs += Hlt.solve(rs - Hs * xs);
      return VectorXd(xs.cwiseQuotient(hd));
    };
    auto solve_kkt = [&](const VectorXd& q1, const VectorXd& q2, VectorXd& oz, VectorXd& oy) {
      VectorXd zp = W.m > 0 ? particular(q2) : VectorXd(VectorXd::Zero(n));
      VectorXd dv = rsolve(F.transpose() * (q1 - hexact(zp)));
      oz = zp + F * dv;
      if (W.m > 0)
        oy = multipliers(hexact(oz) - q1);
      else
        oy.resize(0);
    };

    auto newton = [&](const std::vector<MatrixXd>& Mk, VectorXd& dz, VectorXd& dy) {
      VectorXd r1 = -R_d;
      for (size_t k = 0; k < W.blocks.size(); k++) block_gather(W.blocks[k], Mk[k], r1, 1.0);
      solve_kkt(r1, r_p, dz, dy);
      // Refine against the full saddle system, keeping a pass only when it
      // measurably improves the residual.
      auto resid = [&](const VectorXd& az, const VectorXd& ay, VectorXd& e1, VectorXd& e2) {
        e1 = r1 - hexact(az);
        if (W.m > 0) {
          e1 += W.At * ay;
          e2 = r_p - apply_rows(W, az);
        } else
          e2.resize(0);
        return std::sqrt(e1.squaredNorm() + e2.squaredNorm());
      };
      VectorXd e1, e2;
      double err = resid(dz, dy, e1, e2);
      for (int pass = 0; pass < 5 && std::isfinite(err) && err > 0.0; pass++) {
        VectorXd cz, cy;
        solve_kkt(e1, e2, cz, cy);
        VectorXd nz = dz + cz;
        VectorXd ny = W.m > 0 ? VectorXd(dy + cy) : dy;
        VectorXd f1, f2;
        double nerr = resid(nz, ny, f1, f2);
        if (!std::isfinite(nerr) || nerr >= 0.5 * err) break;
        dz.swap(nz);
        dy.swap(ny);
        e1.swap(f1);
        e2.swap(f2);
        err = nerr;
      }
    };

    // Predictor: pure Newton toward complementarity zero.
    std::vector<MatrixXd> Mk(W.blocks.size());
    for (size_t k = 0; k < W.blocks.size(); k++) {
      auto& b = W.blocks[k];
      Mk[k] = -b.X - nt_conj(b, b.Rc);
    }
    VectorXd dza, dya;
    newton(Mk, dza, dya);
    if (!dza.allFinite()) {
      res.status = SolveStatus::Breakdown;
      res.message = "search direction is not finite";
      break;
    }
    double a_pa = 1.0, a_da = 1.0;
    for (auto& b : W.blocks) {
      MatrixXd Adz = block_affine(b, dza) - b.C;
      b.dSa = Adz + b.Rc;
      b.dXa = -b.X - nt_conj(b, b.dSa);
      a_pa = std::min(a_pa, step_length(b, b.S, b.Slt, b.dSa, 1.0));
      a_da = std::min(a_da, step_length(b, b.X, b.Xlt, b.dXa, 1.0));
    }
    double comp_aff = 0.0;
    for (auto& b : W.blocks)
      comp_aff += block_inner(b, b.X + a_da * b.dXa, b.S + a_pa * b.dSa);
    double mu_aff = std::max(comp_aff / W.nu, 1e-18);
    double sigma = std::clamp(std::pow(mu_aff / mu, 3.0), 1e-8, 1.0);

    // Corrector with the Mehrotra second order term, linearized in the NT
    // scaled space where the complementarity target is Lam^2 = sigma mu I.
    for (size_t k = 0; k < W.blocks.size(); k++) {
      auto& b = W.blocks[k];
      if (b.diag) {
        auto s = b.S.col(0).array(), x = b.X.col(0).array();
        auto dxa = b.dXa.col(0).array(), dsa = b.dSa.col(0).array();
        Mk[k] = (((sigma * mu - x * s - dxa * dsa) / s) - x * b.Rc.col(0).array() / s).matrix();
        continue;
      }
      MatrixXd Dxa = b.Ginv * b.dXa * b.Ginv.transpose();
      MatrixXd Dsa = b.G.transpose() * b.dSa * b.G;
      MatrixXd Rm = -0.5 * (Dxa * Dsa + Dsa * Dxa);
      Rm.diagonal().array() += sigma * mu - b.sig.array().square();
      for (int i = 0; i < b.d; i++)
        for (int j = 0; j < b.d; j++) Rm(i, j) *= 2.0 / (b.sig(i) + b.sig(j));
      Mk[k] = b.G * Rm * b.G.transpose() - nt_conj(b, b.Rc);
      Mk[k] = 0.5 * (Mk[k] + Mk[k].transpose()).eval();
    }
    VectorXd dz, dy;
    newton(Mk, dz, dy);
    if (!dz.allFinite()) {
      res.status = SolveStatus::Breakdown;
      res.message = "search direction is not finite";
      break;
    }
    double a_p = 1.0, a_d = 1.0;
    VecL dzl = dz.cast<long double>();
    for (size_t k = 0; k < W.blocks.size(); k++) {
      auto& b = W.blocks[k];
      MatrixXd Adz = block_affine(b, dz) - b.C;
      b.dS = Adz + b.Rc;
      b.dX = Mk[k] - nt_affine_hi(b, dzl).cast<double>();
      a_p = std::min(a_p, step_length(b, b.S, b.Slt, b.dS, 1.0));
      a_d = std::min(a_d, step_length(b, b.X, b.Xlt, b.dX, 1.0));
    }
    const double tau = 0.99;
    a_p = std::min(1.0, tau * a_p);
    a_d = std::min(1.0, tau * a_d);

    // Retreat if rounding pushed an iterate out of the cone interior.
    bool interior = false;
    for (int attempt = 0; attempt < 40 && !interior; attempt++) {
      interior = true;
      for (auto& b : W.blocks) {
        if (b.diag) {
          if (((b.S + a_p * b.dS).col(0).array() <= 0.0).any() ||
              ((b.X + a_d * b.dX).col(0).array() <= 0.0).any())
            interior = false;
        } else {
          if (Eigen::LLT<MatrixXd>(b.S + a_p * b.dS).info() != Eigen::Success ||
              Eigen::LLT<MatrixXd>(b.X + a_d * b.dX).info() != Eigen::Success)
            interior = false;
        }
        if (!interior) break;
      }
      if (!interior) {
        a_p *= 0.8;
        a_d *= 0.8;
      }
    }
    if (!interior) {
      res.status = SolveStatus::Breakdown;
      res.message = "could not keep iterates inside the cones";
      break;
    }

    z += a_p * dz;
    y += a_d * dy;
    for (auto& b : W.blocks) {
      b.S += a_p * b.dS;
      b.X += a_d * b.dX;
    }
    last_ap = a_p;
    last_ad = a_d;
  }
  res.iterations = iter;

  // Hand back the best iterate, not necessarily the last one.
  if (best_iter >= 0 && !Sb.empty()) {
    z = zb;
    y = yb;
    for (size_t k = 0; k < W.blocks.size(); k++) {
      W.blocks[k].S = Sb[k];
      W.blocks[k].X = Xb[k];
    }
    if (res.status != SolveStatus::Optimal && res.status != SolveStatus::Unbounded &&
        res.status != SolveStatus::Infeasible && best_metric <= opts.tol)
      res.status = SolveStatus::Optimal;
  }

  res.z.assign((size_t)W.n, 0.0);
  for (size_t j = 0; j < W.n; j++) res.z[j] = z((Eigen::Index)j);
  res.y.assign((size_t)W.m, 0.0);
  for (Eigen::Index r = 0; r < W.m; r++) res.y[(size_t)r] = y(r);
  for (auto& b : W.blocks) {
    res.cone_duals.push_back(b.X);
    res.cone_slacks.push_back(b.S);
  }
  res.primal_obj = W.c.dot(z);
  res.dual_obj = W.b.dot(y);
  for (auto& b : W.blocks) res.dual_obj -= block_inner(b, b.X, b.C);
  {
    VectorXd r_p = W.b - apply_rows(W, z);
    VectorXd astar_x = VectorXd::Zero(n);
    for (auto& b : W.blocks) block_gather(b, b.X, astar_x, 1.0);
    VectorXd R_d = W.c - W.At * y - astar_x;
    double rc_norm = 0.0, c_scale = 0.0;
    for (auto& b : W.blocks) {
      rc_norm += (block_affine(b, z) - b.S).squaredNorm();
      c_scale += b.C.squaredNorm();
    }
    res.primal_infeas = std::max(r_p.norm() / (1.0 + W.b_norm),
                                 std::sqrt(rc_norm) / (1.0 + std::sqrt(c_scale)));
    res.dual_infeas = R_d.norm() / (1.0 + W.c_norm);
    res.gap = std::abs(res.primal_obj - res.dual_obj) /
              (1.0 + std::abs(res.primal_obj) + std::abs(res.dual_obj));
  }
  if (res.status == SolveStatus::IterationLimit && detect_unbounded(res.trace))
    res.status = SolveStatus::Unbounded;
  if (!opts.trace) res.trace.clear();
  if (res.message.empty()) {
    switch (res.status) {
      case SolveStatus::Optimal: res.message = "optimal"; break;
      case SolveStatus::Unbounded: res.message = "primal appears unbounded"; break;
      case SolveStatus::Infeasible: res.message = "primal appears infeasible"; break;
      case SolveStatus::IterationLimit: res.message = "iteration limit reached"; break;
      case SolveStatus::Breakdown: res.message = "numerical breakdown"; break;
    }
  }
  return res;
}

}  // namespace momentoc
