#include "momentoc/compactify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace momentoc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ProblemFormatError(msg); }

Polynomial monomial(const std::vector<std::string>& vars, const MultiIndex& mi, double c) {
  Polynomial p(vars);
  p.add_term(mi, c);
  return p;
}

}  // namespace

namespace detail {

// Shared shape data while building the compactified problem.
struct Builder {
  const ControlProblem& P;
  CompactifiedProblem C;
  std::vector<std::string> interim;  // tau, y1..yn, u1..um, abs syms
  std::vector<size_t> u_pos, abs_pos;

  explicit Builder(const ControlProblem& prob) : P(prob) {
    C.source = prob;
    C.n = prob.n;
    C.m = prob.m;
    C.p = prob.p_exponent;
    pick_mode();
    name_variables();
  }

  void pick_mode() {
    bool any_sqrt = false, all_sqrt = true, any_abs = false, all_abs = true;
    for (auto lf : P.control.lift) {
      any_sqrt |= lf == ControlLift::Sqrt;
      all_sqrt &= lf == ControlLift::Sqrt;
      any_abs |= lf == ControlLift::Abs;
      all_abs &= lf == ControlLift::Abs;
    }
    if (any_sqrt) {
      if (!all_sqrt) fail("sqrt lift must cover all controls");
      C.mode = CompactMode::Sqrt;
      C.target = 2 * C.p;
      return;
    }
    if (any_abs) {
      if (!all_abs || C.p != 1) fail("abs lift requires p = 1 on all controls");
      C.mode = CompactMode::Abs;
      C.target = 1;
      return;
    }
    if (C.p % 2 == 0) {
      C.mode = CompactMode::Sphere;
      C.target = C.p;
      return;
    }
    // Odd p without lifts: problem validation guarantees u >= 0 here.
    if (C.p == 1) {
      C.mode = CompactMode::Simplex;
      C.target = 1;
    } else {
      C.mode = CompactMode::Sphere;
      C.target = C.p;
    }
  }

  bool has_w0() const { return C.mode == CompactMode::Sphere || C.mode == CompactMode::Sqrt; }

  void name_variables() {
    auto& v = C.vars;
    v.push_back("tau");
    for (int i = 1; i <= C.n; i++) v.push_back("y" + std::to_string(i));
    if (has_w0()) {
      C.w0_index = v.size();
      v.push_back("w0");
    }
    for (int i = 1; i <= C.m; i++) {
      C.w_index.push_back(v.size());
      v.push_back("w" + std::to_string(i));
    }
    if (C.mode == CompactMode::Abs) {
      for (int i = 1; i <= C.m; i++) {
        C.abs_index.push_back(v.size());
        v.push_back("r" + std::to_string(i));
      }
    }
    for (size_t k = 1; k <= P.rational_cost.size(); k++) {
      C.rational_index.push_back(v.size());
      v.push_back("q" + std::to_string(k));
    }

    interim.push_back("tau");
    auto fv = P.full_vars();
    for (size_t i = 1; i < fv.size(); i++) interim.push_back(fv[i]);
    for (int j = 0; j < C.m; j++) u_pos.push_back(1 + C.n + j);
    size_t next = 1 + C.n + C.m;
    for (int j = 0; j < C.m; j++)
      if (P.control.lift[j] == ControlLift::Abs) abs_pos.push_back(next++);
  }

  // t = t0 + h tau, y_i = s_i eta_i applied to a polynomial over the problem's
  // full variable list; the result lives over the interim list.
  Polynomial rescale(const Polynomial& src) const {
    std::vector<Polynomial> images;
    Polynomial t_img = Polynomial::constant(interim, C.scaling.t0) +
                       Polynomial::variable(interim, 0) * C.scaling.h;
    images.push_back(t_img);
    for (int i = 0; i < C.n; i++)
      images.push_back(Polynomial::variable(interim, 1 + i) * C.scaling.state_scale[i]);
    for (size_t j = 1 + C.n; j < interim.size(); j++)
      images.push_back(Polynomial::variable(interim, j));
    return src.compose(images);
  }

  // 1 - sum w_i or 1 - sum r_i, the eliminated weight in Simplex/Abs modes.
  Polynomial eliminated_weight() const {
    Polynomial s = Polynomial::constant(C.vars, 1.0);
    if (C.mode == CompactMode::Simplex)
      for (size_t wi : C.w_index) s = s - Polynomial::variable(C.vars, wi);
    else
      for (size_t ri : C.abs_index) s = s - Polynomial::variable(C.vars, ri);
    return s;
  }

  // Image of a polynomial over the interim variables under the control
  // compactification, homogenized to control degree T: each monomial
  // tau^a y^b u^g r^d maps to tau^a y^b times the mode's weight monomial, with
  // the spare degree T - |g| - |d| absorbed by w0 (or the eliminated weight).
  Polynomial cimage(const Polynomial& q, uint32_t T) const {
    Polynomial out(C.vars);
    Polynomial elim =
        (C.mode == CompactMode::Simplex || C.mode == CompactMode::Abs)
            ? eliminated_weight()
            : Polynomial();
    for (const auto& [mi, c] : q.terms()) {
      uint32_t cd = 0;
      for (size_t j : u_pos) cd += mi[j];
      for (size_t j : abs_pos) cd += mi[j];
      if (cd > T) fail("control degree exceeds homogenization target");
      MultiIndex out_mi(C.vars.size());
      out_mi[0] = mi[0];
      for (int i = 0; i < C.n; i++) out_mi[1 + i] = mi[1 + i];
      uint32_t spare = T - cd;
      switch (C.mode) {
        case CompactMode::Sphere:
          for (int j = 0; j < C.m; j++) out_mi[C.w_index[j]] = mi[u_pos[j]];
          out_mi[*C.w0_index] = spare;
          out.add_term(out_mi, c);
          break;
        case CompactMode::Sqrt:
          for (int j = 0; j < C.m; j++) out_mi[C.w_index[j]] = 2 * mi[u_pos[j]];
          out_mi[*C.w0_index] = 2 * spare;
          out.add_term(out_mi, c);
          break;
        case CompactMode::Simplex: {
          for (int j = 0; j < C.m; j++) out_mi[C.w_index[j]] = mi[u_pos[j]];
          out = out + monomial(C.vars, out_mi, c) * elim.pow(spare);
          break;
        }
        case CompactMode::Abs: {
          for (int j = 0; j < C.m; j++) out_mi[C.w_index[j]] = mi[u_pos[j]];
          for (int j = 0; j < C.m; j++) out_mi[C.abs_index[j]] = mi[abs_pos[j]];
          out = out + monomial(C.vars, out_mi, c) * elim.pow(spare);
          break;
        }
      }
    }
    return out;
  }

  // |u|_p^p over the interim list; r_i stands in for |u_i| in Abs mode.
  Polynomial control_mass() const {
    Polynomial s = Polynomial::constant(interim, 0.0);
    if (C.mode == CompactMode::Abs) {
      for (size_t j : abs_pos) s = s + Polynomial::variable(interim, j);
    } else {
      for (size_t j : u_pos) s = s + Polynomial::variable(interim, j).pow(C.p);
    }
    return s;
  }

  uint32_t control_degree(const Polynomial& q) const {
    std::vector<size_t> idx = u_pos;
    idx.insert(idx.end(), abs_pos.begin(), abs_pos.end());
    return q.degree_in(idx);
  }

  void build_integrands() {
    const double h = C.scaling.h;
    C.time_weight = cimage(Polynomial::constant(interim, 1.0), C.p);
    C.mass_integrand = cimage(control_mass(), C.p);
    for (int i = 0; i < C.n; i++) {
      Polynomial f = rescale(P.dynamics[i]) * (h / C.scaling.state_scale[i]);
      C.dynamics.push_back(cimage(f, C.p));
    }
    C.cost = cimage(rescale(P.lagrangian) * h, C.p);
    for (size_t k = 0; k < P.rational_cost.size(); k++) {
      const auto& rc = P.rational_cost[k];
      Polynomial num = rescale(rc.numerator) * h;
      Polynomial den = rescale(rc.denominator);
      uint32_t K = std::max(control_degree(num), control_degree(den) + (uint32_t)C.p);
      Polynomial one_plus = Polynomial::constant(interim, 1.0) + control_mass();
      Polynomial Nhat = cimage(num, K);
      Polynomial Dhat = cimage(den * one_plus, K);
      C.rational_num.push_back(Nhat);
      C.rational_den.push_back(Dhat);
      Polynomial qvar = Polynomial::variable(C.vars, C.rational_index[k]);
      C.cost = C.cost + qvar;
      C.equalities.push_back(qvar * Dhat - Nhat);
    }
  }

  void build_support() {
    auto push = [&](Polynomial g) {
      double scale = g.max_abs_coefficient();
      if (scale > 0) g = g * (1.0 / scale);
      C.support.push_back(std::move(g));
    };
    Polynomial tau = Polynomial::variable(C.vars, 0);
    push(tau * (Polynomial::constant(C.vars, 1.0) - tau));

    std::vector<Polynomial> yimg;
    for (int i = 0; i < C.n; i++)
      yimg.push_back(Polynomial::variable(C.vars, 1 + i) * C.scaling.state_scale[i]);
    for (const auto& g : P.state_set) push(g.compose(yimg));
    for (int i = 0; i < C.n; i++) {
      if (!P.state_box[i]) continue;
      double s = C.scaling.state_scale[i];
      double a = (*P.state_box[i])[0] / s, b = (*P.state_box[i])[1] / s;
      Polynomial eta = Polynomial::variable(C.vars, 1 + i);
      push((eta - Polynomial::constant(C.vars, a)) * (Polynomial::constant(C.vars, b) - eta));
    }

    if (has_w0()) push(Polynomial::variable(C.vars, *C.w0_index));
    for (int j = 0; j < C.m; j++) {
      bool nonneg = C.mode == CompactMode::Sqrt || C.mode == CompactMode::Simplex ||
                    (C.mode == CompactMode::Sphere && P.control.sign[j] > 0);
      if (nonneg) push(Polynomial::variable(C.vars, C.w_index[j]));
    }
    if (C.mode == CompactMode::Abs) {
      for (size_t ri : C.abs_index) push(Polynomial::variable(C.vars, ri));
      push(eliminated_weight());
    }
    if (C.mode == CompactMode::Simplex) push(eliminated_weight());

    // Loose ball over every variable; keeps the quadratic module archimedean
    // without tightening anything.
    double R = 1.1 * (double)C.vars.size();
    Polynomial ball = Polynomial::constant(C.vars, R * R);
    for (size_t v = 0; v < C.vars.size(); v++) {
      Polynomial x = Polynomial::variable(C.vars, v);
      ball = ball - x * x;
    }
    push(ball);
  }

  void build_rules() {
    if (has_w0()) {
      Polynomial rhs = Polynomial::constant(C.vars, 1.0);
      for (size_t wi : C.w_index)
        rhs = rhs - Polynomial::variable(C.vars, wi).pow(C.target);
      C.rules.push_back({*C.w0_index, (uint32_t)C.target, rhs});
    }
    if (C.mode == CompactMode::Abs) {
      for (int j = 0; j < C.m; j++) {
        Polynomial w = Polynomial::variable(C.vars, C.w_index[j]);
        C.rules.push_back({C.abs_index[j], 2, w * w});
      }
    }
  }

  void build_boundary() {
    auto scale_point = [&](const std::vector<double>& y) {
      std::vector<double> eta(C.n);
      for (int i = 0; i < C.n; i++) eta[i] = y[i] / C.scaling.state_scale[i];
      return eta;
    };
    if (P.initial.kind == BoundaryCondition::Kind::Fixed) C.eta0 = scale_point(P.initial.point);
    if (P.terminal.kind == BoundaryCondition::Kind::Fixed) C.etaf = scale_point(P.terminal.point);
    if (P.initial.kind == BoundaryCondition::Kind::Moments) {
      double s = C.scaling.state_scale[0], sk = 1.0;
      for (double b : P.initial.moments) {
        C.eta0_moments.push_back(b / sk);
        sk *= s;
      }
    }
  }
};

}  // namespace detail

CompactifiedProblem compactify(const ControlProblem& P) {
  detail::Builder B(P);
  B.C.scaling.t0 = P.t0;
  B.C.scaling.h = P.tf - P.t0;
  B.C.scaling.state_scale = P.state_bounds();
  for (double s : B.C.scaling.state_scale)
    if (!(s > 0)) fail("state scale must be positive");
  B.build_integrands();
  B.build_support();
  B.build_rules();
  B.build_boundary();
  return B.C;
}

std::vector<double> CompactifiedProblem::w_block(const std::vector<double>& u) const {
  std::vector<double> block;
  switch (mode) {
    case CompactMode::Sphere: {
      double s = 1.0;
      for (double ui : u) s += std::pow(std::fabs(ui), (double)p);
      double D = std::pow(s, 1.0 / p);
      block.push_back(1.0 / D);
      for (double ui : u) block.push_back(ui / D);
      break;
    }
    case CompactMode::Sqrt: {
      double s = 1.0;
      for (double ui : u) s += std::pow(ui, (double)p);
      double D = std::pow(s, 1.0 / (2.0 * p));
      block.push_back(1.0 / D);
      for (double ui : u) block.push_back(std::sqrt(ui) / D);
      break;
    }
    case CompactMode::Simplex: {
      double D = 1.0;
      for (double ui : u) D += ui;
      for (double ui : u) block.push_back(ui / D);
      break;
    }
    case CompactMode::Abs: {
      double D = 1.0;
      for (double ui : u) D += std::fabs(ui);
      for (double ui : u) block.push_back(ui / D);
      for (double ui : u) block.push_back(std::fabs(ui) / D);
      break;
    }
  }
  return block;
}

std::vector<double> CompactifiedProblem::lift_point(double t, const std::vector<double>& y,
                                                    const std::vector<double>& u) const {
  std::vector<double> pt(vars.size(), 0.0);
  pt[0] = (t - scaling.t0) / scaling.h;
  for (int i = 0; i < n; i++) pt[1 + i] = y[i] / scaling.state_scale[i];
  std::vector<double> block = w_block(u);
  size_t base = w0_index ? *w0_index : w_index[0];
  for (size_t j = 0; j < block.size(); j++) pt[base + j] = block[j];
  for (size_t k = 0; k < rational_index.size(); k++)
    pt[rational_index[k]] = rational_num[k].evaluate(pt) / rational_den[k].evaluate(pt);
  return pt;
}

ControlPoint CompactifiedProblem::control_value(const std::vector<double>& point) const {
  ControlPoint out;
  double den = 0.0;
  if (mode == CompactMode::Sphere || mode == CompactMode::Sqrt) {
    den = point[*w0_index];
  } else {
    den = 1.0;
    if (mode == CompactMode::Simplex)
      for (size_t wi : w_index) den -= point[wi];
    else
      for (size_t ri : abs_index) den -= point[ri];
  }
  if (den < 1e-9) {
    out.infinite = true;
    double norm = 0.0;
    for (size_t wi : w_index)
      norm += mode == CompactMode::Sqrt ? point[wi] * point[wi] : std::fabs(point[wi]);
    for (size_t wi : w_index) {
      double c = mode == CompactMode::Sqrt ? point[wi] * point[wi] : point[wi];
      out.u.push_back(norm > 0 ? c / norm : 0.0);
    }
    return out;
  }
  for (size_t wi : w_index) {
    double c = point[wi] / den;
    out.u.push_back(mode == CompactMode::Sqrt ? c * c : c);
  }
  return out;
}

std::vector<std::vector<double>> CompactifiedProblem::sample_support(int count,
                                                                     uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto signed_ok = [&](int j) {
    return mode == CompactMode::Abs || (mode == CompactMode::Sphere && source.control.sign[j] == 0);
  };

  std::vector<std::vector<double>> out;
  int guard = 0;
  while ((int)out.size() < count && guard++ < 200000) {
    std::vector<double> pt(vars.size(), 0.0);
    pt[0] = unif(rng);
    for (int i = 0; i < n; i++) pt[1 + i] = 2.0 * unif(rng) - 1.0;

    double kind = unif(rng);
    if (kind < 0.15) {
      // Point on the infinity face: zero weight, unit direction.
      std::vector<double> g(m);
      double norm = 0.0;
      for (int j = 0; j < m; j++) {
        g[j] = gauss(rng);
        if (!signed_ok(j)) g[j] = std::fabs(g[j]);
      }
      switch (mode) {
        case CompactMode::Sphere:
          for (int j = 0; j < m; j++) norm += std::pow(std::fabs(g[j]), (double)p);
          norm = std::pow(norm, 1.0 / p);
          for (int j = 0; j < m; j++) pt[w_index[j]] = g[j] / norm;
          break;
        case CompactMode::Sqrt:
          for (int j = 0; j < m; j++) g[j] = std::fabs(g[j]);
          for (int j = 0; j < m; j++) norm += std::pow(g[j], 2.0 * p);
          norm = std::pow(norm, 1.0 / (2.0 * p));
          for (int j = 0; j < m; j++) pt[w_index[j]] = g[j] / norm;
          break;
        case CompactMode::Simplex:
          for (int j = 0; j < m; j++) norm += std::fabs(g[j]);
          for (int j = 0; j < m; j++) pt[w_index[j]] = std::fabs(g[j]) / norm;
          break;
        case CompactMode::Abs:
          for (int j = 0; j < m; j++) norm += std::fabs(g[j]);
          for (int j = 0; j < m; j++) {
            pt[w_index[j]] = g[j] / norm;
            pt[abs_index[j]] = std::fabs(g[j]) / norm;
          }
          break;
      }
    } else {
      std::vector<double> u(m);
      bool heavy = kind < 0.55;
      bool bad = false;
      for (int j = 0; j < m; j++) {
        double mag = heavy ? std::tan(1.5707963267948966 * unif(rng)) : 2.0 * std::fabs(gauss(rng));
        if (!std::isfinite(mag)) bad = true;
        u[j] = signed_ok(j) && unif(rng) < 0.5 ? -mag : mag;
      }
      if (bad) continue;
      std::vector<double> block = w_block(u);
      size_t base = w0_index ? *w0_index : w_index[0];
      for (size_t j = 0; j < block.size(); j++) pt[base + j] = block[j];
    }

    bool ok = true;
    for (size_t k = 0; k < rational_index.size(); k++) {
      double D = rational_den[k].evaluate(pt);
      if (std::fabs(D) < 1e-9) {
        ok = false;
        break;
      }
      pt[rational_index[k]] = rational_num[k].evaluate(pt) / D;
    }
    for (const auto& g : support)
      if (ok && g.evaluate(pt) < -1e-12) ok = false;
    if (ok) out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace momentoc
