#include "momentoc/compactify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace momentoc;

namespace {

double coef(const Polynomial& p, std::initializer_list<uint32_t> e) {
  return p.coefficient(MultiIndex(e));
}

// Direct evaluation of the problem integrand (t, y, u) -> l + sum num/den,
// used as the oracle for the compactified image.
double raw_integrand(const ControlProblem& P, double t, const std::vector<double>& y,
                     const std::vector<double>& u) {
  std::vector<double> pt;
  pt.push_back(t);
  for (double v : y) pt.push_back(v);
  for (double v : u) pt.push_back(v);
  for (int j = 0; j < P.m; j++)
    if (P.control.lift[j] == ControlLift::Abs) pt.push_back(std::fabs(u[j]));
  double val = P.lagrangian.evaluate(pt);
  for (const auto& rc : P.rational_cost)
    val += rc.numerator.evaluate(pt) / rc.denominator.evaluate(pt);
  return val;
}

double raw_dynamics(const ControlProblem& P, int i, double t, const std::vector<double>& y,
                    const std::vector<double>& u) {
  std::vector<double> pt;
  pt.push_back(t);
  for (double v : y) pt.push_back(v);
  for (double v : u) pt.push_back(v);
  for (int j = 0; j < P.m; j++)
    if (P.control.lift[j] == ControlLift::Abs) pt.push_back(std::fabs(u[j]));
  return P.dynamics[i].evaluate(pt);
}

double control_norm_p(const ControlProblem& P, const std::vector<double>& u) {
  double s = 0.0;
  for (double v : u) s += std::pow(std::fabs(v), (double)P.p_exponent);
  return s;
}

}  // namespace

TEST(Impulse, SqrtModeShape) {
  CompactifiedProblem C = compactify(builtin_problem("impulse"));
  EXPECT_EQ(C.mode, CompactMode::Sqrt);
  EXPECT_EQ(C.target, 2);
  ASSERT_EQ(C.vars.size(), 4u);
  EXPECT_EQ(C.vars[0], "tau");
  EXPECT_EQ(C.vars[2], "w0");
  EXPECT_EQ(C.vars[3], "w1");
  EXPECT_DOUBLE_EQ(C.scaling.h, 1.0);
  EXPECT_DOUBLE_EQ(C.scaling.state_scale[0], 1.5);

  // time weight w0^2, transport (2/3) w1^2, cost (tau - 1/2)^2 w1^2
  EXPECT_DOUBLE_EQ(coef(C.time_weight, {0, 0, 2, 0}), 1.0);
  EXPECT_EQ(C.time_weight.terms().size(), 1u);
  EXPECT_DOUBLE_EQ(coef(C.dynamics[0], {0, 0, 0, 2}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(coef(C.cost, {2, 0, 0, 2}), 1.0);
  EXPECT_DOUBLE_EQ(coef(C.cost, {1, 0, 0, 2}), -1.0);
  EXPECT_DOUBLE_EQ(coef(C.cost, {0, 0, 0, 2}), 0.25);
  EXPECT_DOUBLE_EQ(coef(C.mass_integrand, {0, 0, 0, 2}), 1.0);

  ASSERT_EQ(C.rules.size(), 1u);
  EXPECT_EQ(C.rules[0].var, 2u);
  EXPECT_EQ(C.rules[0].power, 2u);
  EXPECT_DOUBLE_EQ(coef(C.rules[0].rhs, {0, 0, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(coef(C.rules[0].rhs, {0, 0, 0, 2}), -1.0);

  ASSERT_EQ(C.eta0.size(), 1u);
  EXPECT_DOUBLE_EQ(C.eta0[0], 0.0);
  EXPECT_DOUBLE_EQ(C.etaf[0], 2.0 / 3.0);
}

TEST(Smeared, RationalLiftIdentity) {
  CompactifiedProblem C = compactify(builtin_problem("smeared"));
  EXPECT_EQ(C.mode, CompactMode::Simplex);
  ASSERT_EQ(C.vars.size(), 4u);  // tau y1 w1 q1
  EXPECT_EQ(C.vars[3], "q1");

  auto v = [&](size_t i) { return Polynomial::variable(C.vars, i); };
  Polynomial one = Polynomial::constant(C.vars, 1.0);
  Polynomial w = v(2), q = v(3), y = v(1), tau = v(0);

  EXPECT_TRUE(C.time_weight.near_equal(one - w, 1e-14));
  EXPECT_TRUE(C.mass_integrand.near_equal(w, 1e-14));
  EXPECT_TRUE(C.dynamics[0].near_equal(w, 1e-14));

  // The box [0,1] sits inside the auto ball, so the state scale is one and
  // the integrand keeps its shape, weighted by 1 - w plus the lifted term.
  Polynomial dev = y - tau;
  Polynomial expect_cost = dev * dev * (one - w) + q;
  EXPECT_TRUE(C.cost.near_equal(expect_cost, 1e-12));

  // q ((1-w)^4 + w^4) = w^2 (1-w)^3
  ASSERT_EQ(C.equalities.size(), 1u);
  Polynomial omw = one - w;
  Polynomial expect_eq = q * (omw.pow(4) + w.pow(4)) - w * w * omw.pow(3);
  EXPECT_TRUE(C.equalities[0].near_equal(expect_eq, 1e-12));
  EXPECT_TRUE(C.rules.empty());
}

TEST(Rendezvous, AbsModeShape) {
  CompactifiedProblem C = compactify(builtin_problem("rendezvous"));
  EXPECT_EQ(C.mode, CompactMode::Abs);
  ASSERT_EQ(C.vars.size(), 5u);  // tau y1 y2 w1 r1
  EXPECT_EQ(C.vars[3], "w1");
  EXPECT_EQ(C.vars[4], "r1");
  double s = std::sqrt(2.0);
  EXPECT_DOUBLE_EQ(C.scaling.state_scale[0], s);

  auto v = [&](size_t i) { return Polynomial::variable(C.vars, i); };
  Polynomial one = Polynomial::constant(C.vars, 1.0);
  Polynomial y1 = v(1), y2 = v(2), w = v(3), r = v(4);

  EXPECT_TRUE(C.cost.near_equal(r, 1e-14));
  EXPECT_TRUE(C.time_weight.near_equal(one - r, 1e-14));
  // state scales cancel in the rotation part
  EXPECT_TRUE(C.dynamics[0].near_equal(y2 * M_PI * (one - r), 1e-12));
  EXPECT_TRUE(C.dynamics[1].near_equal(y1 * (-M_PI) * (one - r) + w * (1.0 / s), 1e-12));

  ASSERT_EQ(C.rules.size(), 1u);
  EXPECT_EQ(C.rules[0].var, 4u);
  EXPECT_EQ(C.rules[0].power, 2u);
  EXPECT_TRUE(C.rules[0].rhs.near_equal(w * w, 1e-14));

  ASSERT_EQ(C.eta0.size(), 2u);
  EXPECT_DOUBLE_EQ(C.eta0[0], 0.5 / s);
  EXPECT_DOUBLE_EQ(C.etaf[0], -1.0 / s);
}

TEST(Weierstrass, SphereModeShape) {
  CompactifiedProblem C = compactify(builtin_problem("weierstrass"));
  EXPECT_EQ(C.mode, CompactMode::Sphere);
  EXPECT_EQ(C.target, 2);
  EXPECT_DOUBLE_EQ(C.scaling.h, 2.0);
  EXPECT_DOUBLE_EQ(C.scaling.t0, -1.0);
  // vars tau y1 w0 w1
  EXPECT_DOUBLE_EQ(coef(C.time_weight, {0, 0, 2, 0}), 1.0);
  // f = u scaled by h/s = 2: image 2 w1 w0
  EXPECT_DOUBLE_EQ(coef(C.dynamics[0], {0, 0, 1, 1}), 2.0);
  EXPECT_EQ(C.dynamics[0].terms().size(), 1u);
  // cost h (t0 + h tau)^2 u^2 -> 2 (2 tau - 1)^2 w1^2
  EXPECT_DOUBLE_EQ(coef(C.cost, {2, 0, 0, 2}), 8.0);
  EXPECT_DOUBLE_EQ(coef(C.cost, {1, 0, 0, 2}), -8.0);
  EXPECT_DOUBLE_EQ(coef(C.cost, {0, 0, 0, 2}), 2.0);
  // sign restriction shows up as a w1 >= 0 support row
  bool has_w1_row = false;
  for (const auto& g : C.support)
    if (g.terms().size() == 1 && g.coefficient(MultiIndex({0, 0, 0, 1})) == 1.0)
      has_w1_row = true;
  EXPECT_TRUE(has_w1_row);
}

TEST(Image, MatchesRawIntegrandOnRandomPoints) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& name :
       {std::string("impulse"), std::string("smeared"), std::string("rendezvous"),
        std::string("weierstrass"), std::string("weierstrass-regularized")}) {
    ControlProblem P = builtin_problem(name);
    CompactifiedProblem C = compactify(P);
    auto bounds = P.state_bounds();
    int done = 0, guard = 0;
    while (done < 100 && guard++ < 20000) {
      double t = P.t0 + P.horizon() * unif(rng);
      std::vector<double> y(P.n);
      for (int i = 0; i < P.n; i++) y[i] = bounds[i] * (2.0 * unif(rng) - 1.0);
      bool ok = true;
      for (const auto& g : P.state_set)
        if (g.evaluate(y) < 0) ok = false;
      for (int i = 0; i < P.n; i++)
        if (P.state_box[i] && (y[i] < (*P.state_box[i])[0] || y[i] > (*P.state_box[i])[1]))
          ok = false;
      if (!ok) continue;
      std::vector<double> u(P.m);
      for (int j = 0; j < P.m; j++) {
        double mag = std::tan(1.55 * unif(rng));  // spans tiny to ~1e2
        u[j] = (P.control.sign[j] == 0 && unif(rng) < 0.5) ? -mag : mag;
      }
      std::vector<double> pt = C.lift_point(t, y, u);
      double denom = 1.0 + control_norm_p(P, u);
      double scale_l = std::max(1.0, std::fabs(raw_integrand(P, t, y, u)));
      EXPECT_NEAR(C.cost.evaluate(pt) * denom / C.scaling.h, raw_integrand(P, t, y, u),
                  1e-9 * scale_l * denom)
          << name;
      EXPECT_NEAR(C.time_weight.evaluate(pt), 1.0 / denom, 1e-12) << name;
      for (int i = 0; i < P.n; i++) {
        double expect = raw_dynamics(P, i, t, y, u) / denom / C.scaling.state_scale[i] *
                        C.scaling.h;
        double scale_f = std::max(1.0, std::fabs(expect));
        EXPECT_NEAR(C.dynamics[i].evaluate(pt), expect, 1e-9 * scale_f) << name;
      }
      double mass = control_norm_p(P, u) / denom;
      EXPECT_NEAR(C.mass_integrand.evaluate(pt), mass, 1e-9) << name;
      done++;
    }
    EXPECT_EQ(done, 100) << name;
  }
}

TEST(Maps, ControlRoundTrip) {
  for (const auto& name : {std::string("impulse"), std::string("smeared"),
                           std::string("rendezvous"), std::string("weierstrass")}) {
    ControlProblem P = builtin_problem(name);
    CompactifiedProblem C = compactify(P);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 200; trial++) {
      std::vector<double> u(P.m);
      for (int j = 0; j < P.m; j++) {
        double mag = std::pow(10.0, -6.0 + 12.0 * unif(rng));  // 1e-6 .. 1e6
        u[j] = (P.control.sign[j] == 0 && unif(rng) < 0.5) ? -mag : mag;
      }
      std::vector<double> y(P.n, 0.0);
      std::vector<double> pt = C.lift_point(P.t0, y, u);
      ControlPoint back = C.control_value(pt);
      ASSERT_FALSE(back.infinite) << name;
      for (int j = 0; j < P.m; j++)
        EXPECT_NEAR(back.u[j], u[j], 1e-10 * std::fabs(u[j]) + 1e-12) << name;
    }
    // zero weight reads as a point at infinity
    std::vector<double> inf_pt(C.vars.size(), 0.0);
    if (C.w0_index)
      inf_pt[C.w_index[0]] = 1.0;
    else if (C.mode == CompactMode::Abs) {
      inf_pt[C.w_index[0]] = 1.0;
      inf_pt[C.abs_index[0]] = 1.0;
    } else {
      inf_pt[C.w_index[0]] = 1.0;
    }
    ControlPoint back = C.control_value(inf_pt);
    EXPECT_TRUE(back.infinite) << name;
    ASSERT_EQ(back.u.size(), (size_t)P.m);
    EXPECT_NEAR(std::fabs(back.u[0]), 1.0, 1e-12) << name;
  }
}

TEST(Sampling, PointsSatisfySupportAndRules) {
  for (const auto& name : {std::string("impulse"), std::string("smeared"),
                           std::string("rendezvous"), std::string("weierstrass")}) {
    CompactifiedProblem C = compactify(builtin_problem(name));
    auto pts = C.sample_support(500, 42);
    ASSERT_EQ(pts.size(), 500u) << name;
    int infinite = 0;
    for (const auto& pt : pts) {
      for (const auto& g : C.support) EXPECT_GE(g.evaluate(pt), -1e-12) << name;
      for (const auto& rule : C.rules) {
        double head = std::pow(pt[rule.var], (double)rule.power);
        EXPECT_NEAR(head, rule.rhs.evaluate(pt), 1e-9) << name;
      }
      for (const auto& h : C.equalities) EXPECT_NEAR(h.evaluate(pt), 0.0, 1e-9) << name;
      if (C.control_value(pt).infinite) infinite++;
    }
    EXPECT_GT(infinite, 10) << name;
    EXPECT_LT(infinite, 250) << name;
    // determinism
    auto again = C.sample_support(500, 42);
    EXPECT_EQ(pts, again) << name;
  }
}

TEST(Support, EveryVariableIsBounded) {
  for (const auto& name : {std::string("impulse"), std::string("smeared"),
                           std::string("rendezvous"), std::string("weierstrass")}) {
    CompactifiedProblem C = compactify(builtin_problem(name));
    for (size_t v = 0; v < C.vars.size(); v++) {
      bool appears = false;
      for (const auto& g : C.support)
        if (g.degree_in({v}) > 0) appears = true;
      EXPECT_TRUE(appears) << name << " var " << C.vars[v];
    }
  }
}

TEST(Boundary, MomentsAreScaled) {
  std::string text =
      "[meta]\nname mb\nn 1\nm 1\np 2\nt0 0\ntf 1\n"
      "[dynamics]\nf1 = u1\n"
      "[cost]\nl = u1^2\n"
      "[state_set]\nbox y1 in [-2, 2]\n"
      "[boundary]\ny0 = moments(1, 0.5, 0.3)\nyf = free\n";
  CompactifiedProblem C = compactify(load_problem_text(text));
  ASSERT_EQ(C.eta0_moments.size(), 3u);
  EXPECT_DOUBLE_EQ(C.eta0_moments[0], 1.0);
  EXPECT_DOUBLE_EQ(C.eta0_moments[1], 0.25);
  EXPECT_DOUBLE_EQ(C.eta0_moments[2], 0.075);
  EXPECT_TRUE(C.eta0.empty());
  EXPECT_TRUE(C.etaf.empty());
}

TEST(Modes, PartialSqrtLiftIsAnError) {
  std::string text =
      "[meta]\nname bad\nn 1\nm 2\np 2\nt0 0\ntf 1\n"
      "[dynamics]\nf1 = u1 + u2\n"
      "[cost]\nl = u1^2 + u2^2\n"
      "[state_set]\nbox y1 in [-1, 1]\n"
      "[boundary]\ny0 = (0)\nyf = (1)\n"
      "[control]\nsign u1 >= 0\nsign u2 >= 0\nlift sqrt u1\n";
  ControlProblem P = load_problem_text(text);
  EXPECT_THROW(compactify(P), ProblemFormatError);
}
