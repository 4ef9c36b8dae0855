#include "momentoc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace momentoc {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void fail(const std::string& msg) { throw ProblemFormatError(msg); }

double parse_number(const std::string& s) {
  Polynomial p;
  try {
    p = parse_polynomial(s, {});
  } catch (const PolyParseError& e) {
    fail("bad number '" + s + "': " + e.what());
  }
  return p.evaluate({});
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Comma-split at paren depth zero.
std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') depth++;
    if (c == ')') depth--;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Detects c - sum a_i y_i^2 with c, a_i > 0 covering every state; returns the
// per-state bounds sqrt(c / a_i), or empty when the polynomial is not of that
// form.
std::vector<double> ball_bounds(const Polynomial& g, int n) {
  std::vector<double> a(n, 0.0);
  double c = 0.0;
  for (const auto& [mi, coef] : g.terms()) {
    if (mi.degree() == 0) {
      c = coef;
      continue;
    }
    int which = -1;
    for (int i = 0; i < n; i++) {
      if (mi.e[i] == 2 && mi.degree() == 2) which = i;
    }
    if (which < 0) return {};
    if (coef >= 0) return {};
    a[which] = -coef;
  }
  if (c <= 0) return {};
  std::vector<double> bounds(n);
  for (int i = 0; i < n; i++) {
    if (a[i] <= 0) return {};
    bounds[i] = std::sqrt(c / a[i]);
  }
  return bounds;
}

struct SectionedText {
  std::map<std::string, std::vector<std::string>> sections;
};

SectionedText read_sections(const std::string& text) {
  SectionedText st;
  std::istringstream is(text);
  std::string line, current;
  while (std::getline(is, line)) {
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      st.sections[current];
      continue;
    }
    if (current.empty()) fail("content before first section: '" + line + "'");
    st.sections[current].push_back(line);
  }
  return st;
}

// "lhs = rhs" split at the first '='.
std::pair<std::string, std::string> split_assign(const std::string& line) {
  size_t eq = line.find('=');
  if (eq == std::string::npos) fail("expected '=' in line '" + line + "'");
  return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

int control_index(const std::string& tok, int m) {
  if (tok.size() < 2 || tok[0] != 'u') fail("expected control name u<k>, got '" + tok + "'");
  int k = std::atoi(tok.c_str() + 1);
  if (k < 1 || k > m) fail("control index out of range in '" + tok + "'");
  return k - 1;
}

}  // namespace

std::vector<std::string> ControlProblem::full_vars() const {
  std::vector<std::string> v;
  v.push_back("t");
  for (int i = 1; i <= n; i++) v.push_back("y" + std::to_string(i));
  for (int i = 1; i <= m; i++) v.push_back("u" + std::to_string(i));
  for (int i = 0; i < m; i++)
    if (control.lift[i] == ControlLift::Abs) v.push_back("abs_u" + std::to_string(i + 1));
  return v;
}

std::vector<std::string> ControlProblem::state_vars() const {
  std::vector<std::string> v;
  for (int i = 1; i <= n; i++) v.push_back("y" + std::to_string(i));
  return v;
}

std::vector<size_t> ControlProblem::control_indices() const {
  std::vector<size_t> idx;
  size_t total = full_vars().size();
  for (size_t i = 1 + n; i < total; i++) idx.push_back(i);
  return idx;
}

std::vector<double> ControlProblem::state_bounds() const {
  std::vector<double> best(n, 0.0);
  auto consider = [&](int i, double b) {
    if (b > 0 && (best[i] == 0.0 || b < best[i])) best[i] = b;
  };
  for (int i = 0; i < n; i++) {
    if (state_box[i]) {
      consider(i, std::max(std::fabs((*state_box[i])[0]), std::fabs((*state_box[i])[1])));
    }
  }
  for (const auto& g : state_set) {
    auto bb = ball_bounds(g, n);
    for (int i = 0; i < (int)bb.size(); i++) consider(i, bb[i]);
  }
  return best;
}

std::string ControlProblem::serialize() const {
  std::ostringstream os;
  os << "[meta]\n";
  os << "name " << name << "\n";
  os << "n " << n << "\n";
  os << "m " << m << "\n";
  os << "p " << p_exponent << "\n";
  os << "t0 " << fmt(t0) << "\n";
  os << "tf " << fmt(tf) << "\n";
  os << "\n[dynamics]\n";
  for (int i = 0; i < n; i++) os << "f" << (i + 1) << " = " << dynamics[i].to_string() << "\n";
  os << "\n[cost]\n";
  os << "l = " << lagrangian.to_string() << "\n";
  for (const auto& rc : rational_cost)
    os << "rational = (" << rc.numerator.to_string() << ") / (" << rc.denominator.to_string()
       << ")\n";
  os << "\n[state_set]\n";
  for (const auto& g : state_set) os << "g = " << g.to_string() << "\n";
  for (int i = 0; i < n; i++)
    if (state_box[i])
      os << "box y" << (i + 1) << " in [" << fmt((*state_box[i])[0]) << ", "
         << fmt((*state_box[i])[1]) << "]\n";
  os << "\n[boundary]\n";
  auto emit_boundary = [&](const char* key, const BoundaryCondition& b) {
    os << key << " = ";
    if (b.kind == BoundaryCondition::Kind::Free) {
      os << "free";
    } else if (b.kind == BoundaryCondition::Kind::Moments) {
      os << "moments(";
      for (size_t i = 0; i < b.moments.size(); i++) os << (i ? ", " : "") << fmt(b.moments[i]);
      os << ")";
    } else {
      os << "(";
      for (size_t i = 0; i < b.point.size(); i++) os << (i ? ", " : "") << fmt(b.point[i]);
      os << ")";
    }
    os << "\n";
  };
  emit_boundary("y0", initial);
  emit_boundary("yf", terminal);
  os << "\n[control]\n";
  for (int i = 0; i < m; i++)
    if (control.sign[i] > 0) os << "sign u" << (i + 1) << " >= 0\n";
  for (int i = 0; i < m; i++) {
    if (control.lift[i] == ControlLift::Sqrt) os << "lift sqrt u" << (i + 1) << "\n";
    if (control.lift[i] == ControlLift::Abs) os << "lift abs u" << (i + 1) << "\n";
  }
  if (control.mass_bound) os << "mass_bound " << fmt(*control.mass_bound) << "\n";
  os << "\n[options]\n";
  os << "coercive " << (coercive_attested ? "true" : "false") << "\n";
  return os.str();
}

uint64_t ControlProblem::hash() const { return fnv1a64(serialize()); }

ControlProblem load_problem_text(const std::string& text) {
  SectionedText st = read_sections(text);
  ControlProblem P;

  auto lines = [&](const char* sec) -> const std::vector<std::string>& {
    static const std::vector<std::string> empty;
    auto it = st.sections.find(sec);
    return it == st.sections.end() ? empty : it->second;
  };

  for (const auto& line : lines("meta")) {
    auto toks = split_ws(line);
    if (toks.size() != 2) fail("bad [meta] line '" + line + "'");
    const std::string& k = toks[0];
    if (k == "name")
      P.name = toks[1];
    else if (k == "n")
      P.n = std::atoi(toks[1].c_str());
    else if (k == "m")
      P.m = std::atoi(toks[1].c_str());
    else if (k == "p")
      P.p_exponent = std::atoi(toks[1].c_str());
    else if (k == "t0")
      P.t0 = parse_number(toks[1]);
    else if (k == "tf")
      P.tf = parse_number(toks[1]);
    else
      fail("unknown [meta] key '" + k + "'");
  }
  if (P.n < 1) fail("need at least one state (n >= 1)");
  if (P.m < 1) fail("need at least one control (m >= 1)");
  if (P.p_exponent < 1) fail("growth exponent p must be >= 1");
  if (!(P.t0 < P.tf)) fail("time horizon is empty (t0 >= tf)");

  P.control.sign.assign(P.m, 0);
  P.control.lift.assign(P.m, ControlLift::None);
  for (const auto& line : lines("control")) {
    auto toks = split_ws(line);
    if (toks.size() == 4 && toks[0] == "sign" && toks[2] == ">=" && toks[3] == "0") {
      P.control.sign[control_index(toks[1], P.m)] = 1;
    } else if (toks.size() == 3 && toks[0] == "lift" && (toks[1] == "sqrt" || toks[1] == "abs")) {
      P.control.lift[control_index(toks[2], P.m)] =
          toks[1] == "sqrt" ? ControlLift::Sqrt : ControlLift::Abs;
    } else if (toks.size() == 2 && toks[0] == "mass_bound") {
      P.control.mass_bound = parse_number(toks[1]);
    } else {
      fail("bad [control] line '" + line + "'");
    }
  }
  if (P.p_exponent % 2 == 1) {
    // Odd p needs one uniform compactification mode across all controls.
    for (int i = 0; i < P.m; i++)
      if (P.control.sign[i] == 0) P.control.lift[i] = ControlLift::Abs;
    for (int i = 0; i < P.m; i++) {
      bool same = (P.control.lift[i] == P.control.lift[0]) &&
                  ((P.control.lift[i] == ControlLift::Abs) ||
                   (P.control.sign[i] == P.control.sign[0]));
      if (!same) fail("odd p requires all controls to share one mode (sign/lift)");
    }
  } else {
    for (int i = 0; i < P.m; i++)
      if (P.control.lift[i] == ControlLift::Abs)
        fail("lift abs is only meaningful for odd p");
  }
  for (int i = 0; i < P.m; i++)
    if (P.control.lift[i] == ControlLift::Sqrt && P.control.sign[i] != 1)
      fail("lift sqrt requires sign u >= 0");
  if (P.control.mass_bound && *P.control.mass_bound <= 0) fail("mass_bound must be positive");

  auto vars = P.full_vars();
  auto parse_in_vars = [&](const std::string& s, const std::vector<std::string>& vl,
                           const char* where) {
    try {
      return parse_polynomial(s, vl);
    } catch (const PolyParseError& e) {
      fail(std::string(where) + ": " + e.what() + " in '" + s + "'");
    }
  };

  P.dynamics.assign(P.n, Polynomial::constant(vars, 0.0));
  std::vector<bool> seen_f(P.n, false);
  for (const auto& line : lines("dynamics")) {
    auto [lhs, rhs] = split_assign(line);
    if (lhs.size() < 2 || lhs[0] != 'f') fail("bad [dynamics] lhs '" + lhs + "'");
    int k = std::atoi(lhs.c_str() + 1);
    if (k < 1 || k > P.n) fail("dynamics index out of range in '" + lhs + "'");
    P.dynamics[k - 1] = parse_in_vars(rhs, vars, "dynamics");
    seen_f[k - 1] = true;
  }
  for (int i = 0; i < P.n; i++)
    if (!seen_f[i]) fail("missing dynamics f" + std::to_string(i + 1));

  P.lagrangian = Polynomial::constant(vars, 0.0);
  for (const auto& line : lines("cost")) {
    auto [lhs, rhs] = split_assign(line);
    if (lhs == "l") {
      P.lagrangian = parse_in_vars(rhs, vars, "cost");
    } else if (lhs == "rational") {
      // (num) / (den), both parenthesized; the denominator in controls only.
      if (rhs.empty() || rhs.front() != '(') fail("rational term must start with '('");
      int depth = 0;
      size_t close = std::string::npos;
      for (size_t i = 0; i < rhs.size(); i++) {
        if (rhs[i] == '(') depth++;
        if (rhs[i] == ')' && --depth == 0) {
          close = i;
          break;
        }
      }
      if (close == std::string::npos) fail("unbalanced parens in rational term");
      std::string num = rhs.substr(1, close - 1);
      std::string rest = trim(rhs.substr(close + 1));
      if (rest.empty() || rest.front() != '/') fail("rational term needs '/ (den)'");
      rest = trim(rest.substr(1));
      if (rest.size() < 2 || rest.front() != '(' || rest.back() != ')')
        fail("rational denominator must be parenthesized");
      RationalCostTerm rc;
      rc.numerator = parse_in_vars(num, vars, "rational numerator");
      rc.denominator = parse_in_vars(rest.substr(1, rest.size() - 2), vars, "rational denominator");
      P.rational_cost.push_back(std::move(rc));
    } else {
      fail("unknown [cost] lhs '" + lhs + "'");
    }
  }

  auto yvars = P.state_vars();
  P.state_box.assign(P.n, std::nullopt);
  for (const auto& line : lines("state_set")) {
    auto toks = split_ws(line);
    if (!toks.empty() && toks[0] == "box") {
      // box y<k> in [a, b]
      size_t in_pos = line.find(" in ");
      if (toks.size() < 3 || in_pos == std::string::npos) fail("bad box line '" + line + "'");
      std::string yk = toks[1];
      if (yk.size() < 2 || yk[0] != 'y') fail("bad box state name '" + yk + "'");
      int k = std::atoi(yk.c_str() + 1);
      if (k < 1 || k > P.n) fail("box state index out of range in '" + yk + "'");
      std::string range = trim(line.substr(in_pos + 4));
      if (range.size() < 2 || range.front() != '[' || range.back() != ']')
        fail("box range must be [a, b]");
      auto parts = split_commas(range.substr(1, range.size() - 2));
      if (parts.size() != 2) fail("box range must have two endpoints");
      double a = parse_number(parts[0]), b = parse_number(parts[1]);
      if (!(a < b)) fail("box range is empty in '" + line + "'");
      P.state_box[k - 1] = std::array<double, 2>{a, b};
    } else {
      auto [lhs, rhs] = split_assign(line);
      if (lhs != "g") fail("bad [state_set] line '" + line + "'");
      P.state_set.push_back(parse_in_vars(rhs, yvars, "state_set"));
    }
  }

  auto parse_boundary = [&](const std::string& rhs) {
    BoundaryCondition b;
    if (rhs == "free") {
      b.kind = BoundaryCondition::Kind::Free;
      return b;
    }
    if (rhs.rfind("moments(", 0) == 0 && rhs.back() == ')') {
      b.kind = BoundaryCondition::Kind::Moments;
      for (const auto& s : split_commas(rhs.substr(8, rhs.size() - 9)))
        b.moments.push_back(parse_number(s));
      return b;
    }
    if (rhs.size() >= 2 && rhs.front() == '(' && rhs.back() == ')') {
      b.kind = BoundaryCondition::Kind::Fixed;
      for (const auto& s : split_commas(rhs.substr(1, rhs.size() - 2)))
        b.point.push_back(parse_number(s));
      return b;
    }
    fail("bad boundary value '" + rhs + "'");
  };
  bool saw_y0 = false, saw_yf = false;
  for (const auto& line : lines("boundary")) {
    auto [lhs, rhs] = split_assign(line);
    if (lhs == "y0") {
      P.initial = parse_boundary(rhs);
      saw_y0 = true;
    } else if (lhs == "yf") {
      P.terminal = parse_boundary(rhs);
      saw_yf = true;
    } else {
      fail("unknown [boundary] lhs '" + lhs + "'");
    }
  }
  if (!saw_y0 || !saw_yf) fail("[boundary] must declare both y0 and yf");

  for (const auto& line : lines("options")) {
    auto toks = split_ws(line);
    if (toks.size() == 2 && toks[0] == "coercive") {
      P.coercive_attested = (toks[1] == "true");
    } else {
      fail("bad [options] line '" + line + "'");
    }
  }

  // Dimensional checks on boundary data.
  auto check_boundary = [&](const BoundaryCondition& b, const char* which, bool is_initial) {
    if (b.kind == BoundaryCondition::Kind::Fixed && (int)b.point.size() != P.n)
      fail(std::string(which) + " point has wrong dimension");
    if (b.kind == BoundaryCondition::Kind::Moments) {
      if (!is_initial) fail("moments boundary is only supported at t0");
      if (P.n != 1) fail("moments boundary is only supported for a scalar state");
      if (b.moments.empty() || std::fabs(b.moments[0] - 1.0) > 1e-12)
        fail("moments boundary must start with mass 1");
    }
  };
  check_boundary(P.initial, "y0", true);
  check_boundary(P.terminal, "yf", false);

  // Growth bound: control degree of the data at most p (abs symbols count as
  // control degree one); rational numerators may exceed the denominator's
  // control degree by at most p.
  auto cidx = P.control_indices();
  auto cdeg = [&](const Polynomial& q) { return (int)q.degree_in(cidx); };
  if (cdeg(P.lagrangian) > P.p_exponent) fail("cost control degree exceeds growth exponent p");
  for (const auto& f : P.dynamics)
    if (cdeg(f) > P.p_exponent) fail("dynamics control degree exceeds growth exponent p");
  for (const auto& rc : P.rational_cost) {
    for (size_t v = 0; v < vars.size(); v++) {
      bool is_control = std::find(cidx.begin(), cidx.end(), v) != cidx.end();
      if (!is_control && rc.denominator.degree_in({v}) > 0)
        fail("rational denominator may depend on controls only");
    }
    if (cdeg(rc.numerator) > cdeg(rc.denominator) + P.p_exponent)
      fail("rational numerator control degree exceeds denominator degree + p");
  }
  // Abs symbols are cost-only vocabulary. The state set is parsed over the
  // state variables alone, so only the dynamics need the check.
  size_t abs_begin = 1 + P.n + P.m;
  for (size_t v = abs_begin; v < vars.size(); v++)
    for (const auto& f : P.dynamics)
      if (f.degree_in({v}) > 0) fail("dynamics may not reference abs symbols");

  // Every state needs a bound; synthesize the ball constraint when no
  // ball-form row exists.
  bool have_ball = false;
  for (const auto& g : P.state_set)
    if (!ball_bounds(g, P.n).empty()) have_ball = true;
  if (!have_ball) {
    double maxb = 0.0;
    for (int i = 0; i < P.n; i++) {
      if (!P.state_box[i])
        fail("state y" + std::to_string(i + 1) +
             " has no bound; declare a box or a ball constraint");
      maxb = std::max(maxb,
                      std::max(std::fabs((*P.state_box[i])[0]), std::fabs((*P.state_box[i])[1])));
    }
    double R = 1.5 * maxb;
    Polynomial ball = Polynomial::constant(yvars, R * R);
    for (int i = 0; i < P.n; i++) {
      MultiIndex mi;
      mi.e.assign(P.n, 0);
      mi.e[i] = 2;
      ball.add_term(mi, -1.0);
    }
    P.state_set.push_back(ball);
  }

  return P;
}

ControlProblem load_problem_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open problem file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return load_problem_text(os.str());
}

namespace {

const char* kImpulseText = R"(
[meta]
name impulse
n 1
m 1
p 1
t0 0
tf 1

[dynamics]
f1 = u1

[cost]
l = (t - 1/2)^2*u1

[state_set]
box y1 in [-1/2, 3/2]

[boundary]
y0 = (0)
yf = (1)

[control]
sign u1 >= 0
lift sqrt u1

[options]
coercive true
)";

const char* kSmearedText = R"(
[meta]
name smeared
n 1
m 1
p 1
t0 0
tf 1

[dynamics]
f1 = u1

[cost]
l = (y1 - t)^2
rational = (u1^2) / (1 + u1^4)

[state_set]
box y1 in [0, 1]

[boundary]
y0 = (0)
yf = free

[control]
sign u1 >= 0

[options]
coercive true
)";

const char* kRendezvousText = R"(
[meta]
name rendezvous
n 2
m 1
p 1
t0 0
tf 1

[dynamics]
f1 = 3.1415926535897931*y2
f2 = -3.1415926535897931*y1 + u1

[cost]
l = abs_u1

[state_set]
g = 2 - y1^2 - y2^2
g = y1^2 + (y2 + 1/2)^2 - 1/4

[boundary]
y0 = (1/2, 0)
yf = (-1, 0)

[control]
lift abs u1

[options]
coercive true
)";

const char* kWeierstrassText = R"(
[meta]
name weierstrass
n 1
m 1
p 2
t0 -1
tf 1

[dynamics]
f1 = u1

[cost]
l = t^2*u1^2

[state_set]
box y1 in [-1, 1]

[boundary]
y0 = (-1)
yf = (1)

[control]
sign u1 >= 0

[options]
coercive false
)";

}  // namespace

bool is_builtin_problem(const std::string& name) {
  auto names = builtin_problem_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::vector<std::string> builtin_problem_names() {
  return {"impulse", "smeared", "rendezvous", "weierstrass", "weierstrass-regularized"};
}

ControlProblem builtin_problem(const std::string& name, double epsilon) {
  if (name == "impulse") return load_problem_text(kImpulseText);
  if (name == "smeared") return load_problem_text(kSmearedText);
  if (name == "rendezvous") return load_problem_text(kRendezvousText);
  if (name == "weierstrass") return load_problem_text(kWeierstrassText);
  if (name == "weierstrass-regularized") {
    std::string text = kWeierstrassText;
    std::string from = "l = t^2*u1^2";
    std::string to = "l = (t^2 + " + fmt(epsilon) + ")*u1^2";
    text.replace(text.find(from), from.size(), to);
    from = "name weierstrass";
    text.replace(text.find(from), from.size(), "name weierstrass-regularized");
    from = "coercive false";
    text.replace(text.find(from), from.size(), "coercive true");
    return load_problem_text(text);
  }
  fail("unknown builtin problem '" + name + "'");
}

ControlProblem resolve_problem(const std::string& spec) {
  if (spec.rfind("builtin:", 0) == 0) return builtin_problem(spec.substr(8));
  return load_problem_file(spec);
}

}  // namespace momentoc
