#include "momentoc/relax.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace momentoc {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw ProblemFormatError(msg); }

Polynomial mono_poly(const std::vector<std::string>& vars, const MultiIndex& m, double c) {
  Polynomial p(vars);
  p.add_term(m, c);
  return p;
}

// Drops all but the state positions 1..n of a measure-space exponent.
MultiIndex slice_states(const MultiIndex& m, int n) {
  MultiIndex out((size_t)n);
  for (int i = 0; i < n; i++) out[i] = m[1 + i];
  return out;
}

bool states_only(const Polynomial& g, int n) {
  for (const auto& [mi, c] : g.terms()) {
    uint32_t outside = 0;
    for (size_t v = 0; v < mi.size(); v++)
      if (v == 0 || v > (size_t)n) outside += mi[v];
    if (outside > 0) return false;
  }
  return true;
}

double pow_int(double x, uint32_t k) {
  double r = 1.0;
  while (k) {
    if (k & 1) r *= x;
    x *= x;
    k >>= 1;
  }
  return r;
}

double point_power(const std::vector<double>& pt, const MultiIndex& m) {
  double r = 1.0;
  for (size_t i = 0; i < m.size(); i++) r *= pow_int(pt[i], m[i]);
  return r;
}

}  // namespace

MomentReducer::MomentReducer(std::vector<std::string> vars, std::vector<SubstitutionRule> rules,
                             uint32_t degree)
    : rules_(std::move(rules)) {
  idx_.vars = std::move(vars);
  idx_.degree = degree;
  idx_.full_basis = monomial_basis(idx_.vars.size(), degree);
  for (const auto& m : idx_.full_basis) {
    if (!is_reduced(m)) continue;
    idx_.slot.emplace(m, idx_.reduced_basis.size());
    idx_.reduced_basis.push_back(m);
  }
}

bool MomentReducer::is_reduced(const MultiIndex& m) const {
  for (const auto& rule : rules_)
    if (m[rule.var] >= rule.power) return false;
  return true;
}

const LinComb& MomentReducer::reduce(const MultiIndex& m) const {
  auto it = memo_.find(m);
  if (it != memo_.end()) return it->second;
  LinComb result;
  if (is_reduced(m)) {
    auto slot = idx_.slot.find(m);
    if (slot == idx_.slot.end()) fail("monomial degree exceeds the moment space");
    result.push_back({slot->second, 1.0});
  } else {
    const SubstitutionRule* rule = nullptr;
    for (const auto& r : rules_)
      if (m[r.var] >= r.power) {
        rule = &r;
        break;
      }
    MultiIndex base = m;
    base[rule->var] -= rule->power;
    std::map<size_t, double> acc;
    for (const auto& [g, c] : rule->rhs.terms()) {
      for (const auto& [slot, cc] : reduce(base.plus(g))) acc[slot] += c * cc;
    }
    for (const auto& [slot, c] : acc)
      if (c != 0.0) result.push_back({slot, c});
  }
  return memo_.emplace(m, std::move(result)).first->second;
}

LinComb MomentReducer::reduce_poly(const Polynomial& p) const {
  std::map<size_t, double> acc;
  for (const auto& [m, c] : p.terms())
    for (const auto& [slot, cc] : reduce(m)) acc[slot] += c * cc;
  LinComb out;
  for (const auto& [slot, c] : acc)
    if (c != 0.0) out.push_back({slot, c});
  return out;
}

Polynomial MomentReducer::reduce_to_poly(const Polynomial& p) const {
  Polynomial out(idx_.vars);
  for (const auto& [slot, c] : reduce_poly(p)) out.add_term(idx_.reduced_basis[slot], c);
  return out;
}

int minimal_order(const CompactifiedProblem& C) {
  uint32_t need = 2;
  auto upd = [&](uint32_t d) { need = std::max(need, d); };
  upd(C.cost.degree());
  upd(C.time_weight.degree());
  for (const auto& f : C.dynamics) upd(f.degree());
  upd(C.mass_integrand.degree());
  for (const auto& g : C.support) upd(g.degree());
  for (const auto& h : C.equalities) upd(h.degree());
  return (int)((need + 1) / 2);
}

size_t Relaxation::slot_of(const MultiIndex& m) const {
  auto it = indexing.slot.find(m);
  if (it == indexing.slot.end()) fail("monomial is not a reduced moment slot");
  return it->second;
}

Relaxation build_relaxation(const CompactifiedProblem& C, int order, bool force_free_terminal) {
  if (order < minimal_order(C))
    fail("relaxation order " + std::to_string(order) + " is below the minimal order " +
         std::to_string(minimal_order(C)));
  Relaxation R;
  R.order = order;
  R.problem = C;
  const uint32_t two_d = 2 * (uint32_t)order;
  const int n = C.n;

  MomentReducer red(C.vars, C.rules, two_d);
  R.indexing = red.indexing();
  R.n_main = R.indexing.reduced_basis.size();

  R.free_initial = C.source.initial.kind == BoundaryCondition::Kind::Free;
  R.free_terminal =
      force_free_terminal || C.source.terminal.kind == BoundaryCondition::Kind::Free;
  bool moments_initial = C.source.initial.kind == BoundaryCondition::Kind::Moments;

  R.boundary_basis = monomial_basis((size_t)n, two_d);
  std::map<MultiIndex, size_t, GradedLexLess> bslot;
  for (size_t i = 0; i < R.boundary_basis.size(); i++) bslot.emplace(R.boundary_basis[i], i);

  size_t total = R.n_main;
  if (R.free_initial) {
    R.mu0_offset = total;
    total += R.boundary_basis.size();
  }
  if (R.free_terminal) {
    R.muf_offset = total;
    total += R.boundary_basis.size();
  }

  ConicProgram& prog = R.program;
  prog.n_vars = total;
  prog.cost.assign(total, 0.0);
  for (const auto& [slot, c] : red.reduce_poly(C.cost)) prog.cost[slot] += c;

  // Weak dynamics rows, one per test monomial tau^a eta^beta whose image under
  // the transport operator stays inside the moment space.
  auto endpoint_power = [&](const std::vector<double>& pt, const MultiIndex& beta) {
    double r = 1.0;
    for (int i = 0; i < n; i++) r *= pow_int(pt[i], beta[i]);
    return r;
  };
  for (const auto& alpha : monomial_basis((size_t)(1 + n), two_d)) {
    uint32_t a = alpha[0];
    MultiIndex beta((size_t)n);
    for (int i = 0; i < n; i++) beta[i] = alpha[1 + i];
    bool is_zero_alpha = alpha.degree() == 0;
    if (is_zero_alpha && !R.free_initial && !R.free_terminal) continue;

    Polynomial rp(C.vars);
    if (a >= 1) {
      MultiIndex m(C.vars.size());
      m[0] = a - 1;
      for (int i = 0; i < n; i++) m[1 + i] = beta[i];
      rp = rp + mono_poly(C.vars, m, (double)a) * C.time_weight;
    }
    for (int i = 0; i < n; i++) {
      if (beta[i] == 0) continue;
      MultiIndex m(C.vars.size());
      m[0] = a;
      for (int j = 0; j < n; j++) m[1 + j] = beta[j];
      m[1 + i] -= 1;
      rp = rp + mono_poly(C.vars, m, (double)beta[i]) * C.dynamics[i];
    }
    if (rp.degree() > two_d) continue;

    EqualityRow row;
    for (const auto& [slot, c] : red.reduce_poly(rp)) row.terms.push_back({slot, c});
    double rhs = 0.0;
    if (R.free_terminal) {
      row.terms.push_back({R.muf_offset + bslot.at(beta), -1.0});
    } else {
      rhs += endpoint_power(C.etaf, beta);
    }
    if (a == 0) {
      if (R.free_initial) {
        row.terms.push_back({R.mu0_offset + bslot.at(beta), 1.0});
      } else if (moments_initial) {
        uint32_t k = beta.degree();
        if (k >= C.eta0_moments.size())
          fail("initial moment list too short for this relaxation order");
        rhs -= C.eta0_moments[k];
      } else {
        rhs -= endpoint_power(C.eta0, beta);
      }
    }
    row.rhs = rhs;
    if (row.terms.empty() && rhs == 0.0) continue;
    prog.rows.push_back(std::move(row));
    Relaxation::RowInfo info;
    info.kind = Relaxation::RowInfo::Kind::Test;
    info.alpha = alpha;
    R.row_info.push_back(std::move(info));
  }

  // Equality constraints from lifted rational terms, paired down to the
  // localizing degree.
  for (size_t k = 0; k < C.equalities.size(); k++) {
    const Polynomial& h = C.equalities[k];
    int dloc = order - (int)((h.degree() + 1) / 2);
    if (dloc < 0) continue;
    for (const auto& mu : red.indexing().reduced_basis) {
      if (mu.degree() > 2 * (uint32_t)dloc) continue;
      EqualityRow row;
      for (const auto& [slot, c] : red.reduce_poly(mono_poly(C.vars, mu, 1.0) * h))
        row.terms.push_back({slot, c});
      row.rhs = 0.0;
      if (row.terms.empty()) continue;
      prog.rows.push_back(std::move(row));
      Relaxation::RowInfo info;
      info.kind = Relaxation::RowInfo::Kind::Lift;
      info.alpha = mu;
      info.lift = (int)k;
      R.row_info.push_back(std::move(info));
    }
  }

  // A free initial distribution still carries unit mass.
  if (R.free_initial) {
    EqualityRow row;
    row.terms.push_back({R.mu0_offset + bslot.at(MultiIndex((size_t)n)), 1.0});
    row.rhs = 1.0;
    prog.rows.push_back(std::move(row));
    Relaxation::RowInfo info;
    info.kind = Relaxation::RowInfo::Kind::BoundaryMass;
    R.row_info.push_back(std::move(info));
  }

  // Moment matrix and one localizing block per support row.
  std::vector<MultiIndex> rows_d;
  for (const auto& m : R.indexing.reduced_basis)
    if (m.degree() <= (uint32_t)order) rows_d.push_back(m);

  {
    ConeBlock blk;
    blk.type = ConeBlock::Type::PSD;
    blk.dim = (int)rows_d.size();
    for (size_t i = 0; i < rows_d.size(); i++)
      for (size_t j = i; j < rows_d.size(); j++)
        for (const auto& [slot, c] : red.reduce(rows_d[i].plus(rows_d[j])))
          blk.entries.push_back({(int)i, (int)j, slot, c});
    prog.blocks.push_back(std::move(blk));
    Relaxation::BlockInfo info;
    info.kind = Relaxation::BlockInfo::Kind::Moment;
    info.basis_degree = (uint32_t)order;
    R.block_info.push_back(info);
  }

  for (size_t gi = 0; gi < C.support.size(); gi++) {
    const Polynomial& g = C.support[gi];
    int dloc = order - (int)((g.degree() + 1) / 2);
    if (dloc < 0) fail("support row degree exceeds the relaxation order");
    std::vector<MultiIndex> rows_loc;
    for (const auto& m : R.indexing.reduced_basis)
      if (m.degree() <= (uint32_t)dloc) rows_loc.push_back(m);
    ConeBlock blk;
    blk.type = ConeBlock::Type::PSD;
    blk.dim = (int)rows_loc.size();
    for (size_t i = 0; i < rows_loc.size(); i++)
      for (size_t j = i; j < rows_loc.size(); j++) {
        Polynomial prod = mono_poly(C.vars, rows_loc[i].plus(rows_loc[j]), 1.0) * g;
        for (const auto& [slot, c] : red.reduce_poly(prod))
          blk.entries.push_back({(int)i, (int)j, slot, c});
      }
    prog.blocks.push_back(std::move(blk));
    Relaxation::BlockInfo info;
    info.kind = Relaxation::BlockInfo::Kind::Localizing;
    info.support_index = (int)gi;
    info.basis_degree = (uint32_t)dloc;
    R.block_info.push_back(info);
  }

  // Boundary measures: plain moment structure over the state variables plus
  // localizing rows for the state-only part of the support set.
  auto add_boundary_blocks = [&](size_t offset, int which) {
    std::vector<MultiIndex> brows;
    for (const auto& m : R.boundary_basis)
      if (m.degree() <= (uint32_t)order) brows.push_back(m);
    ConeBlock blk;
    blk.type = ConeBlock::Type::PSD;
    blk.dim = (int)brows.size();
    for (size_t i = 0; i < brows.size(); i++)
      for (size_t j = i; j < brows.size(); j++)
        blk.entries.push_back(
            {(int)i, (int)j, offset + bslot.at(brows[i].plus(brows[j])), 1.0});
    prog.blocks.push_back(std::move(blk));
    Relaxation::BlockInfo binfo;
    binfo.kind = Relaxation::BlockInfo::Kind::BoundaryMoment;
    binfo.boundary = which;
    binfo.basis_degree = (uint32_t)order;
    R.block_info.push_back(binfo);

    for (size_t gi = 0; gi < C.support.size(); gi++) {
      const Polynomial& g = C.support[gi];
      if (!states_only(g, n) || g.degree() == 0) continue;
      int dloc = order - (int)((g.degree() + 1) / 2);
      if (dloc < 0) continue;
      std::vector<MultiIndex> rows_loc;
      for (const auto& m : R.boundary_basis)
        if (m.degree() <= (uint32_t)dloc) rows_loc.push_back(m);
      ConeBlock lblk;
      lblk.type = ConeBlock::Type::PSD;
      lblk.dim = (int)rows_loc.size();
      for (size_t i = 0; i < rows_loc.size(); i++)
        for (size_t j = i; j < rows_loc.size(); j++) {
          MultiIndex base = rows_loc[i].plus(rows_loc[j]);
          for (const auto& [gm, gc] : g.terms())
            lblk.entries.push_back(
                {(int)i, (int)j, offset + bslot.at(base.plus(slice_states(gm, n))), gc});
        }
      prog.blocks.push_back(std::move(lblk));
      Relaxation::BlockInfo linfo;
      linfo.kind = Relaxation::BlockInfo::Kind::BoundaryLocalizing;
      linfo.support_index = (int)gi;
      linfo.boundary = which;
      linfo.basis_degree = (uint32_t)dloc;
      R.block_info.push_back(linfo);
    }
  };
  if (R.free_initial) add_boundary_blocks(R.mu0_offset, 0);
  if (R.free_terminal) add_boundary_blocks(R.muf_offset, 1);

  if (C.source.control.mass_bound) {
    ConeBlock blk;
    blk.type = ConeBlock::Type::NonNeg;
    blk.dim = 1;
    for (const auto& [slot, c] : red.reduce_poly(C.mass_integrand))
      blk.entries.push_back({0, 0, slot, -c});
    blk.constants.push_back({0, 0, 0, *C.source.control.mass_bound});
    prog.blocks.push_back(std::move(blk));
    Relaxation::BlockInfo info;
    info.kind = Relaxation::BlockInfo::Kind::MassBound;
    R.block_info.push_back(info);
  }

  prog.mass_index = 0;
  prog.init_hint.assign(total, 0.0);
  prog.init_hint[0] = 3.0;  // unit horizon plus room for concentration
  if (R.free_initial) prog.init_hint[R.mu0_offset] = 1.0;
  if (R.free_terminal) prog.init_hint[R.muf_offset] = 1.0;

  return R;
}

std::string dump_program(const Relaxation& R) {
  std::ostringstream os;
  const ConicProgram& p = R.program;
  os << "momentoc-program 1\n";
  os << "order " << R.order << "\n";
  os << "vars " << p.n_vars << " rows " << p.rows.size() << " blocks " << p.blocks.size()
     << "\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (size_t j = 0; j < p.cost.size(); j++)
    if (p.cost[j] != 0.0) os << "c " << j << " " << num(p.cost[j]) << "\n";
  for (size_t r = 0; r < p.rows.size(); r++) {
    os << "b " << r << " " << num(p.rows[r].rhs) << "\n";
    for (const auto& [j, c] : p.rows[r].terms) os << "e " << r << " " << j << " " << num(c) << "\n";
  }
  for (size_t k = 0; k < p.blocks.size(); k++) {
    const auto& blk = p.blocks[k];
    os << "k " << k << " " << (blk.type == ConeBlock::Type::PSD ? "psd" : "nonneg") << " "
       << blk.dim << "\n";
    for (const auto& e : blk.entries)
      os << "a " << k << " " << e.r << " " << e.c << " " << e.var << " " << num(e.coeff) << "\n";
    for (const auto& e : blk.constants)
      os << "C " << k << " " << e.r << " " << e.c << " " << num(e.coeff) << "\n";
  }
  return os.str();
}

}  // namespace momentoc
