#include "prsense/pmc.hpp"

#include <algorithm>
#include <cmath>

#include "prsense/lp.hpp"

namespace prsense {

namespace {

struct ParamTerm {
  int sys_row;   // row in the reduced system
  int succ;      // successor state (full index)
  double dvalue; // dP(s,succ)/dv at u
};

}  // namespace

struct PmcAnalysis::Impl {
  ConcreteMc mc;
  const Pmc* model;
  Instantiation u;

  // States that almost surely reach the terminal set ("solvable"); the
  // equation system is restricted to the non-terminal ones.
  std::vector<char> solvable;
  std::vector<int> sys_index;   // full state -> row in system, -1 outside
  std::vector<int> sys_states;  // row -> full state
  std::unique_ptr<SparseLuSolver> lu;
  PmcSolution solution;

  // Per-parameter nonzero derivative entries of P[u], grouped by parameter.
  mutable std::vector<std::vector<ParamTerm>> param_terms;
  mutable bool terms_built = false;

  void build_param_terms() const {
    if (terms_built) return;
    param_terms.assign(static_cast<std::size_t>(model->params.size()), {});
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      for (const auto& [succ, e] : model->rows[static_cast<std::size_t>(s)]) {
        for (int v : e.params()) {
          const double dv = e.differentiate(v).evaluate(u);
          if (dv != 0.0) param_terms[static_cast<std::size_t>(v)].push_back({static_cast<int>(r), succ, dv});
        }
      }
    }
    terms_built = true;
  }

  std::vector<double> rhs_for(int param) const {
    build_param_terms();
    std::vector<double> d(sys_states.size(), 0.0);
    for (const ParamTerm& t : param_terms[static_cast<std::size_t>(param)])
      d[static_cast<std::size_t>(t.sys_row)] += t.dvalue * solution.x[static_cast<std::size_t>(t.succ)];
    return d;
  }

  double adjoint_dot(int param, const std::vector<double>& g) const {
    double acc = 0.0;
    for (const ParamTerm& t : param_terms[static_cast<std::size_t>(param)])
      acc += g[static_cast<std::size_t>(t.sys_row)] * t.dvalue * solution.x[static_cast<std::size_t>(t.succ)];
    return acc;
  }

  std::vector<double> sys_initial() const {
    std::vector<double> si(sys_states.size(), 0.0);
    for (std::size_t r = 0; r < sys_states.size(); ++r) si[r] = mc.initial[static_cast<std::size_t>(sys_states[r])];
    return si;
  }
};

PmcAnalysis::PmcAnalysis(const Pmc& m, const Instantiation& u) : impl_(std::make_unique<Impl>()) {
  impl_->model = &m;
  impl_->u = u;
  impl_->mc = instantiate_pmc(m, u);
  const ConcreteMc& mc = impl_->mc;

  // Almost-sure absorption holds exactly on the set of states with no path
  // into a state that cannot reach the terminals.
  const std::vector<char> reaches = terminal_reaching_states(mc);
  std::vector<char> tainted(static_cast<std::size_t>(mc.n_states), 0);
  for (int s = 0; s < mc.n_states; ++s)
    if (!reaches[static_cast<std::size_t>(s)]) tainted[static_cast<std::size_t>(s)] = 1;
  // Propagate taint backwards until fixpoint.
  bool changed = true;
  while (changed) {
    changed = false;
    for (int s = 0; s < mc.n_states; ++s) {
      if (tainted[static_cast<std::size_t>(s)]) continue;
      for (const auto& [succ, p] : mc.rows[static_cast<std::size_t>(s)]) {
        (void)p;
        if (tainted[static_cast<std::size_t>(succ)]) {
          tainted[static_cast<std::size_t>(s)] = 1;
          changed = true;
          break;
        }
      }
    }
  }
  impl_->solvable.assign(static_cast<std::size_t>(mc.n_states), 0);
  for (int s = 0; s < mc.n_states; ++s) impl_->solvable[static_cast<std::size_t>(s)] = !tainted[static_cast<std::size_t>(s)];

  const std::vector<char> reachable = reachable_states(mc);
  for (int s = 0; s < mc.n_states; ++s)
    if (reachable[static_cast<std::size_t>(s)] && !impl_->solvable[static_cast<std::size_t>(s)])
      throw SingularMatrix("state " + std::to_string(s) +
                           " is reachable but does not reach the terminal states almost surely");

  impl_->sys_index.assign(static_cast<std::size_t>(mc.n_states), -1);
  for (int s = 0; s < mc.n_states; ++s)
    if (impl_->solvable[static_cast<std::size_t>(s)] && !mc.is_terminal(s)) {
      impl_->sys_index[static_cast<std::size_t>(s)] = static_cast<int>(impl_->sys_states.size());
      impl_->sys_states.push_back(s);
    }

  // (I - P[u]) restricted to the system states; successors outside carry
  // x = 0 and drop out.
  const int ns = static_cast<int>(impl_->sys_states.size());
  std::vector<SparseMatrix::Triplet> trip;
  trip.reserve(static_cast<std::size_t>(ns) * 4);
  for (int r = 0; r < ns; ++r) {
    const int s = impl_->sys_states[static_cast<std::size_t>(r)];
    trip.push_back({r, r, 1.0});
    for (const auto& [succ, p] : mc.rows[static_cast<std::size_t>(s)]) {
      const int rc = impl_->sys_index[static_cast<std::size_t>(succ)];
      if (rc >= 0) trip.push_back({r, rc, -p});
    }
  }
  impl_->lu = std::make_unique<SparseLuSolver>(SparseMatrix::from_triplets(ns, ns, std::move(trip)));

  std::vector<double> r(static_cast<std::size_t>(ns));
  for (int i = 0; i < ns; ++i) r[static_cast<std::size_t>(i)] = mc.rewards[static_cast<std::size_t>(impl_->sys_states[static_cast<std::size_t>(i)])];
  const std::vector<double> xs = impl_->lu->solve(r);
  impl_->solution.x.assign(static_cast<std::size_t>(mc.n_states), 0.0);
  for (int i = 0; i < ns; ++i) impl_->solution.x[static_cast<std::size_t>(impl_->sys_states[static_cast<std::size_t>(i)])] = xs[static_cast<std::size_t>(i)];
  double sol = 0.0;
  for (int s = 0; s < mc.n_states; ++s) sol += mc.initial[static_cast<std::size_t>(s)] * impl_->solution.x[static_cast<std::size_t>(s)];
  impl_->solution.sol = sol;
}

PmcAnalysis::~PmcAnalysis() = default;
PmcAnalysis::PmcAnalysis(PmcAnalysis&&) noexcept = default;

const PmcSolution& PmcAnalysis::solution() const { return impl_->solution; }
const ConcreteMc& PmcAnalysis::concrete() const { return impl_->mc; }
int PmcAnalysis::num_params() const { return impl_->model->params.size(); }

std::vector<double> PmcAnalysis::derivative_rhs(int param) const {
  if (param < 0 || param >= num_params()) throw MissingParameter("derivative_rhs: bad parameter id");
  const std::vector<double> d = impl_->rhs_for(param);
  std::vector<double> full(static_cast<std::size_t>(impl_->mc.n_states), 0.0);
  for (std::size_t r = 0; r < impl_->sys_states.size(); ++r) full[static_cast<std::size_t>(impl_->sys_states[r])] = d[r];
  return full;
}

GradientReport PmcAnalysis::gradient_explicit() const {
  const int l = num_params();
  GradientReport rep;
  rep.method = GradientMethod::explicit_solves;
  rep.param_ids.resize(static_cast<std::size_t>(l));
  rep.values.assign(static_cast<std::size_t>(l), 0.0);
  const std::vector<double> si = impl_->sys_initial();
  std::vector<std::vector<double>> rhs;
  rhs.reserve(static_cast<std::size_t>(l));
  for (int v = 0; v < l; ++v) {
    rep.param_ids[static_cast<std::size_t>(v)] = v;
    rhs.push_back(impl_->rhs_for(v));
  }
  const std::vector<std::vector<double>> dx = impl_->lu->solve_many(rhs);
  for (int v = 0; v < l; ++v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < si.size(); ++i) acc += si[i] * dx[static_cast<std::size_t>(v)][i];
    rep.values[static_cast<std::size_t>(v)] = acc;
  }
  return rep;
}

GradientReport PmcAnalysis::gradient_adjoint() const {
  const int l = num_params();
  GradientReport rep;
  rep.method = GradientMethod::adjoint;
  rep.param_ids.resize(static_cast<std::size_t>(l));
  rep.values.assign(static_cast<std::size_t>(l), 0.0);
  impl_->build_param_terms();
  const std::vector<double> g = impl_->lu->solve_transposed(impl_->sys_initial());
  for (int v = 0; v < l; ++v) {
    rep.param_ids[static_cast<std::size_t>(v)] = v;
    rep.values[static_cast<std::size_t>(v)] = impl_->adjoint_dot(v, g);
  }
  return rep;
}

GradientReport PmcAnalysis::derivatives_for_subset(std::span<const int> subset) const {
  GradientReport rep;
  rep.method = GradientMethod::explicit_solves;
  const std::vector<double> si = impl_->sys_initial();
  std::vector<std::vector<double>> rhs;
  for (int v : subset) {
    if (v < 0 || v >= num_params()) throw MissingParameter("derivatives_for_subset: bad parameter id");
    rep.param_ids.push_back(v);
    rhs.push_back(impl_->rhs_for(v));
  }
  const std::vector<std::vector<double>> dx = impl_->lu->solve_many(rhs);
  rep.values.resize(rep.param_ids.size());
  for (std::size_t i = 0; i < rep.param_ids.size(); ++i) {
    double acc = 0.0;
    for (std::size_t r = 0; r < si.size(); ++r) acc += si[r] * dx[i][r];
    rep.values[i] = acc;
  }
  return rep;
}

TopkResult topk_from_gradient(std::span<const double> gradient, int k, Direction direction) {
  const int l = static_cast<int>(gradient.size());
  if (k < 1 || k > l) throw Error("topk: k must be in [1, number of parameters]");
  LinearProgram lp(direction == Direction::highest ? LpSense::maximize : LpSense::minimize);
  for (int i = 0; i < l; ++i) lp.add_variable(0.0, 1.0, gradient[static_cast<std::size_t>(i)]);
  std::vector<std::pair<int, double>> ones;
  ones.reserve(static_cast<std::size_t>(l));
  for (int i = 0; i < l; ++i) ones.emplace_back(i, 1.0);
  lp.add_row(std::move(ones), '=', static_cast<double>(k));
  const LpSolution sol = solve_lp(lp);
  if (!sol.optimal()) throw NumericalError("topk relaxation LP did not solve to optimality");

  TopkResult out;
  out.k = k;
  out.z = sol.x;
  out.lp_objective = sol.objective;
  constexpr double kOneTol = 1e-6;
  std::vector<int> fractional;
  for (int i = 0; i < l; ++i) {
    const double z = sol.x[static_cast<std::size_t>(i)];
    if (z >= 1.0 - kOneTol)
      out.selected.push_back(i);
    else if (z > kOneTol)
      fractional.push_back(i);
  }
  // Vertex solutions are already binary; the tie-break pushes any fractional
  // leftovers to bounds, lower parameter index first.
  for (int i : fractional) {
    if (static_cast<int>(out.selected.size()) >= k) break;
    out.selected.push_back(i);
  }
  if (static_cast<int>(out.selected.size()) != k)
    throw NumericalError("topk relaxation produced an inconsistent selection");
  std::sort(out.selected.begin(), out.selected.end());
  return out;
}

TopkResult PmcAnalysis::topk(int k, Direction direction, bool with_values) const {
  const GradientReport g = gradient_adjoint();
  TopkResult out = topk_from_gradient(g.values, k, direction);
  if (with_values) {
    const GradientReport vals = derivatives_for_subset(out.selected);
    out.values = vals.values;
  }
  return out;
}

PmcSolution solve_expected_reward(const Pmc& m, const Instantiation& u) {
  return PmcAnalysis(m, u).solution();
}

std::vector<double> derivative_rhs(const Pmc& m, const Instantiation& u,
                                   const std::vector<double>& x_star, int param) {
  // Standalone form: recompute from the given x* without a factorization.
  if (param < 0 || param >= m.params.size()) throw MissingParameter("derivative_rhs: bad parameter id");
  if (static_cast<int>(x_star.size()) != m.n_states) throw Error("derivative_rhs: x* has wrong length");
  std::vector<double> d(static_cast<std::size_t>(m.n_states), 0.0);
  for (int s = 0; s < m.n_states; ++s) {
    if (m.is_terminal(s)) continue;
    double acc = 0.0;
    for (const auto& [succ, e] : m.rows[static_cast<std::size_t>(s)])
      if (e.depends_on(param)) acc += e.differentiate(param).evaluate(u) * x_star[static_cast<std::size_t>(succ)];
    d[static_cast<std::size_t>(s)] = acc;
  }
  return d;
}

GradientReport gradient_explicit(const Pmc& m, const Instantiation& u) {
  return PmcAnalysis(m, u).gradient_explicit();
}

GradientReport gradient_adjoint(const Pmc& m, const Instantiation& u) {
  return PmcAnalysis(m, u).gradient_adjoint();
}

GradientReport derivatives_for_subset(const Pmc& m, const Instantiation& u, std::span<const int> subset) {
  return PmcAnalysis(m, u).derivatives_for_subset(subset);
}

TopkResult topk(const Pmc& m, const Instantiation& u, int k, Direction direction, bool with_values) {
  return PmcAnalysis(m, u).topk(k, direction, with_values);
}

}  // namespace prsense
