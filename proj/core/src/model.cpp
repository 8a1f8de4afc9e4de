#include "prsense/model.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "prsense/lp.hpp"

namespace prsense {

namespace {

constexpr double kRowSumTol = 1e-9;
constexpr double kInitTol = 1e-12;

void check_distribution(const std::vector<double>& d, int n, const char* what) {
  if (static_cast<int>(d.size()) != n) throw ValidationError(std::string(what) + ": wrong length");
  double sum = 0.0;
  for (double v : d) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + ": negative or non-finite entry");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > kInitTol) throw ValidationError(std::string(what) + ": entries do not sum to 1");
}

}  // namespace

void Pmc::validate_structure() const {
  if (n_states <= 0) throw ValidationError("pmc: no states");
  check_distribution(initial, n_states, "initial distribution");
  if (static_cast<int>(rewards.size()) != n_states) throw ValidationError("pmc: rewards length");
  if (static_cast<int>(terminal.size()) != n_states) throw ValidationError("pmc: terminal mask length");
  if (static_cast<int>(rows.size()) != n_states) throw ValidationError("pmc: rows length");
  bool any_terminal = false;
  for (int s = 0; s < n_states; ++s) {
    if (is_terminal(s)) {
      any_terminal = true;
      if (!rows[static_cast<std::size_t>(s)].empty())
        throw ValidationError("pmc: terminal state " + std::to_string(s) + " has outgoing transitions");
      continue;
    }
    if (rows[static_cast<std::size_t>(s)].empty())
      throw ValidationError("pmc: non-terminal state " + std::to_string(s) + " has no transitions");
    int prev = -1;
    for (const auto& [succ, e] : rows[static_cast<std::size_t>(s)]) {
      if (succ < 0 || succ >= n_states) throw ValidationError("pmc: successor out of range");
      if (succ <= prev) throw ValidationError("pmc: successors not sorted/unique in state " + std::to_string(s));
      prev = succ;
      (void)e;
    }
  }
  if (!any_terminal) throw ValidationError("pmc: no terminal state");
}

void Prmc::validate_structure() const {
  if (n_states <= 0) throw ValidationError("prmc: no states");
  check_distribution(initial, n_states, "initial distribution");
  if (static_cast<int>(rewards.size()) != n_states) throw ValidationError("prmc: rewards length");
  if (static_cast<int>(terminal.size()) != n_states) throw ValidationError("prmc: terminal mask length");
  if (static_cast<int>(polytopes.size()) != n_states) throw ValidationError("prmc: polytopes length");
  bool any_terminal = false;
  for (int s = 0; s < n_states; ++s) {
    const ParametricPolytope& t = polytopes[static_cast<std::size_t>(s)];
    if (is_terminal(s)) {
      any_terminal = true;
      if (t.num_rows() != 0 || t.num_successors() != 0)
        throw ValidationError("prmc: terminal state " + std::to_string(s) + " has an uncertainty set");
      continue;
    }
    if (t.num_successors() == 0) throw ValidationError("prmc: state " + std::to_string(s) + " has no successors");
    if (t.num_rows() < 1) throw ValidationError("prmc: state " + std::to_string(s) + " has no polytope rows");
    int prev = -1;
    for (int succ : t.support) {
      if (succ < 0 || succ >= n_states) throw ValidationError("prmc: successor out of range");
      if (succ <= prev) throw ValidationError("prmc: support not sorted/unique in state " + std::to_string(s));
      prev = succ;
    }
    for (const auto& row : t.rows)
      if (static_cast<int>(row.size()) != t.num_successors())
        throw ValidationError("prmc: polytope row width mismatch in state " + std::to_string(s));
  }
  if (!any_terminal) throw ValidationError("prmc: no terminal state");
}

ConcreteMc instantiate_pmc(const Pmc& m, const Instantiation& u) {
  m.validate_structure();
  if (u.size() != m.params.size()) throw MissingParameter("instantiation has wrong dimension");
  ConcreteMc out;
  out.n_states = m.n_states;
  out.initial = m.initial;
  out.rewards = m.rewards;
  out.terminal = m.terminal;
  out.rows.resize(static_cast<std::size_t>(m.n_states));
  for (int s = 0; s < m.n_states; ++s) {
    if (m.is_terminal(s)) continue;
    double sum = 0.0;
    auto& row = out.rows[static_cast<std::size_t>(s)];
    row.reserve(m.rows[static_cast<std::size_t>(s)].size());
    for (const auto& [succ, e] : m.rows[static_cast<std::size_t>(s)]) {
      const double p = e.evaluate(u);
      if (!(p > 0.0) || p > 1.0 + kRowSumTol)
        throw GraphPreservationError("state " + std::to_string(s) + " -> " + std::to_string(succ) +
                                     ": probability " + std::to_string(p) + " leaves (0,1]");
      row.emplace_back(succ, p);
      sum += p;
    }
    if (std::fabs(sum - 1.0) > kRowSumTol)
      throw GraphPreservationError("state " + std::to_string(s) + ": row sums to " + std::to_string(sum));
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> ConcretePolytope::interval_bounds() const {
  const int n = num_successors();
  std::vector<double> lo(static_cast<std::size_t>(n)), hi(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    hi[static_cast<std::size_t>(j)] = b[static_cast<std::size_t>(2 * j)];
    lo[static_cast<std::size_t>(j)] = -b[static_cast<std::size_t>(2 * j + 1)];
  }
  return {lo, hi};
}

namespace {

bool interval_nonempty(const ConcretePolytope& t) {
  auto [lo, hi] = t.interval_bounds();
  double lsum = 0.0, usum = 0.0;
  for (std::size_t j = 0; j < lo.size(); ++j) {
    if (lo[j] > hi[j] + 1e-12) return false;
    lsum += lo[j];
    usum += hi[j];
  }
  return lsum <= 1.0 + 1e-12 && usum >= 1.0 - 1e-12;
}

bool polytope_nonempty_lp(const ConcretePolytope& t) {
  LinearProgram lp(LpSense::minimize);
  const int n = t.num_successors();
  for (int j = 0; j < n; ++j) lp.add_variable(-kInf, kInf, 0.0);
  for (int i = 0; i < t.num_rows(); ++i) {
    std::vector<std::pair<int, double>> coeffs;
    for (int j = 0; j < n; ++j)
      if (t.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] != 0.0)
        coeffs.emplace_back(j, t.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    lp.add_row(std::move(coeffs), '<', t.b[static_cast<std::size_t>(i)]);
  }
  std::vector<std::pair<int, double>> ones;
  for (int j = 0; j < n; ++j) ones.emplace_back(j, 1.0);
  lp.add_row(std::move(ones), '=', 1.0);
  return solve_lp(lp).optimal();
}

}  // namespace

ConcreteRmc instantiate_prmc(const Prmc& m, const Instantiation& u) {
  m.validate_structure();
  if (u.size() != m.params.size()) throw MissingParameter("instantiation has wrong dimension");
  ConcreteRmc out;
  out.n_states = m.n_states;
  out.initial = m.initial;
  out.rewards = m.rewards;
  out.terminal = m.terminal;
  out.polytopes.resize(static_cast<std::size_t>(m.n_states));
  for (int s = 0; s < m.n_states; ++s) {
    if (m.is_terminal(s)) continue;
    const ParametricPolytope& src = m.polytopes[static_cast<std::size_t>(s)];
    ConcretePolytope& dst = out.polytopes[static_cast<std::size_t>(s)];
    dst.support = src.support;
    dst.interval_pairs = src.interval_pairs;
    dst.b.resize(static_cast<std::size_t>(src.num_rows()));
    dst.a.resize(static_cast<std::size_t>(src.num_rows()));
    for (int i = 0; i < src.num_rows(); ++i) {
      dst.b[static_cast<std::size_t>(i)] = src.rhs[static_cast<std::size_t>(i)].evaluate(u);
      auto& arow = dst.a[static_cast<std::size_t>(i)];
      arow.resize(static_cast<std::size_t>(src.num_successors()));
      for (int j = 0; j < src.num_successors(); ++j)
        arow[static_cast<std::size_t>(j)] = src.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].evaluate(u);
    }
    const bool ok = dst.interval_pairs ? interval_nonempty(dst) : polytope_nonempty_lp(dst);
    if (!ok)
      throw EmptyUncertaintySet(s, "state " + std::to_string(s) + ": instantiated uncertainty set is empty");
  }
  return out;
}

Prmc interval_prmc(const Pmc& skeleton,
                   const std::vector<std::vector<Expr>>& lowers,
                   const std::vector<std::vector<Expr>>& uppers) {
  skeleton.validate_structure();
  if (static_cast<int>(lowers.size()) != skeleton.n_states || static_cast<int>(uppers.size()) != skeleton.n_states)
    throw ValidationError("interval_prmc: bound shape mismatch");
  Prmc out;
  out.n_states = skeleton.n_states;
  out.initial = skeleton.initial;
  out.rewards = skeleton.rewards;
  out.terminal = skeleton.terminal;
  out.params = skeleton.params;
  out.polytopes.resize(static_cast<std::size_t>(out.n_states));
  for (int s = 0; s < out.n_states; ++s) {
    if (skeleton.is_terminal(s)) {
      if (!lowers[static_cast<std::size_t>(s)].empty() || !uppers[static_cast<std::size_t>(s)].empty())
        throw ValidationError("interval_prmc: bounds given for terminal state " + std::to_string(s));
      continue;
    }
    const auto& srow = skeleton.rows[static_cast<std::size_t>(s)];
    const auto& lo = lowers[static_cast<std::size_t>(s)];
    const auto& hi = uppers[static_cast<std::size_t>(s)];
    if (lo.size() != srow.size() || hi.size() != srow.size())
      throw ValidationError("interval_prmc: bound count mismatch in state " + std::to_string(s));
    ParametricPolytope& t = out.polytopes[static_cast<std::size_t>(s)];
    t.interval_pairs = true;
    const int n = static_cast<int>(srow.size());
    t.support.reserve(static_cast<std::size_t>(n));
    for (const auto& [succ, e] : srow) {
      t.support.push_back(succ);
      (void)e;
    }
    for (int j = 0; j < n; ++j) {
      std::vector<Expr> up(static_cast<std::size_t>(n), Expr::constant(0LL));
      std::vector<Expr> dn(static_cast<std::size_t>(n), Expr::constant(0LL));
      up[static_cast<std::size_t>(j)] = Expr::constant(1LL);
      dn[static_cast<std::size_t>(j)] = Expr::constant(-1LL);
      t.rows.push_back(std::move(up));
      t.rhs.push_back(hi[static_cast<std::size_t>(j)]);
      t.rows.push_back(std::move(dn));
      t.rhs.push_back(-lo[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

std::vector<char> terminal_reaching_states(const ConcreteMc& mc) {
  // Backward BFS from the terminal set over reversed edges.
  std::vector<std::vector<int>> preds(static_cast<std::size_t>(mc.n_states));
  for (int s = 0; s < mc.n_states; ++s)
    for (const auto& [succ, p] : mc.rows[static_cast<std::size_t>(s)]) {
      preds[static_cast<std::size_t>(succ)].push_back(s);
      (void)p;
    }
  std::vector<char> reaches(static_cast<std::size_t>(mc.n_states), 0);
  std::deque<int> queue;
  for (int s = 0; s < mc.n_states; ++s)
    if (mc.is_terminal(s)) {
      reaches[static_cast<std::size_t>(s)] = 1;
      queue.push_back(s);
    }
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    for (int p : preds[static_cast<std::size_t>(s)])
      if (!reaches[static_cast<std::size_t>(p)]) {
        reaches[static_cast<std::size_t>(p)] = 1;
        queue.push_back(p);
      }
  }
  return reaches;
}

std::vector<char> reachable_states(const ConcreteMc& mc) {
  std::vector<char> seen(static_cast<std::size_t>(mc.n_states), 0);
  std::deque<int> queue;
  for (int s = 0; s < mc.n_states; ++s)
    if (mc.initial[static_cast<std::size_t>(s)] > 0.0) {
      seen[static_cast<std::size_t>(s)] = 1;
      queue.push_back(s);
    }
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    for (const auto& [succ, p] : mc.rows[static_cast<std::size_t>(s)]) {
      (void)p;
      if (!seen[static_cast<std::size_t>(succ)]) {
        seen[static_cast<std::size_t>(succ)] = 1;
        queue.push_back(succ);
      }
    }
  }
  return seen;
}

}  // namespace prsense
