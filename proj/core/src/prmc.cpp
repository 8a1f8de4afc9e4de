#include "prsense/prmc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prsense/lp.hpp"
#include "prsense/pmc.hpp"
#include "prsense/sparse.hpp"

namespace prsense {

namespace {

constexpr double kGeoTol = 1e-7;        // geometric activity |a p - b|
constexpr double kStabilityTol = 1e-6;  // first-order activity drift
constexpr double kDualConsistencyTol = 1e-7;
constexpr int kMaxPolicyIterations = 1000;

InnerSolution inner_minimize_intervals(const ConcretePolytope& t, std::span<const double> cost) {
  const int n = t.num_successors();
  auto [lo, hi] = t.interval_bounds();
  double lo_sum = 0.0, hi_sum = 0.0;
  for (int j = 0; j < n; ++j) {
    if (lo[static_cast<std::size_t>(j)] > hi[static_cast<std::size_t>(j)] + 1e-12)
      throw EmptyUncertaintySet(-1, "interval lower bound above upper bound");
    lo_sum += lo[static_cast<std::size_t>(j)];
    hi_sum += hi[static_cast<std::size_t>(j)];
  }
  if (lo_sum > 1.0 + 1e-9 || hi_sum < 1.0 - 1e-9)
    throw EmptyUncertaintySet(-1, "interval bounds exclude the probability simplex");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ca = cost[static_cast<std::size_t>(a)], cb = cost[static_cast<std::size_t>(b)];
    return ca != cb ? ca < cb : a < b;
  });

  InnerSolution out;
  out.p = lo;
  double budget = 1.0 - lo_sum;
  if (budget < 0.0) budget = 0.0;
  // Fill cheapest successors to their upper bounds until the mass is spent.
  // split = the successor where the budget ran out; it carries no multiplier.
  int split_pos = 0;
  for (int pos = 0; pos < n; ++pos) {
    const int j = order[static_cast<std::size_t>(pos)];
    const double cap = hi[static_cast<std::size_t>(j)] - lo[static_cast<std::size_t>(j)];
    const double add = std::min(cap, budget);
    out.p[static_cast<std::size_t>(j)] += add;
    budget -= add;
    if (budget <= 1e-15) {
      split_pos = pos;
      budget = 0.0;
      break;
    }
    split_pos = pos;
  }
  if (budget > 1e-9) throw EmptyUncertaintySet(-1, "interval bounds exclude the probability simplex");
  if (budget > 0.0) out.p[static_cast<std::size_t>(order[static_cast<std::size_t>(split_pos)])] += budget;

  const int j0 = order[static_cast<std::size_t>(split_pos)];
  out.beta = -cost[static_cast<std::size_t>(j0)];
  out.alpha.assign(static_cast<std::size_t>(2 * n), 0.0);
  for (int pos = 0; pos < n; ++pos) {
    const int j = order[static_cast<std::size_t>(pos)];
    if (pos < split_pos)
      out.alpha[static_cast<std::size_t>(2 * j)] = cost[static_cast<std::size_t>(j0)] - cost[static_cast<std::size_t>(j)];
    else if (pos > split_pos)
      out.alpha[static_cast<std::size_t>(2 * j + 1)] = cost[static_cast<std::size_t>(j)] - cost[static_cast<std::size_t>(j0)];
  }
  double v = 0.0;
  for (int j = 0; j < n; ++j) v += out.p[static_cast<std::size_t>(j)] * cost[static_cast<std::size_t>(j)];
  out.value = v;
  return out;
}

InnerSolution inner_minimize_lp(const ConcretePolytope& t, std::span<const double> cost) {
  const int n = t.num_successors();
  LinearProgram lp(LpSense::minimize);
  for (int j = 0; j < n; ++j) lp.add_variable(-kInf, kInf, cost[static_cast<std::size_t>(j)]);
  for (int i = 0; i < t.num_rows(); ++i) {
    std::vector<std::pair<int, double>> coeffs;
    for (int j = 0; j < n; ++j) {
      const double a = t.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (a != 0.0) coeffs.emplace_back(j, a);
    }
    lp.add_row(std::move(coeffs), '<', t.b[static_cast<std::size_t>(i)]);
  }
  std::vector<std::pair<int, double>> ones;
  for (int j = 0; j < n; ++j) ones.emplace_back(j, 1.0);
  lp.add_row(std::move(ones), '=', 1.0);

  const LpSolution s = solve_lp(lp);
  if (s.status == LpStatus::infeasible)
    throw EmptyUncertaintySet(-1, "instantiated uncertainty set is empty");
  if (s.status != LpStatus::optimal)
    throw NumericalError("inner minimization unbounded: polytope does not confine the distribution");

  InnerSolution out;
  out.value = s.objective;
  out.p = s.x;
  out.alpha.resize(static_cast<std::size_t>(t.num_rows()));
  for (int i = 0; i < t.num_rows(); ++i) {
    double a = -s.duals[static_cast<std::size_t>(i)];
    if (a < 0.0 && a > -1e-9) a = 0.0;
    out.alpha[static_cast<std::size_t>(i)] = a;
  }
  out.beta = -s.duals[static_cast<std::size_t>(t.num_rows())];
  return out;
}

}  // namespace

InnerSolution inner_minimize(const ConcretePolytope& t, std::span<const double> cost) {
  if (static_cast<int>(cost.size()) != t.num_successors()) throw Error("inner_minimize: cost dimension mismatch");
  return t.interval_pairs ? inner_minimize_intervals(t, cost) : inner_minimize_lp(t, cost);
}

std::vector<std::vector<char>> extract_active_sets(const RobustSolution& sol) {
  std::vector<std::vector<char>> e(sol.alpha.size());
  for (std::size_t s = 0; s < sol.alpha.size(); ++s) {
    e[s].resize(sol.alpha[s].size());
    for (std::size_t j = 0; j < sol.alpha[s].size(); ++j) e[s][j] = sol.alpha[s][j] > kActiveTol ? 1 : 0;
  }
  return e;
}

struct PrmcAnalysis::Impl {
  const Prmc* model = nullptr;
  Instantiation u;
  ConcreteRmc rm;

  std::vector<char> solvable;
  std::vector<int> sys_index;   // state -> system row, -1 outside
  std::vector<int> sys_states;  // system row -> state

  std::vector<std::vector<double>> adversary;  // per system row, over support
  bool have_adversary = false;

  RobustSolution sol;
  bool solved = false;

  DifferentiabilityVerdict verdict;
  bool verdict_done = false;

  // Reduced derivative system C (Theorem 2 with inactive alpha columns
  // dropped): x block first, then per system state its active alphas and
  // beta. Value rows coincide with state indices; stationarity rows follow.
  std::unique_ptr<SparseLuSolver> c_lu;
  int q = 0;
  std::vector<int> stat_row0;                                  // per system row
  std::vector<std::vector<int>> active_rows;                   // per system row
  std::vector<std::vector<std::pair<int, double>>> c_terms;    // per param: (row, coef)

  // --- robust solving -----------------------------------------------------

  ConcreteMc chain_for(const std::vector<std::vector<double>>& adv) const {
    ConcreteMc mc;
    mc.n_states = rm.n_states;
    mc.initial = rm.initial;
    mc.rewards = rm.rewards;
    mc.terminal = rm.terminal;
    mc.rows.resize(static_cast<std::size_t>(rm.n_states));
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      const auto& sup = rm.polytopes[static_cast<std::size_t>(s)].support;
      auto& row = mc.rows[static_cast<std::size_t>(s)];
      for (std::size_t j = 0; j < sup.size(); ++j) row.emplace_back(sup[j], adv[r][j]);
    }
    return mc;
  }

  std::vector<double> evaluate_adversary() const {
    const int ns = static_cast<int>(sys_states.size());
    std::vector<SparseMatrix::Triplet> trip;
    trip.reserve(static_cast<std::size_t>(ns) * 4);
    for (int r = 0; r < ns; ++r) {
      const int s = sys_states[static_cast<std::size_t>(r)];
      trip.push_back({r, r, 1.0});
      const auto& sup = rm.polytopes[static_cast<std::size_t>(s)].support;
      for (std::size_t j = 0; j < sup.size(); ++j) {
        const int rc = sys_index[static_cast<std::size_t>(sup[j])];
        if (rc >= 0) trip.push_back({r, rc, -adversary[static_cast<std::size_t>(r)][j]});
      }
    }
    SparseLuSolver lu(SparseMatrix::from_triplets(ns, ns, std::move(trip)));
    std::vector<double> rr(static_cast<std::size_t>(ns));
    for (int r = 0; r < ns; ++r) rr[static_cast<std::size_t>(r)] = rm.rewards[static_cast<std::size_t>(sys_states[static_cast<std::size_t>(r)])];
    const std::vector<double> xs = lu.solve(rr);
    std::vector<double> x(static_cast<std::size_t>(rm.n_states), 0.0);
    for (int r = 0; r < ns; ++r) x[static_cast<std::size_t>(sys_states[static_cast<std::size_t>(r)])] = xs[static_cast<std::size_t>(r)];
    return x;
  }

  void init_adversary() {
    if (have_adversary) return;
    adversary.resize(sys_states.size());
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const ConcretePolytope& t = rm.polytopes[static_cast<std::size_t>(sys_states[r])];
      std::vector<double> zero(static_cast<std::size_t>(t.num_successors()), 0.0);
      InnerSolution is = inner_minimize(t, zero);
      adversary[r] = std::move(is.p);
    }
    have_adversary = true;
  }

  void run_policy_iteration() {
    if (solved) return;
    init_adversary();
    const int n = rm.n_states;
    std::vector<InnerSolution> inner(sys_states.size());
    std::vector<double> x;
    int iter = 0;
    while (true) {
      if (++iter > kMaxPolicyIterations)
        throw NumericalError("robust solve: policy iteration did not converge");
      x = evaluate_adversary();
      bool improved = false;
      for (std::size_t r = 0; r < sys_states.size(); ++r) {
        const int s = sys_states[r];
        const ConcretePolytope& t = rm.polytopes[static_cast<std::size_t>(s)];
        std::vector<double> cost(static_cast<std::size_t>(t.num_successors()));
        for (int j = 0; j < t.num_successors(); ++j)
          cost[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(t.support[static_cast<std::size_t>(j)])];
        InnerSolution is;
        try {
          is = inner_minimize(t, cost);
        } catch (const EmptyUncertaintySet&) {
          throw EmptyUncertaintySet(s, "state " + std::to_string(s) + ": uncertainty set is empty");
        }
        double cur = 0.0;
        for (int j = 0; j < t.num_successors(); ++j) cur += adversary[r][static_cast<std::size_t>(j)] * cost[static_cast<std::size_t>(j)];
        if (is.value < cur - 1e-12 * (1.0 + std::fabs(cur))) {
          adversary[r] = is.p;
          improved = true;
        }
        inner[r] = std::move(is);
      }
      if (!improved) break;
    }

    sol.x = x;
    sol.sol = 0.0;
    for (int s = 0; s < n; ++s) sol.sol += rm.initial[static_cast<std::size_t>(s)] * x[static_cast<std::size_t>(s)];
    sol.alpha.assign(static_cast<std::size_t>(n), {});
    sol.beta.assign(static_cast<std::size_t>(n), 0.0);
    sol.worst_case.assign(static_cast<std::size_t>(n), {});
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      sol.alpha[static_cast<std::size_t>(s)] = inner[r].alpha;
      sol.beta[static_cast<std::size_t>(s)] = inner[r].beta;
      sol.worst_case[static_cast<std::size_t>(s)] = inner[r].p;
    }
    sol.active = extract_active_sets(sol);
    verify_dual_consistency();
    solved = true;
  }

  // Both constraint families of the robust LP must hold at the assembled
  // optimum; a breach means the policy iteration or the duals are off.
  void verify_dual_consistency() const {
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      const ConcretePolytope& t = rm.polytopes[static_cast<std::size_t>(s)];
      const auto& alpha = sol.alpha[static_cast<std::size_t>(s)];
      const double beta = sol.beta[static_cast<std::size_t>(s)];
      double ba = 0.0;
      for (int i = 0; i < t.num_rows(); ++i) ba += t.b[static_cast<std::size_t>(i)] * alpha[static_cast<std::size_t>(i)];
      const double lhs = sol.x[static_cast<std::size_t>(s)];
      const double rhs = rm.rewards[static_cast<std::size_t>(s)] - (ba + beta);
      const double scale = 1.0 + std::fabs(lhs);
      if (std::fabs(lhs - rhs) > kDualConsistencyTol * scale)
        throw NumericalError("robust solve: value/dual consistency failed at state " + std::to_string(s));
      for (int j = 0; j < t.num_successors(); ++j) {
        double acc = sol.x[static_cast<std::size_t>(t.support[static_cast<std::size_t>(j)])] + beta;
        for (int i = 0; i < t.num_rows(); ++i)
          acc += t.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * alpha[static_cast<std::size_t>(i)];
        if (std::fabs(acc) > kDualConsistencyTol * scale)
          throw NumericalError("robust solve: stationarity failed at state " + std::to_string(s));
      }
    }
  }

  // --- differentiability --------------------------------------------------

  // Dense LU solve of the tiny per-state pin system; returns false when the
  // matrix is numerically singular.
  static bool dense_solve(std::vector<double> a, int n, std::vector<double>& rhs) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int c = 0; c < n; ++c) {
      int piv = -1;
      double best = 1e-12;
      for (int r = c; r < n; ++r) {
        const double v = std::fabs(a[static_cast<std::size_t>(r) * n + c]);
        if (v > best) {
          best = v;
          piv = r;
        }
      }
      if (piv < 0) return false;
      if (piv != c) {
        for (int j = 0; j < n; ++j) std::swap(a[static_cast<std::size_t>(piv) * n + j], a[static_cast<std::size_t>(c) * n + j]);
        std::swap(rhs[static_cast<std::size_t>(piv)], rhs[static_cast<std::size_t>(c)]);
      }
      const double d = a[static_cast<std::size_t>(c) * n + c];
      for (int r = c + 1; r < n; ++r) {
        const double f = a[static_cast<std::size_t>(r) * n + c] / d;
        if (f == 0.0) continue;
        for (int j = c; j < n; ++j) a[static_cast<std::size_t>(r) * n + j] -= f * a[static_cast<std::size_t>(c) * n + j];
        rhs[static_cast<std::size_t>(r)] -= f * rhs[static_cast<std::size_t>(c)];
      }
    }
    for (int r = n - 1; r >= 0; --r) {
      double acc = rhs[static_cast<std::size_t>(r)];
      for (int j = r + 1; j < n; ++j) acc -= a[static_cast<std::size_t>(r) * n + j] * rhs[static_cast<std::size_t>(j)];
      rhs[static_cast<std::size_t>(r)] = acc / a[static_cast<std::size_t>(r) * n + r];
    }
    return true;
  }

  // First-order stability of degenerate active rows: rows geometrically
  // active but carrying zero multiplier must stay active under the movement
  // of p* implied by the alpha-selected pin system, for every parameter
  // direction. Point-interval pairs pass identically; a genuinely
  // overdetermined corner fails for some direction.
  bool degenerate_rows_stable(int s, const std::vector<int>& e_rows, const std::vector<int>& extra_rows,
                              const std::vector<double>& p) const {
    const ParametricPolytope& pt = model->polytopes[static_cast<std::size_t>(s)];
    const ConcretePolytope& ct = rm.polytopes[static_cast<std::size_t>(s)];
    const int n = ct.num_successors();

    std::set<int> params;
    auto add_params = [&](int row) {
      pt.rhs[static_cast<std::size_t>(row)].collect_params(params);
      for (int j = 0; j < n; ++j) pt.rows[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)].collect_params(params);
    };
    for (int j : e_rows) add_params(j);
    for (int j : extra_rows) add_params(j);
    if (params.empty()) return true;

    // Pin system K = [a_j (j in E); 1^T].
    std::vector<double> k(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t i = 0; i < e_rows.size(); ++i)
      for (int j = 0; j < n; ++j)
        k[i * n + static_cast<std::size_t>(j)] = ct.a[static_cast<std::size_t>(e_rows[i])][static_cast<std::size_t>(j)];
    for (int j = 0; j < n; ++j) k[static_cast<std::size_t>(n - 1) * n + static_cast<std::size_t>(j)] = 1.0;

    for (int v : params) {
      std::vector<double> rhs(static_cast<std::size_t>(n), 0.0);
      for (std::size_t i = 0; i < e_rows.size(); ++i) {
        const int row = e_rows[i];
        double acc = pt.rhs[static_cast<std::size_t>(row)].differentiate(v).evaluate(u);
        for (int j = 0; j < n; ++j) {
          const Expr& aexp = pt.rows[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)];
          if (aexp.depends_on(v)) acc -= aexp.differentiate(v).evaluate(u) * p[static_cast<std::size_t>(j)];
        }
        rhs[i] = acc;
      }
      std::vector<double> dp = rhs;
      if (!dense_solve(k, n, dp)) return false;
      for (int row : extra_rows) {
        double drift = -pt.rhs[static_cast<std::size_t>(row)].differentiate(v).evaluate(u);
        for (int j = 0; j < n; ++j) {
          const Expr& aexp = pt.rows[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)];
          drift += ct.a[static_cast<std::size_t>(row)][static_cast<std::size_t>(j)] * dp[static_cast<std::size_t>(j)];
          if (aexp.depends_on(v)) drift += aexp.differentiate(v).evaluate(u) * p[static_cast<std::size_t>(j)];
        }
        if (std::fabs(drift) > kStabilityTol * (1.0 + std::fabs(ct.b[static_cast<std::size_t>(row)]))) return false;
      }
    }
    return true;
  }

  void compute_verdict() {
    if (verdict_done) return;
    run_policy_iteration();
    verdict = DifferentiabilityVerdict{};
    active_rows.assign(sys_states.size(), {});

    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      const ConcretePolytope& t = rm.polytopes[static_cast<std::size_t>(s)];
      const int n = t.num_successors();
      const auto& alpha = sol.alpha[static_cast<std::size_t>(s)];
      std::vector<int> e_rows;
      for (int i = 0; i < t.num_rows(); ++i)
        if (alpha[static_cast<std::size_t>(i)] > kActiveTol) e_rows.push_back(i);
      const int n_act = static_cast<int>(e_rows.size());

      VerdictReason reason = VerdictReason::none;
      if (n_act < n - 1) {
        reason = VerdictReason::underdetermined;
      } else if (n_act > n - 1) {
        reason = VerdictReason::overdetermined;
      } else {
        const auto& p = sol.worst_case[static_cast<std::size_t>(s)];
        std::vector<int> extra;
        for (int i = 0; i < t.num_rows(); ++i) {
          if (alpha[static_cast<std::size_t>(i)] > kActiveTol) continue;
          double resid = -t.b[static_cast<std::size_t>(i)];
          for (int j = 0; j < n; ++j) resid += t.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] * p[static_cast<std::size_t>(j)];
          if (std::fabs(resid) <= kGeoTol * (1.0 + std::fabs(t.b[static_cast<std::size_t>(i)]))) extra.push_back(i);
        }
        if (!extra.empty() && !degenerate_rows_stable(s, e_rows, extra, p))
          reason = VerdictReason::overdetermined;
      }

      if (reason != VerdictReason::none)
        verdict.failures.push_back({s, n, n_act, reason});
      else
        active_rows[r] = std::move(e_rows);
    }

    if (!verdict.failures.empty()) {
      verdict.differentiable = false;
      verdict.reason = verdict.failures.front().reason;
      for (const auto& f : verdict.failures)
        if (f.reason == VerdictReason::overdetermined) verdict.reason = VerdictReason::overdetermined;
      verdict_done = true;
      return;
    }

    try {
      build_c_system();
      verdict.differentiable = true;
      verdict.reason = VerdictReason::none;
    } catch (const SingularMatrix&) {
      verdict.differentiable = false;
      verdict.reason = VerdictReason::singular;
      c_lu.reset();
    }
    verdict_done = true;
  }

  // --- Theorem 2 system ---------------------------------------------------

  void build_c_system() {
    const int n = rm.n_states;
    stat_row0.assign(sys_states.size(), 0);
    int row = n;
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      stat_row0[r] = row;
      row += rm.polytopes[static_cast<std::size_t>(sys_states[r])].num_successors();
    }
    q = row;

    std::vector<int> alpha_col0(sys_states.size(), 0), beta_col(sys_states.size(), 0);
    int col = n;
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      alpha_col0[r] = col;
      col += static_cast<int>(active_rows[r].size());
      beta_col[r] = col++;
    }
    if (col != q) throw SingularMatrix("derivative system is not square");

    std::vector<SparseMatrix::Triplet> trip;
    trip.reserve(static_cast<std::size_t>(q) * 4);
    for (int s = 0; s < n; ++s)
      if (sys_index[static_cast<std::size_t>(s)] < 0) trip.push_back({s, s, 1.0});
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      const ConcretePolytope& t = rm.polytopes[static_cast<std::size_t>(s)];
      trip.push_back({s, s, 1.0});
      trip.push_back({s, beta_col[r], 1.0});
      for (std::size_t i = 0; i < active_rows[r].size(); ++i) {
        const int j = active_rows[r][i];
        trip.push_back({s, alpha_col0[r] + static_cast<int>(i), t.b[static_cast<std::size_t>(j)]});
      }
      for (int tt = 0; tt < t.num_successors(); ++tt) {
        const int rr = stat_row0[r] + tt;
        trip.push_back({rr, t.support[static_cast<std::size_t>(tt)], 1.0});
        trip.push_back({rr, beta_col[r], 1.0});
        for (std::size_t i = 0; i < active_rows[r].size(); ++i) {
          const int j = active_rows[r][i];
          const double a = t.a[static_cast<std::size_t>(j)][static_cast<std::size_t>(tt)];
          if (a != 0.0) trip.push_back({rr, alpha_col0[r] + static_cast<int>(i), a});
        }
      }
    }
    c_lu = std::make_unique<SparseLuSolver>(SparseMatrix::from_triplets(q, q, std::move(trip)));
    build_c_terms();
  }

  // Right-hand-side contributions of Theorem 2, grouped per parameter:
  // value rows collect -alpha_j * db_j/dv, stationarity rows collect
  // -alpha_j * dA_{j,t}/dv.
  void build_c_terms() {
    c_terms.assign(static_cast<std::size_t>(model->params.size()), {});
    for (std::size_t r = 0; r < sys_states.size(); ++r) {
      const int s = sys_states[r];
      const ParametricPolytope& pt = model->polytopes[static_cast<std::size_t>(s)];
      const double* alpha = sol.alpha[static_cast<std::size_t>(s)].data();
      for (int j : active_rows[r]) {
        const double aj = alpha[j];
        for (int v : pt.rhs[static_cast<std::size_t>(j)].params()) {
          const double dv = pt.rhs[static_cast<std::size_t>(j)].differentiate(v).evaluate(u);
          if (dv != 0.0) c_terms[static_cast<std::size_t>(v)].emplace_back(s, -aj * dv);
        }
        for (int tt = 0; tt < pt.num_successors(); ++tt) {
          const Expr& aexp = pt.rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(tt)];
          for (int v : aexp.params()) {
            const double dv = aexp.differentiate(v).evaluate(u);
            if (dv != 0.0) c_terms[static_cast<std::size_t>(v)].emplace_back(stat_row0[r] + tt, -aj * dv);
          }
        }
      }
    }
  }

  std::vector<double> c_rhs(int param) const {
    std::vector<double> d(static_cast<std::size_t>(q), 0.0);
    for (const auto& [row, coef] : c_terms[static_cast<std::size_t>(param)]) d[static_cast<std::size_t>(row)] += coef;
    return d;
  }

  double solution_derivative(const std::vector<double>& z) const {
    double acc = 0.0;
    for (int s = 0; s < rm.n_states; ++s) acc += rm.initial[static_cast<std::size_t>(s)] * z[static_cast<std::size_t>(s)];
    return acc;
  }

  void require_differentiable() {
    compute_verdict();
    if (!verdict.differentiable)
      throw NotDifferentiable("robust solution function is not differentiable at this instantiation");
  }
};

PrmcAnalysis::PrmcAnalysis(const Prmc& m, const Instantiation& u) : impl_(std::make_unique<Impl>()) {
  impl_->model = &m;
  impl_->u = u;
  impl_->rm = instantiate_prmc(m, u);
  const ConcreteRmc& rm = impl_->rm;

  // The support graph is instantiation-independent; reuse the pMC-style
  // reachability prechecks on it.
  ConcreteMc support;
  support.n_states = rm.n_states;
  support.initial = rm.initial;
  support.rewards = rm.rewards;
  support.terminal = rm.terminal;
  support.rows.resize(static_cast<std::size_t>(rm.n_states));
  for (int s = 0; s < rm.n_states; ++s)
    if (!rm.is_terminal(s))
      for (int succ : rm.polytopes[static_cast<std::size_t>(s)].support)
        support.rows[static_cast<std::size_t>(s)].emplace_back(succ, 1.0);

  const std::vector<char> reaches = terminal_reaching_states(support);
  std::vector<char> tainted(static_cast<std::size_t>(rm.n_states), 0);
  for (int s = 0; s < rm.n_states; ++s)
    if (!reaches[static_cast<std::size_t>(s)]) tainted[static_cast<std::size_t>(s)] = 1;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int s = 0; s < rm.n_states; ++s) {
      if (tainted[static_cast<std::size_t>(s)] || rm.is_terminal(s)) continue;
      for (int succ : rm.polytopes[static_cast<std::size_t>(s)].support)
        if (tainted[static_cast<std::size_t>(succ)]) {
          tainted[static_cast<std::size_t>(s)] = 1;
          changed = true;
          break;
        }
    }
  }
  const std::vector<char> reachable = reachable_states(support);
  for (int s = 0; s < rm.n_states; ++s)
    if (reachable[static_cast<std::size_t>(s)] && tainted[static_cast<std::size_t>(s)])
      throw SingularMatrix("state " + std::to_string(s) +
                           " is reachable but does not reach the terminal states almost surely");

  impl_->solvable.assign(static_cast<std::size_t>(rm.n_states), 0);
  impl_->sys_index.assign(static_cast<std::size_t>(rm.n_states), -1);
  for (int s = 0; s < rm.n_states; ++s) {
    impl_->solvable[static_cast<std::size_t>(s)] = !tainted[static_cast<std::size_t>(s)];
    if (!tainted[static_cast<std::size_t>(s)] && !rm.is_terminal(s)) {
      impl_->sys_index[static_cast<std::size_t>(s)] = static_cast<int>(impl_->sys_states.size());
      impl_->sys_states.push_back(s);
    }
  }
}

PrmcAnalysis::~PrmcAnalysis() = default;
PrmcAnalysis::PrmcAnalysis(PrmcAnalysis&&) noexcept = default;

const RobustSolution& PrmcAnalysis::solution() {
  impl_->run_policy_iteration();
  return impl_->sol;
}

const DifferentiabilityVerdict& PrmcAnalysis::verdict() {
  impl_->compute_verdict();
  return impl_->verdict;
}

double PrmcAnalysis::robust_gradient(int param) {
  if (param < 0 || param >= num_params()) throw MissingParameter("robust_gradient: bad parameter id");
  impl_->require_differentiable();
  const std::vector<double> z = impl_->c_lu->solve(impl_->c_rhs(param));
  return impl_->solution_derivative(z);
}

GradientReport PrmcAnalysis::robust_gradient_all() {
  impl_->require_differentiable();
  const int l = num_params();
  GradientReport rep;
  rep.method = GradientMethod::explicit_solves;
  rep.param_ids.resize(static_cast<std::size_t>(l));
  rep.values.assign(static_cast<std::size_t>(l), 0.0);
  std::vector<std::vector<double>> rhs;
  rhs.reserve(static_cast<std::size_t>(l));
  for (int v = 0; v < l; ++v) {
    rep.param_ids[static_cast<std::size_t>(v)] = v;
    rhs.push_back(impl_->c_rhs(v));
  }
  const std::vector<std::vector<double>> z = impl_->c_lu->solve_many(rhs);
  for (int v = 0; v < l; ++v) rep.values[static_cast<std::size_t>(v)] = impl_->solution_derivative(z[static_cast<std::size_t>(v)]);
  return rep;
}

TopkResult PrmcAnalysis::topk_robust(int k, Direction direction, bool with_values) {
  impl_->require_differentiable();
  const int l = num_params();
  // Adjoint pass: one transposed solve, then each parameter is a sparse dot
  // with its Theorem-2 right-hand-side terms.
  std::vector<double> si(static_cast<std::size_t>(impl_->q), 0.0);
  for (int s = 0; s < impl_->rm.n_states; ++s) si[static_cast<std::size_t>(s)] = impl_->rm.initial[static_cast<std::size_t>(s)];
  const std::vector<double> w = impl_->c_lu->solve_transposed(si);
  std::vector<double> g(static_cast<std::size_t>(l), 0.0);
  for (int v = 0; v < l; ++v) {
    double acc = 0.0;
    for (const auto& [row, coef] : impl_->c_terms[static_cast<std::size_t>(v)]) acc += w[static_cast<std::size_t>(row)] * coef;
    g[static_cast<std::size_t>(v)] = acc;
  }
  TopkResult out = topk_from_gradient(g, k, direction);
  if (with_values) {
    std::vector<double> vals;
    vals.reserve(out.selected.size());
    for (int v : out.selected) vals.push_back(robust_gradient(v));
    out.values = std::move(vals);
  }
  return out;
}

void PrmcAnalysis::set_initial_adversary(std::vector<std::vector<double>> p) {
  if (static_cast<int>(p.size()) != impl_->rm.n_states) throw Error("set_initial_adversary: wrong length");
  impl_->adversary.assign(impl_->sys_states.size(), {});
  for (std::size_t r = 0; r < impl_->sys_states.size(); ++r) {
    const int s = impl_->sys_states[r];
    auto& row = p[static_cast<std::size_t>(s)];
    if (static_cast<int>(row.size()) != impl_->rm.polytopes[static_cast<std::size_t>(s)].num_successors())
      throw Error("set_initial_adversary: support mismatch at state " + std::to_string(s));
    impl_->adversary[r] = std::move(row);
  }
  impl_->have_adversary = true;
}

const ConcreteRmc& PrmcAnalysis::concrete() const { return impl_->rm; }
int PrmcAnalysis::num_params() const { return impl_->model->params.size(); }

RobustSolution robust_solve(const Prmc& m, const Instantiation& u) {
  PrmcAnalysis a(m, u);
  return a.solution();
}

DifferentiabilityVerdict check_differentiability(const Prmc& m, const Instantiation& u) {
  PrmcAnalysis a(m, u);
  return a.verdict();
}

GradientReport robust_gradient_all(const Prmc& m, const Instantiation& u) {
  PrmcAnalysis a(m, u);
  return a.robust_gradient_all();
}

TopkResult topk_robust(const Prmc& m, const Instantiation& u, int k, Direction direction, bool with_values) {
  PrmcAnalysis a(m, u);
  return a.topk_robust(k, direction, with_values);
}

}  // namespace prsense
