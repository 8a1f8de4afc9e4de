#include "prsense/learning.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "prsense/pmc.hpp"
#include "prsense/prmc.hpp"
#include "prsense/sparse.hpp"

namespace prsense {

namespace {

constexpr double kClip = 1e-6;

// Bound expressions for one skeleton parameter: p_hat -/+ eps(N). The clip
// is resolved at build time; a clipped side becomes a constant (locally the
// exact one-sided behavior, re-decided at every rebuild).
struct BoundExprs {
  Expr lower;
  Expr upper;
};

Expr epsilon_expr(int n_param, double beta) {
  // sqrt((ln 2 - ln(1-beta)) / (2 N))
  const double c = std::log(2.0) - std::log1p(-beta);
  return Expr::pow(Expr::product({Expr::constant(Rational(1, 2)), Expr::constant(c),
                                  Expr::pow(Expr::parameter(n_param), Rational(-1))}),
                   Rational(1, 2));
}

BoundExprs hoeffding_bound_exprs(double p_hat, long n_now, double beta, int n_param) {
  const double eps_now = hoeffding_epsilon(n_now, beta);
  const Expr eps = epsilon_expr(n_param, beta);
  const Expr mean = Expr::constant(p_hat);
  BoundExprs out;
  out.lower = (p_hat - eps_now < kClip) ? Expr::constant(kClip) : mean - eps;
  out.upper = (p_hat + eps_now > 1.0 - kClip) ? Expr::constant(1.0 - kClip) : mean + eps;
  return out;
}

}  // namespace

double hoeffding_epsilon(long n, double beta) {
  if (n < 1) throw Error("hoeffding: N must be >= 1");
  if (!(beta > 0.0 && beta < 1.0)) throw Error("hoeffding: beta must be in (0,1)");
  return std::sqrt((std::log(2.0) - std::log1p(-beta)) / (2.0 * static_cast<double>(n)));
}

std::pair<double, double> hoeffding_interval(double p_hat, long n, double beta) {
  const double eps = hoeffding_epsilon(n, beta);
  const double lo = std::clamp(p_hat - eps, kClip, 1.0 - kClip);
  const double hi = std::clamp(p_hat + eps, kClip, 1.0 - kClip);
  return {lo, hi};
}

Prmc build_learning_prmc(const Pmc& skeleton, const LearnState& state) {
  skeleton.validate_structure();
  if (state.num_params() != skeleton.params.size())
    throw ValidationError("learning state does not match the skeleton's parameter count");

  Pmc shell = skeleton;  // reuse shape; parameters become the sample sizes
  shell.params = ParameterSet{};
  for (int i = 0; i < skeleton.params.size(); ++i) shell.params.add("N_" + skeleton.params.name_of(i));

  // Per-parameter slip bounds as expressions in N_i.
  std::vector<BoundExprs> bounds;
  bounds.reserve(static_cast<std::size_t>(skeleton.params.size()));
  for (int i = 0; i < skeleton.params.size(); ++i)
    bounds.push_back(hoeffding_bound_exprs(state.mean(i), state.counts[static_cast<std::size_t>(i)],
                                           state.beta, i));

  // Each transition expression e(v) is monotone (affine) in its single
  // parameter; its interval is [e at the favorable end, e at the other].
  Instantiation mle;
  mle.values.resize(static_cast<std::size_t>(skeleton.params.size()));
  for (int i = 0; i < skeleton.params.size(); ++i) mle.values[static_cast<std::size_t>(i)] = state.mean(i);

  std::vector<std::vector<Expr>> lowers(static_cast<std::size_t>(skeleton.n_states));
  std::vector<std::vector<Expr>> uppers(static_cast<std::size_t>(skeleton.n_states));
  for (int s = 0; s < skeleton.n_states; ++s) {
    for (const auto& [succ, e] : skeleton.rows[static_cast<std::size_t>(s)]) {
      (void)succ;
      const std::vector<int> ps = e.params();
      if (ps.empty()) {
        lowers[static_cast<std::size_t>(s)].push_back(e);
        uppers[static_cast<std::size_t>(s)].push_back(e);
        continue;
      }
      if (ps.size() != 1)
        throw ValidationError("learning skeleton: transition depends on more than one parameter");
      const int v = ps.front();
      const double slope = e.differentiate(v).evaluate(mle);
      const Expr at_lo = e.substitute(v, bounds[static_cast<std::size_t>(v)].lower);
      const Expr at_hi = e.substitute(v, bounds[static_cast<std::size_t>(v)].upper);
      if (slope >= 0.0) {
        lowers[static_cast<std::size_t>(s)].push_back(at_lo);
        uppers[static_cast<std::size_t>(s)].push_back(at_hi);
      } else {
        lowers[static_cast<std::size_t>(s)].push_back(at_hi);
        uppers[static_cast<std::size_t>(s)].push_back(at_lo);
      }
    }
  }
  return interval_prmc(shell, lowers, uppers);
}

std::vector<double> expected_visits(const ConcreteMc& mc) {
  const std::vector<char> reaches = terminal_reaching_states(mc);
  const std::vector<char> reach = reachable_states(mc);
  for (int s = 0; s < mc.n_states; ++s)
    if (reach[static_cast<std::size_t>(s)] && !reaches[static_cast<std::size_t>(s)])
      throw SingularMatrix("expected_visits: terminals are not almost surely reached");

  // mu = (I - P)^T^{-1} s_I over the non-terminal states; terminal states
  // get the inflow mass (each absorption counted once).
  std::vector<int> idx(static_cast<std::size_t>(mc.n_states), -1);
  std::vector<int> states;
  for (int s = 0; s < mc.n_states; ++s)
    if (!mc.is_terminal(s) && reaches[static_cast<std::size_t>(s)]) {
      idx[static_cast<std::size_t>(s)] = static_cast<int>(states.size());
      states.push_back(s);
    }
  const int ns = static_cast<int>(states.size());
  std::vector<SparseMatrix::Triplet> trip;
  for (int r = 0; r < ns; ++r) {
    const int s = states[static_cast<std::size_t>(r)];
    trip.push_back({r, r, 1.0});
    for (const auto& [succ, p] : mc.rows[static_cast<std::size_t>(s)]) {
      const int rc = idx[static_cast<std::size_t>(succ)];
      if (rc >= 0) trip.push_back({r, rc, -p});
    }
  }
  std::vector<double> si(static_cast<std::size_t>(ns), 0.0);
  for (int r = 0; r < ns; ++r) si[static_cast<std::size_t>(r)] = mc.initial[static_cast<std::size_t>(states[static_cast<std::size_t>(r)])];
  const std::vector<double> mu_sys =
      ns > 0 ? solve_transposed(SparseMatrix::from_triplets(ns, ns, std::move(trip)), si) : std::vector<double>{};

  std::vector<double> mu(static_cast<std::size_t>(mc.n_states), 0.0);
  for (int r = 0; r < ns; ++r) mu[static_cast<std::size_t>(states[static_cast<std::size_t>(r)])] = mu_sys[static_cast<std::size_t>(r)];
  for (int s = 0; s < mc.n_states; ++s) {
    if (!mc.is_terminal(s)) continue;
    double inflow = mc.initial[static_cast<std::size_t>(s)];
    for (int r = 0; r < ns; ++r) {
      const int src = states[static_cast<std::size_t>(r)];
      for (const auto& [succ, p] : mc.rows[static_cast<std::size_t>(src)])
        if (succ == s) inflow += p * mu[static_cast<std::size_t>(src)];
    }
    mu[static_cast<std::size_t>(s)] = inflow;
  }
  return mu;
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "derivative") return Strategy::derivative;
  if (name == "interval") return Strategy::interval;
  if (name == "uniform") return Strategy::uniform;
  if (name == "visits") return Strategy::visits;
  throw Error("unknown strategy: " + name);
}

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::derivative: return "derivative";
    case Strategy::interval: return "interval";
    case Strategy::uniform: return "uniform";
    case Strategy::visits: return "visits";
  }
  return "?";
}

namespace {

Pmc negated_rewards(const Pmc& skeleton) {
  Pmc neg = skeleton;
  for (double& r : neg.rewards) r = -r;
  return neg;
}

Instantiation counts_instantiation(const LearnState& state) {
  Instantiation u;
  u.values.resize(static_cast<std::size_t>(state.num_params()));
  for (int i = 0; i < state.num_params(); ++i)
    u.values[static_cast<std::size_t>(i)] = static_cast<double>(state.counts[static_cast<std::size_t>(i)]);
  return u;
}

int argmax_epsilon(const LearnState& state) {
  int best = 0;
  double best_eps = -1.0;
  for (int i = 0; i < state.num_params(); ++i) {
    const double e = hoeffding_epsilon(state.counts[static_cast<std::size_t>(i)], state.beta);
    if (e > best_eps + 1e-15) {
      best_eps = e;
      best = i;
    }
  }
  return best;
}

}  // namespace

ChoiceResult choose_parameter(Strategy strategy, const LearnState& state, const Pmc& skeleton,
                              const Instantiation& mle_values, Rng& rng) {
  switch (strategy) {
    case Strategy::interval:
      return {argmax_epsilon(state), false};
    case Strategy::uniform:
      return {static_cast<int>(rng.uniform_int(0, state.num_params() - 1)), false};
    case Strategy::visits: {
      const ConcreteMc mc = instantiate_pmc(skeleton, mle_values);
      const std::vector<double> mu = expected_visits(mc);
      std::vector<double> w(static_cast<std::size_t>(state.num_params()), 0.0);
      for (int s = 0; s < skeleton.n_states; ++s)
        for (const auto& [succ, e] : skeleton.rows[static_cast<std::size_t>(s)]) {
          (void)succ;
          for (int v : e.params()) w[static_cast<std::size_t>(v)] += mu[static_cast<std::size_t>(s)];
        }
      for (int i = 0; i < state.num_params(); ++i)
        w[static_cast<std::size_t>(i)] *= hoeffding_epsilon(state.counts[static_cast<std::size_t>(i)], state.beta);
      return {rng.categorical(w), false};
    }
    case Strategy::derivative: {
      // Most negative derivative of the upper bound f+ = -sol_R of the
      // reward-negated model, i.e. the highest derivative of that sol_R.
      const Prmc prmc = build_learning_prmc(negated_rewards(skeleton), state);
      try {
        const TopkResult r = topk_robust(prmc, counts_instantiation(state), 1, Direction::highest);
        return {r.selected.front(), false};
      } catch (const NotDifferentiable&) {
        return {argmax_epsilon(state), true};
      }
    }
  }
  throw Error("unreachable strategy");
}

double robust_upper_bound(const Pmc& skeleton, const LearnState& state) {
  const Prmc prmc = build_learning_prmc(negated_rewards(skeleton), state);
  return -robust_solve(prmc, counts_instantiation(state)).sol;
}

LearnState initial_learn_state(const Pmc& skeleton, const Instantiation& true_values, long n0,
                               double beta, std::uint64_t seed) {
  if (n0 < 1) throw Error("initial sample size must be >= 1");
  LearnState st;
  st.beta = beta;
  st.seed = seed;
  Rng rng(seed);
  const int l = skeleton.params.size();
  st.counts.assign(static_cast<std::size_t>(l), n0);
  st.successes.resize(static_cast<std::size_t>(l));
  for (int i = 0; i < l; ++i)
    st.successes[static_cast<std::size_t>(i)] = rng.binomial(n0, true_values.at(i));
  return st;
}

LearnState run_learning(const Pmc& skeleton, const Instantiation& true_values, Strategy strategy,
                        int steps, int batch, LearnState state0) {
  if (steps < 0 || batch < 0) throw Error("run_learning: steps and batch must be nonnegative");
  if (true_values.size() != skeleton.params.size())
    throw ValidationError("run_learning: true values do not match the skeleton parameters");
  LearnState st = std::move(state0);
  // Sampling and strategy draws share the one seeded generator, offset from
  // the initial-state stream.
  Rng rng(st.seed ^ 0x9e3779b97f4a7c15ULL);
  const Pmc neg = negated_rewards(skeleton);

  Instantiation mle;
  mle.values.resize(static_cast<std::size_t>(st.num_params()));
  auto refresh_mle = [&] {
    for (int i = 0; i < st.num_params(); ++i) mle.values[static_cast<std::size_t>(i)] = st.mean(i);
  };
  refresh_mle();

  // The analysis of the current step's prMC serves both the bound and, one
  // step later, the derivative-based choice; the converged adversary warm
  // starts the next policy iteration (identical results, fewer sweeps).
  std::unique_ptr<Prmc> cur_prmc;
  std::unique_ptr<PrmcAnalysis> cur;
  std::vector<std::vector<double>> warm;
  auto resolve = [&](int step) -> double {
    try {
      cur_prmc = std::make_unique<Prmc>(build_learning_prmc(neg, st));
      cur = std::make_unique<PrmcAnalysis>(*cur_prmc, counts_instantiation(st));
      if (!warm.empty()) cur->set_initial_adversary(std::move(warm));
      const double bound = -cur->solution().sol;
      warm = cur->solution().worst_case;
      return bound;
    } catch (const NumericalError&) {
      throw;
    } catch (const Error& e) {
      throw NumericalError("learning step " + std::to_string(step) + ": " + e.what());
    }
  };

  st.trajectory.push_back({0, resolve(0), -1});
  for (int step = 1; step <= steps; ++step) {
    ChoiceResult choice{0, false};
    if (strategy == Strategy::derivative) {
      try {
        choice.param = cur->topk_robust(1, Direction::highest).selected.front();
      } catch (const NotDifferentiable&) {
        choice = {argmax_epsilon(st), true};
      }
    } else {
      choice = choose_parameter(strategy, st, skeleton, mle, rng);
    }
    if (choice.fell_back) st.fallback_steps.push_back(step);
    const int i = choice.param;
    st.successes[static_cast<std::size_t>(i)] += rng.binomial(batch, true_values.at(i));
    st.counts[static_cast<std::size_t>(i)] += batch;
    refresh_mle();
    st.trajectory.push_back({step, resolve(step), i});
  }
  return st;
}

void write_trajectory_csv(std::ostream& os, const LearnState& state, Strategy strategy) {
  os << "# learning trajectory: strategy=" << strategy_name(strategy) << " seed=" << state.seed
     << " beta=" << state.beta << " params=" << state.num_params() << "\n";
  os << "step,strategy,seed,robust_bound,chosen_parameter\n";
  std::ostringstream num;
  num.precision(12);
  for (const auto& pt : state.trajectory) {
    num.str("");
    num << pt.bound;
    os << pt.step << "," << strategy_name(strategy) << "," << state.seed << "," << num.str() << ","
       << pt.chosen << "\n";
  }
}

}  // namespace prsense
