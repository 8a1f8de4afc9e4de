#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "prsense/model.hpp"
#include "prsense/rng.hpp"

namespace prsense {

/// Per-parameter sampling bookkeeping plus the recorded trajectory of
/// robust upper bounds. Sample means are kept as exact success counts.
struct LearnState {
  std::vector<long> counts;     // N_i >= 1
  std::vector<long> successes;  // p_hat_i = successes_i / counts_i
  double beta = 0.9;            // confidence level of the Hoeffding intervals
  std::uint64_t seed = 0;

  struct Point {
    int step;
    double bound;
    int chosen;  // -1 for the initial point
  };
  std::vector<Point> trajectory;
  std::vector<int> fallback_steps;  // derivative strategy fell back to widths

  int num_params() const { return static_cast<int>(counts.size()); }
  double mean(int i) const {
    return static_cast<double>(successes[static_cast<std::size_t>(i)]) /
           static_cast<double>(counts[static_cast<std::size_t>(i)]);
  }
};

/// Hoeffding half width sqrt((ln 2 - ln(1-beta)) / (2N)).
double hoeffding_epsilon(long n, double beta);

/// Two-sided interval [p_hat - eps, p_hat + eps], clipped into
/// [1e-6, 1-1e-6] to keep instantiations graph-preserving.
std::pair<double, double> hoeffding_interval(double p_hat, long n, double beta);

/// Interval prMC over the skeleton whose bounds are the Hoeffding formulas
/// in the sample-size parameters N_i, with the current sample means
/// embedded as constants. Every parametric transition of the skeleton must
/// reference exactly one parameter. The result's parameters are the sample
/// sizes, named "N_<skeleton parameter name>".
Prmc build_learning_prmc(const Pmc& skeleton, const LearnState& state);

/// Expected number of visits per state before absorption: the solution of
/// the transposed system (I - P)^T mu = s_I.
std::vector<double> expected_visits(const ConcreteMc& mc);

enum class Strategy { derivative, interval, uniform, visits };

Strategy strategy_from_name(const std::string& name);
const char* strategy_name(Strategy s);

struct ChoiceResult {
  int param;
  bool fell_back;  // derivative strategy hit a non-differentiable point
};

/// Picks the parameter to sample next. Strategies: derivative (k=1 most
/// negative upper-bound derivative), interval (largest eps, lowest index on
/// ties), uniform, visits (mu-mass of the parameter's states times eps).
ChoiceResult choose_parameter(Strategy strategy, const LearnState& state, const Pmc& skeleton,
                              const Instantiation& mle_values, Rng& rng);

/// Iterative sample-allocation loop: at each step choose a parameter, draw
/// `batch` Bernoulli samples of its true value, update the state, rebuild
/// the prMC and append the refreshed robust upper bound.
LearnState run_learning(const Pmc& skeleton, const Instantiation& true_values, Strategy strategy,
                        int steps, int batch, LearnState state0);

/// Initial state: n0 samples of every parameter drawn from the true values.
LearnState initial_learn_state(const Pmc& skeleton, const Instantiation& true_values, long n0,
                               double beta, std::uint64_t seed);

/// Robust upper bound f+ on the skeleton's solution under the current
/// sample information (adversary maximizes, realized by negating rewards).
double robust_upper_bound(const Pmc& skeleton, const LearnState& state);

/// CSV trajectory: header echoing the configuration, then
/// step,strategy,seed,robust_bound,chosen_parameter.
void write_trajectory_csv(std::ostream& os, const LearnState& state, Strategy strategy);

}  // namespace prsense
