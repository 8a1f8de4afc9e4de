#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prsense/expr.hpp"

namespace prsense {

/// Parametric Markov chain: per-state sparse rows of (successor, Expr).
/// Terminal states carry no outgoing transitions. Immutable by convention
/// after construction + validate().
struct Pmc {
  int n_states = 0;
  std::vector<double> initial;   // distribution over states
  std::vector<double> rewards;   // per state; ignored on terminals by analyses
  std::vector<char> terminal;    // mask
  std::vector<std::vector<std::pair<int, Expr>>> rows;  // successor-sorted
  ParameterSet params;

  bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)] != 0; }
  /// Structural checks (shapes, initial distribution, successor ranges).
  void validate_structure() const;
};

/// One state's uncertainty set {p : A p <= b} over the ordered successor
/// list `support`. The simplex equality 1^T p = 1 is NOT stored; analyses
/// add it next to these rows.
struct ParametricPolytope {
  std::vector<int> support;
  std::vector<std::vector<Expr>> rows;  // m_s x |support|
  std::vector<Expr> rhs;                // m_s
  /// Set when rows come in (+e_j, -e_j) pairs per successor, i.e. interval
  /// bounds; enables the closed-form inner minimization.
  bool interval_pairs = false;

  int num_rows() const { return static_cast<int>(rhs.size()); }
  int num_successors() const { return static_cast<int>(support.size()); }
};

/// Parametric robust Markov chain: one parametric polytope per non-terminal
/// state.
struct Prmc {
  int n_states = 0;
  std::vector<double> initial;
  std::vector<double> rewards;
  std::vector<char> terminal;
  std::vector<ParametricPolytope> polytopes;  // empty polytope on terminals
  ParameterSet params;

  bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)] != 0; }
  void validate_structure() const;
};

/// Numeric snapshot of a pMC at a fixed instantiation.
struct ConcreteMc {
  int n_states = 0;
  std::vector<double> initial;
  std::vector<double> rewards;
  std::vector<char> terminal;
  std::vector<std::vector<std::pair<int, double>>> rows;

  bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)] != 0; }
};

/// Numeric snapshot of one state's polytope.
struct ConcretePolytope {
  std::vector<int> support;
  std::vector<std::vector<double>> a;  // m x n dense rows
  std::vector<double> b;               // m
  bool interval_pairs = false;

  int num_rows() const { return static_cast<int>(b.size()); }
  int num_successors() const { return static_cast<int>(support.size()); }
  /// For interval_pairs rows: bounds per successor (lower[j], upper[j]).
  std::pair<std::vector<double>, std::vector<double>> interval_bounds() const;
};

/// Numeric snapshot of a prMC.
struct ConcreteRmc {
  int n_states = 0;
  std::vector<double> initial;
  std::vector<double> rewards;
  std::vector<char> terminal;
  std::vector<ConcretePolytope> polytopes;

  bool is_terminal(int s) const { return terminal[static_cast<std::size_t>(s)] != 0; }
};

/// Applies u, checking graph preservation: every nonzero probability must
/// stay in (0,1] and each row must sum to 1 within 1e-9. Throws
/// GraphPreservationError naming the offending state.
ConcreteMc instantiate_pmc(const Pmc& m, const Instantiation& u);

/// Applies u; verifies each state's polytope is nonempty intersected with
/// the probability simplex (LP feasibility probe; closed form for interval
/// rows). Throws EmptyUncertaintySet naming the offending state.
ConcreteRmc instantiate_prmc(const Prmc& m, const Instantiation& u);

/// Builds the interval prMC over a pMC-shaped skeleton: per transition k of
/// state s, rows (+e_k <= upper, -e_k <= -lower), so m_s = 2|post(s)|.
Prmc interval_prmc(const Pmc& skeleton,
                   const std::vector<std::vector<Expr>>& lowers,
                   const std::vector<std::vector<Expr>>& uppers);

/// States from which the terminal set is reachable in the underlying graph.
std::vector<char> terminal_reaching_states(const ConcreteMc& mc);
/// States reachable from the support of the initial distribution.
std::vector<char> reachable_states(const ConcreteMc& mc);

}  // namespace prsense
