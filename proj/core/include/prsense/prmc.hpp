#pragma once

#include <memory>
#include <span>

#include "prsense/model.hpp"
#include "prsense/report.hpp"

namespace prsense {

/// Optimum of the dualized robust LP: per-state worst-case values x*, the
/// duals-as-primals alpha*, beta*, the active-constraint masks E_s, and the
/// adversary's worst-case distributions.
struct RobustSolution {
  std::vector<double> x;
  double sol = 0.0;
  std::vector<std::vector<double>> alpha;        // per state, length m_s
  std::vector<double> beta;                      // per state
  std::vector<std::vector<char>> active;         // E_s = [alpha > tau_active]
  std::vector<std::vector<double>> worst_case;   // p*_s over the support
};

enum class VerdictReason { none, underdetermined, overdetermined, singular };

/// Per-instantiation classification of whether the derivative system is
/// square and nonsingular; failures carry per-state diagnostics.
struct DifferentiabilityVerdict {
  bool differentiable = false;
  VerdictReason reason = VerdictReason::none;
  struct StateDiagnostic {
    int state;
    int n_successors;
    int n_active;  // by alpha > tau_active
    VerdictReason reason;
  };
  std::vector<StateDiagnostic> failures;
};

/// Vertex solution of one state's inner minimization min p^T c over
/// {A p <= b, 1^T p = 1}, with the dual multipliers in the orientation of
/// the robust LP: c + A^T alpha + beta 1 = 0, alpha >= 0.
struct InnerSolution {
  double value = 0.0;
  std::vector<double> p;
  std::vector<double> alpha;
  double beta = 0.0;
};

/// Closed-form greedy for interval-pair polytopes, simplex for general
/// rows. Throws EmptyUncertaintySet (state -1) when infeasible.
InnerSolution inner_minimize(const ConcretePolytope& t, std::span<const double> cost);

/// Robust solving plus the Theorem-2 derivative machinery on a shared
/// factorization of the reduced equation system C.
class PrmcAnalysis {
 public:
  PrmcAnalysis(const Prmc& m, const Instantiation& u);
  ~PrmcAnalysis();
  PrmcAnalysis(PrmcAnalysis&&) noexcept;

  /// Worst-case adversary by policy iteration; the returned optimum
  /// satisfies both constraint families of the robust LP within 1e-7.
  const RobustSolution& solution();

  /// Lemma-1 classification; on success the C factorization is cached for
  /// the gradient calls.
  const DifferentiabilityVerdict& verdict();

  double robust_gradient(int param);
  GradientReport robust_gradient_all();
  TopkResult topk_robust(int k, Direction direction, bool with_values = false);

  /// Warm start for the policy iteration (per-state distribution over the
  /// state's support); results are identical to a cold start.
  void set_initial_adversary(std::vector<std::vector<double>> p);

  const ConcreteRmc& concrete() const;
  int num_params() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

RobustSolution robust_solve(const Prmc& m, const Instantiation& u);
std::vector<std::vector<char>> extract_active_sets(const RobustSolution& sol);
DifferentiabilityVerdict check_differentiability(const Prmc& m, const Instantiation& u);
GradientReport robust_gradient_all(const Prmc& m, const Instantiation& u);
TopkResult topk_robust(const Prmc& m, const Instantiation& u, int k, Direction direction,
                       bool with_values = false);

/// Activity threshold on alpha* (the Iverson bracket needs a tolerance at
/// double precision).
inline constexpr double kActiveTol = 1e-9;

}  // namespace prsense
