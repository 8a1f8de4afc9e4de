#pragma once

#include <memory>
#include <span>

#include "prsense/model.hpp"
#include "prsense/report.hpp"
#include "prsense/sparse.hpp"

namespace prsense {

/// Expected cumulative reward until absorption, per state, plus the scalar
/// solution s_I^T x*.
struct PmcSolution {
  std::vector<double> x;
  double sol = 0.0;
};

/// One instantiation of a pMC with the (I - P[u]) factorization shared by
/// the solution and all derivative computations. Read-only after
/// construction; per-parameter solves hit disjoint output slots.
class PmcAnalysis {
 public:
  PmcAnalysis(const Pmc& m, const Instantiation& u);
  ~PmcAnalysis();
  PmcAnalysis(PmcAnalysis&&) noexcept;

  const PmcSolution& solution() const;

  /// Right-hand side of the derivative system for one parameter:
  /// entry s = sum_{s'} dP(s,s')/du(v) * x*_{s'}; zero on terminal states.
  std::vector<double> derivative_rhs(int param) const;

  /// One linear solve per parameter against the shared factorization.
  GradientReport gradient_explicit() const;
  /// One transposed solve total; values match gradient_explicit to 1e-9.
  GradientReport gradient_adjoint() const;
  /// Explicit derivatives for a parameter subset only.
  GradientReport derivatives_for_subset(std::span<const int> subset) const;

  /// k-extremal parameter selection from the vertex optimum of the
  /// relaxation LP; z is binary at a vertex and tie-broken to the lowest
  /// index otherwise.
  TopkResult topk(int k, Direction direction, bool with_values = false) const;

  const ConcreteMc& concrete() const;
  int num_params() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

PmcSolution solve_expected_reward(const Pmc& m, const Instantiation& u);
std::vector<double> derivative_rhs(const Pmc& m, const Instantiation& u,
                                   const std::vector<double>& x_star, int param);
GradientReport gradient_explicit(const Pmc& m, const Instantiation& u);
GradientReport gradient_adjoint(const Pmc& m, const Instantiation& u);
GradientReport derivatives_for_subset(const Pmc& m, const Instantiation& u, std::span<const int> subset);
TopkResult topk(const Pmc& m, const Instantiation& u, int k, Direction direction, bool with_values = false);

/// Selection + tie-break shared by the pMC and prMC top-k paths: solve
/// max/min g^T z s.t. 0 <= z <= 1, sum z = k with the simplex, then push any
/// fractional entries to bounds preserving the sum, lower index first.
TopkResult topk_from_gradient(std::span<const double> gradient, int k, Direction direction);

}  // namespace prsense
