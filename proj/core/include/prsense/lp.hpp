#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "prsense/errors.hpp"

namespace prsense {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class LpSense { minimize, maximize };
enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

/// General LP: optimize c^T x over sparse constraint rows with relations
/// <=, ==, >= and per-variable bounds (infinite allowed).
class LinearProgram {
 public:
  struct Row {
    std::vector<std::pair<int, double>> coeffs;
    char relation;  // '<', '=', '>'
    double rhs;
  };

  explicit LinearProgram(LpSense sense = LpSense::minimize) : sense_(sense) {}

  int add_variable(double lower, double upper, double objective);
  void add_row(std::vector<std::pair<int, double>> coeffs, char relation, double rhs);

  LpSense sense() const { return sense_; }
  int num_variables() const { return static_cast<int>(objective_.size()); }
  int num_rows() const { return static_cast<int>(rows_.size()); }
  const std::vector<double>& objective() const { return objective_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  const std::vector<Row>& rows() const { return rows_; }

  /// Plain-text dump, one constraint per line, for external cross-checking.
  void dump(std::ostream& os) const;

 private:
  LpSense sense_;
  std::vector<double> objective_;
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<Row> rows_;
};

/// Basic (vertex) solution. `basis` holds one variable index per row:
/// structural j -> j, slack of row i -> num_variables()+i, leftover
/// artificial -> -(row+1). Row duals follow the convention that for the
/// problem's own sense, dual feasibility reads c_j - y^T a_j >= 0 (minimize,
/// variable at lower bound); signs are already adjusted for maximize.
struct LpSolution {
  LpStatus status = LpStatus::infeasible;
  std::vector<double> x;
  double objective = 0.0;
  std::vector<int> basis;
  std::vector<double> duals;
  std::vector<double> reduced_costs;

  bool optimal() const { return status == LpStatus::optimal; }
};

/// Two-phase bounded-variable primal simplex. Deterministic: largest
/// reduced-cost pricing with lowest-index ties, switching to Bland's rule
/// after a degenerate streak. Always returns a basic solution.
LpSolution solve_lp(const LinearProgram& lp);

}  // namespace prsense
