#include "prsense/lp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace prsense {

namespace {

constexpr double kFeasTol = 1e-8;
constexpr double kOptTol = 1e-9;
constexpr double kPivotTol = 1e-10;
constexpr int kDegenerateStreakLimit = 200;
constexpr long kMaxIterations = 200000;

}  // namespace

int LinearProgram::add_variable(double lower, double upper, double objective) {
  if (std::isnan(lower) || std::isnan(upper) || !std::isfinite(objective))
    throw Error("lp: invalid variable data");
  if (lower > upper) throw Error("lp: variable lower bound above upper bound");
  objective_.push_back(objective);
  lower_.push_back(lower);
  upper_.push_back(upper);
  return num_variables() - 1;
}

void LinearProgram::add_row(std::vector<std::pair<int, double>> coeffs, char relation, double rhs) {
  if (relation != '<' && relation != '=' && relation != '>') throw Error("lp: bad relation");
  if (!std::isfinite(rhs)) throw Error("lp: non-finite rhs");
  for (auto& [j, v] : coeffs) {
    if (j < 0 || j >= num_variables()) throw Error("lp: row references unknown variable");
    if (!std::isfinite(v)) throw Error("lp: non-finite coefficient");
  }
  rows_.push_back(Row{std::move(coeffs), relation, rhs});
}

void LinearProgram::dump(std::ostream& os) const {
  os << "# lp dump v1: <sense> <objective terms>; rows 'r<i>: terms <rel> rhs'; bounds last\n";
  os << (sense_ == LpSense::minimize ? "min" : "max");
  for (int j = 0; j < num_variables(); ++j)
    if (objective_[j] != 0.0) os << " " << (objective_[j] >= 0 ? "+" : "") << objective_[j] << " x" << j;
  os << "\n";
  for (int i = 0; i < num_rows(); ++i) {
    const Row& r = rows_[i];
    os << "r" << i << ":";
    for (const auto& [j, v] : r.coeffs) os << " " << (v >= 0 ? "+" : "") << v << " x" << j;
    os << " " << (r.relation == '<' ? "<=" : r.relation == '>' ? ">=" : "==") << " " << r.rhs << "\n";
  }
  for (int j = 0; j < num_variables(); ++j)
    os << "bound: " << lower_[j] << " <= x" << j << " <= " << upper_[j] << "\n";
}

namespace {

// Internal simplex state over variables 0..n_total-1:
//   [0, n)          structural
//   [n, n+m)        slacks (one per row; '=' rows get a fixed [0,0] slack)
//   [n+m, n+2m)     artificials (phase 1 only; bounds collapse to [0,0] after)
struct Simplex {
  int n = 0, m = 0, total = 0;
  std::vector<double> cost;       // current phase objective
  std::vector<double> lo, hi;
  std::vector<double> value;      // current value of every variable
  std::vector<int> basis;         // variable index per row
  std::vector<char> in_basis;     // flag per variable
  std::vector<std::vector<std::pair<int, double>>> cols;  // column-major rows of A (structural+slack+artificial)
  std::vector<double> binv;       // dense m*m row-major basis inverse
  long iterations = 0;
  int degenerate_streak = 0;
  bool bland = false;

  double& binv_at(int i, int j) { return binv[static_cast<std::size_t>(i) * m + j]; }

  void refactorize() {
    // Gauss-Jordan inversion of the basis matrix (column per basic variable).
    std::vector<double> mat(static_cast<std::size_t>(m) * m, 0.0);
    for (int r = 0; r < m; ++r)
      for (const auto& [row, v] : cols[static_cast<std::size_t>(basis[r])]) mat[static_cast<std::size_t>(row) * m + r] = v;
    std::vector<double> inv(static_cast<std::size_t>(m) * m, 0.0);
    for (int i = 0; i < m; ++i) inv[static_cast<std::size_t>(i) * m + i] = 1.0;
    for (int c = 0; c < m; ++c) {
      int piv = -1;
      double best = kPivotTol;
      for (int r = c; r < m; ++r) {
        double a = std::fabs(mat[static_cast<std::size_t>(r) * m + c]);
        if (a > best) {
          best = a;
          piv = r;
        }
      }
      if (piv < 0) throw NumericalError("simplex basis became singular");
      if (piv != c)
        for (int j = 0; j < m; ++j) {
          std::swap(mat[static_cast<std::size_t>(piv) * m + j], mat[static_cast<std::size_t>(c) * m + j]);
          std::swap(inv[static_cast<std::size_t>(piv) * m + j], inv[static_cast<std::size_t>(c) * m + j]);
        }
      const double d = mat[static_cast<std::size_t>(c) * m + c];
      for (int j = 0; j < m; ++j) {
        mat[static_cast<std::size_t>(c) * m + j] /= d;
        inv[static_cast<std::size_t>(c) * m + j] /= d;
      }
      for (int r = 0; r < m; ++r) {
        if (r == c) continue;
        const double f = mat[static_cast<std::size_t>(r) * m + c];
        if (f == 0.0) continue;
        for (int j = 0; j < m; ++j) {
          mat[static_cast<std::size_t>(r) * m + j] -= f * mat[static_cast<std::size_t>(c) * m + j];
          inv[static_cast<std::size_t>(r) * m + j] -= f * inv[static_cast<std::size_t>(c) * m + j];
        }
      }
    }
    binv = std::move(inv);
  }

  // Recompute basic variable values from the nonbasic assignment.
  void recompute_basics(const std::vector<double>& rhs) {
    std::vector<double> resid = rhs;
    for (int j = 0; j < total; ++j) {
      if (in_basis[static_cast<std::size_t>(j)] || value[static_cast<std::size_t>(j)] == 0.0) continue;
      for (const auto& [row, v] : cols[static_cast<std::size_t>(j)]) resid[static_cast<std::size_t>(row)] -= v * value[static_cast<std::size_t>(j)];
    }
    for (int r = 0; r < m; ++r) {
      double s = 0.0;
      for (int k = 0; k < m; ++k) s += binv_at(r, k) * resid[static_cast<std::size_t>(k)];
      value[static_cast<std::size_t>(basis[r])] = s;
    }
  }

  std::vector<double> dual_row_multipliers() const {
    std::vector<double> y(static_cast<std::size_t>(m), 0.0);
    for (int k = 0; k < m; ++k) {
      const double cb = cost[static_cast<std::size_t>(basis[k])];
      if (cb == 0.0) continue;
      for (int j = 0; j < m; ++j) y[static_cast<std::size_t>(j)] += cb * binv[static_cast<std::size_t>(k) * m + j];
    }
    return y;
  }

  double reduced_cost(int j, const std::vector<double>& y) const {
    double d = cost[static_cast<std::size_t>(j)];
    for (const auto& [row, v] : cols[static_cast<std::size_t>(j)]) d -= y[static_cast<std::size_t>(row)] * v;
    return d;
  }

  std::vector<double> ftran(int j) const {
    std::vector<double> d(static_cast<std::size_t>(m), 0.0);
    for (int r = 0; r < m; ++r) {
      double s = 0.0;
      for (const auto& [row, v] : cols[static_cast<std::size_t>(j)]) s += binv[static_cast<std::size_t>(r) * m + row] * v;
      d[static_cast<std::size_t>(r)] = s;
    }
    return d;
  }

  // One phase of the bounded-variable simplex. Returns status for this
  // phase's objective (optimal/unbounded/iteration_limit).
  LpStatus optimize() {
    int since_refactor = 0;
    while (true) {
      if (++iterations > kMaxIterations) return LpStatus::iteration_limit;
      const std::vector<double> y = dual_row_multipliers();

      // Entering variable: nonbasic whose reduced cost can improve a
      // minimization. direction +1 = increase (at lower / free), -1 =
      // decrease (at upper / free).
      int enter = -1;
      int dir = 0;
      double best = kOptTol;
      for (int j = 0; j < total; ++j) {
        if (in_basis[static_cast<std::size_t>(j)]) continue;
        const double l = lo[static_cast<std::size_t>(j)], h = hi[static_cast<std::size_t>(j)];
        if (l == h) continue;  // fixed
        const double d = reduced_cost(j, y);
        const double v = value[static_cast<std::size_t>(j)];
        const bool at_lower = std::isfinite(l) && v <= l + kFeasTol;
        const bool at_upper = std::isfinite(h) && v >= h - kFeasTol;
        const bool is_free = !at_lower && !at_upper;
        double improvement = 0.0;
        int cand_dir = 0;
        if ((at_lower || is_free) && d < -kOptTol) {
          improvement = -d;
          cand_dir = +1;
        } else if ((at_upper || is_free) && d > kOptTol) {
          improvement = d;
          cand_dir = -1;
        }
        if (cand_dir == 0) continue;
        if (bland) {
          enter = j;
          dir = cand_dir;
          break;
        }
        if (improvement > best) {
          best = improvement;
          enter = j;
          dir = cand_dir;
        }
      }
      if (enter < 0) return LpStatus::optimal;

      const std::vector<double> d = ftran(enter);

      // Ratio test: step t >= 0 along +/- the entering column.
      double t_max = kInf;
      int leave_row = -1;
      double leave_pivot = 0.0;
      int leave_to = 0;  // -1: leaving variable hits lower, +1: hits upper
      const double span = hi[static_cast<std::size_t>(enter)] - lo[static_cast<std::size_t>(enter)];
      if (std::isfinite(span)) t_max = span;  // bound-to-bound flip
      for (int r = 0; r < m; ++r) {
        const int jb = basis[r];
        const double rate = dir * d[static_cast<std::size_t>(r)];
        const double vb = value[static_cast<std::size_t>(jb)];
        if (rate > kPivotTol) {
          const double lb = lo[static_cast<std::size_t>(jb)];
          if (!std::isfinite(lb)) continue;
          const double t = (vb - lb) / rate;
          if (t < t_max - 1e-12 ||
              (t < t_max + 1e-12 && leave_row >= 0 &&
               (bland ? jb < basis[leave_row] : std::fabs(d[static_cast<std::size_t>(r)]) > std::fabs(leave_pivot)))) {
            t_max = std::max(t, 0.0);
            leave_row = r;
            leave_pivot = d[static_cast<std::size_t>(r)];
            leave_to = -1;
          }
        } else if (rate < -kPivotTol) {
          const double ub = hi[static_cast<std::size_t>(jb)];
          if (!std::isfinite(ub)) continue;
          const double t = (ub - vb) / (-rate);
          if (t < t_max - 1e-12 ||
              (t < t_max + 1e-12 && leave_row >= 0 &&
               (bland ? jb < basis[leave_row] : std::fabs(d[static_cast<std::size_t>(r)]) > std::fabs(leave_pivot)))) {
            t_max = std::max(t, 0.0);
            leave_row = r;
            leave_pivot = d[static_cast<std::size_t>(r)];
            leave_to = +1;
          }
        }
      }
      if (!std::isfinite(t_max)) return LpStatus::unbounded;

      if (t_max < 1e-12) {
        if (++degenerate_streak > kDegenerateStreakLimit) bland = true;
      } else {
        degenerate_streak = 0;
      }

      // Apply the step.
      value[static_cast<std::size_t>(enter)] += dir * t_max;
      for (int r = 0; r < m; ++r)
        value[static_cast<std::size_t>(basis[r])] -= dir * t_max * d[static_cast<std::size_t>(r)];

      if (leave_row < 0) continue;  // bound flip, basis unchanged

      const int leaving = basis[leave_row];
      value[static_cast<std::size_t>(leaving)] =
          leave_to < 0 ? lo[static_cast<std::size_t>(leaving)] : hi[static_cast<std::size_t>(leaving)];
      basis[leave_row] = enter;
      in_basis[static_cast<std::size_t>(enter)] = 1;
      in_basis[static_cast<std::size_t>(leaving)] = 0;

      // Rank-1 update of the dense inverse; refactorize periodically.
      if (++since_refactor >= 64) {
        refactorize();
        since_refactor = 0;
      } else {
        const double piv = d[static_cast<std::size_t>(leave_row)];
        if (std::fabs(piv) < kPivotTol) {
          refactorize();
          since_refactor = 0;
        } else {
          for (int j = 0; j < m; ++j) binv_at(leave_row, j) /= piv;
          for (int r = 0; r < m; ++r) {
            if (r == leave_row) continue;
            const double f = d[static_cast<std::size_t>(r)];
            if (f == 0.0) continue;
            for (int j = 0; j < m; ++j) binv_at(r, j) -= f * binv_at(leave_row, j);
          }
        }
      }
    }
  }
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp) {
  const int n = lp.num_variables();
  const int m = lp.num_rows();
  LpSolution out;

  // No constraint rows: each variable sits at its best bound.
  if (m == 0) {
    out.x.assign(static_cast<std::size_t>(n), 0.0);
    double obj = 0.0;
    for (int j = 0; j < n; ++j) {
      const double c = lp.sense() == LpSense::minimize ? lp.objective()[j] : -lp.objective()[j];
      double v;
      if (c > 0 || (c == 0 && std::isfinite(lp.lower()[j])))
        v = lp.lower()[j];
      else
        v = lp.upper()[j];
      if (!std::isfinite(v)) {
        if (c == 0) {
          v = std::isfinite(lp.lower()[j]) ? lp.lower()[j] : 0.0;
        } else {
          out.status = LpStatus::unbounded;
          return out;
        }
      }
      out.x[static_cast<std::size_t>(j)] = v;
      obj += lp.objective()[j] * v;
    }
    out.status = LpStatus::optimal;
    out.objective = obj;
    out.reduced_costs = lp.objective();
    return out;
  }

  Simplex s;
  s.n = n;
  s.m = m;
  s.total = n + 2 * m;
  s.cost.assign(static_cast<std::size_t>(s.total), 0.0);
  s.lo.resize(static_cast<std::size_t>(s.total));
  s.hi.resize(static_cast<std::size_t>(s.total));
  s.value.assign(static_cast<std::size_t>(s.total), 0.0);
  s.in_basis.assign(static_cast<std::size_t>(s.total), 0);
  s.cols.resize(static_cast<std::size_t>(s.total));

  const bool maximize = lp.sense() == LpSense::maximize;
  for (int j = 0; j < n; ++j) {
    s.lo[static_cast<std::size_t>(j)] = lp.lower()[j];
    s.hi[static_cast<std::size_t>(j)] = lp.upper()[j];
  }
  for (int i = 0; i < m; ++i) {
    const auto& row = lp.rows()[i];
    for (const auto& [j, v] : row.coeffs) s.cols[static_cast<std::size_t>(j)].emplace_back(i, v);
    const int slack = n + i;
    s.cols[static_cast<std::size_t>(slack)].emplace_back(i, 1.0);
    switch (row.relation) {
      case '<':
        s.lo[static_cast<std::size_t>(slack)] = 0.0;
        s.hi[static_cast<std::size_t>(slack)] = kInf;
        break;
      case '>':
        s.lo[static_cast<std::size_t>(slack)] = -kInf;
        s.hi[static_cast<std::size_t>(slack)] = 0.0;
        break;
      default:
        s.lo[static_cast<std::size_t>(slack)] = 0.0;
        s.hi[static_cast<std::size_t>(slack)] = 0.0;
    }
  }

  // Nonbasic start: every real variable at its finite bound nearest zero
  // (zero for free variables).
  for (int j = 0; j < n + m; ++j) {
    const double l = s.lo[static_cast<std::size_t>(j)], h = s.hi[static_cast<std::size_t>(j)];
    s.value[static_cast<std::size_t>(j)] = std::isfinite(l) ? l : (std::isfinite(h) ? h : 0.0);
  }

  // Artificial per row carries the initial residual; phase 1 minimizes their
  // total magnitude.
  std::vector<double> rhs(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) rhs[static_cast<std::size_t>(i)] = lp.rows()[i].rhs;
  std::vector<double> resid = rhs;
  for (int j = 0; j < n + m; ++j) {
    const double v = s.value[static_cast<std::size_t>(j)];
    if (v == 0.0) continue;
    for (const auto& [row, c] : s.cols[static_cast<std::size_t>(j)]) resid[static_cast<std::size_t>(row)] -= c * v;
  }
  s.basis.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const int art = n + m + i;
    s.cols[static_cast<std::size_t>(art)].emplace_back(i, resid[static_cast<std::size_t>(i)] >= 0 ? 1.0 : -1.0);
    s.lo[static_cast<std::size_t>(art)] = 0.0;
    s.hi[static_cast<std::size_t>(art)] = kInf;
    s.value[static_cast<std::size_t>(art)] = std::fabs(resid[static_cast<std::size_t>(i)]);
    s.cost[static_cast<std::size_t>(art)] = 1.0;
    s.basis[static_cast<std::size_t>(i)] = art;
    s.in_basis[static_cast<std::size_t>(art)] = 1;
  }
  s.refactorize();

  // Phase 1.
  LpStatus st = s.optimize();
  if (st == LpStatus::iteration_limit) {
    out.status = st;
    return out;
  }
  double infeas = 0.0;
  for (int i = 0; i < m; ++i) infeas += s.value[static_cast<std::size_t>(n + m + i)];
  double scale = 1.0;
  for (int i = 0; i < m; ++i) scale = std::max(scale, std::fabs(rhs[static_cast<std::size_t>(i)]));
  if (infeas > kFeasTol * scale) {
    out.status = LpStatus::infeasible;
    return out;
  }

  // Phase 2: real costs; artificials pinned to zero.
  for (int j = 0; j < n; ++j)
    s.cost[static_cast<std::size_t>(j)] = maximize ? -lp.objective()[j] : lp.objective()[j];
  for (int i = 0; i < m; ++i) {
    const int art = n + m + i;
    s.cost[static_cast<std::size_t>(art)] = 0.0;
    s.lo[static_cast<std::size_t>(art)] = 0.0;
    s.hi[static_cast<std::size_t>(art)] = 0.0;
    s.value[static_cast<std::size_t>(art)] = 0.0;
  }
  s.recompute_basics(rhs);
  st = s.optimize();
  if (st != LpStatus::optimal) {
    out.status = st;
    return out;
  }

  out.status = LpStatus::optimal;
  out.x.assign(static_cast<std::size_t>(n), 0.0);
  for (int j = 0; j < n; ++j) out.x[static_cast<std::size_t>(j)] = s.value[static_cast<std::size_t>(j)];
  double obj = 0.0;
  for (int j = 0; j < n; ++j) obj += lp.objective()[j] * out.x[static_cast<std::size_t>(j)];
  out.objective = obj;

  out.basis.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const int b = s.basis[static_cast<std::size_t>(i)];
    out.basis[static_cast<std::size_t>(i)] = b < n + m ? b : -(b - (n + m)) - 1;
  }
  const std::vector<double> y = s.dual_row_multipliers();
  out.duals.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    out.duals[static_cast<std::size_t>(i)] = maximize ? -y[static_cast<std::size_t>(i)] : y[static_cast<std::size_t>(i)];
  out.reduced_costs.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double d = s.reduced_cost(j, y);
    out.reduced_costs[static_cast<std::size_t>(j)] = maximize ? -d : d;
  }
  return out;
}

}  // namespace prsense
