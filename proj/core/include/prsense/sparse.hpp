#pragma once

#include <memory>
#include <span>
#include <vector>

#include "prsense/errors.hpp"

namespace prsense {

/// Compressed-row sparse matrix. Column indices are sorted and unique within
/// each row; duplicate triplets are summed on construction.
class SparseMatrix {
 public:
  struct Triplet {
    int row;
    int col;
    double value;
  };

  SparseMatrix() : rows_(0), cols_(0), row_offsets_(1, 0) {}
  static SparseMatrix from_triplets(int rows, int cols, std::vector<Triplet> entries);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  long nnz() const { return static_cast<long>(values_.size()); }

  const std::vector<int>& row_offsets() const { return row_offsets_; }
  const std::vector<int>& col_indices() const { return col_indices_; }
  const std::vector<double>& values() const { return values_; }

  /// y = A x
  std::vector<double> multiply(std::span<const double> x) const;
  /// y = A^T x
  std::vector<double> multiply_transposed(std::span<const double> x) const;

 private:
  int rows_, cols_;
  std::vector<int> row_offsets_;
  std::vector<int> col_indices_;
  std::vector<double> values_;
};

/// Direct LU factorization of a square sparse matrix. Immutable once built;
/// concurrent solves against one factorization (distinct right-hand sides)
/// are the intended parallelization axis.
///
/// Throws SingularMatrix at construction on rank deficiency, and at solve
/// time when the residual check ||Ax-b||inf <= 1e-8*(1+||b||inf) cannot be
/// met even after one refinement step (the near-singular case).
class SparseLuSolver {
 public:
  explicit SparseLuSolver(const SparseMatrix& a);
  ~SparseLuSolver();
  SparseLuSolver(SparseLuSolver&&) noexcept;
  SparseLuSolver& operator=(SparseLuSolver&&) noexcept;

  std::vector<double> solve(std::span<const double> b) const;
  std::vector<double> solve_transposed(std::span<const double> b) const;

  /// Column-block solve: solves A X = B for B given column-major as
  /// ncols vectors of length n. Used to amortize per-solve overhead when one
  /// factorization serves many right-hand sides.
  std::vector<std::vector<double>> solve_many(const std::vector<std::vector<double>>& columns) const;

  int dim() const;

  /// Number of factorizations performed by this process (test observability).
  static long factorization_count();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot convenience wrappers.
std::vector<double> solve(const SparseMatrix& a, std::span<const double> b);
std::vector<double> solve_transposed(const SparseMatrix& a, std::span<const double> b);

}  // namespace prsense
