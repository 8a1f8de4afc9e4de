#include "prsense/sparse.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <algorithm>
#include <atomic>
#include <cmath>

namespace prsense {

namespace {

std::atomic<long> g_factorizations{0};

}  // namespace

SparseMatrix SparseMatrix::from_triplets(int rows, int cols, std::vector<Triplet> entries) {
  SparseMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  std::sort(entries.begin(), entries.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  m.row_offsets_.assign(static_cast<std::size_t>(rows) + 1, 0);
  for (std::size_t i = 0; i < entries.size();) {
    const int r = entries[i].row;
    const int c = entries[i].col;
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw Error("sparse triplet out of range");
    double v = 0.0;
    std::size_t j = i;
    while (j < entries.size() && entries[j].row == r && entries[j].col == c) v += entries[j++].value;
    if (!std::isfinite(v)) throw NumericalError("non-finite sparse matrix entry");
    if (v != 0.0) {
      m.col_indices_.push_back(c);
      m.values_.push_back(v);
      ++m.row_offsets_[static_cast<std::size_t>(r) + 1];
    }
    i = j;
  }
  for (int r = 0; r < rows; ++r) m.row_offsets_[static_cast<std::size_t>(r) + 1] += m.row_offsets_[static_cast<std::size_t>(r)];
  return m;
}

std::vector<double> SparseMatrix::multiply(std::span<const double> x) const {
  std::vector<double> y(static_cast<std::size_t>(rows_), 0.0);
  for (int r = 0; r < rows_; ++r) {
    double s = 0.0;
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) s += values_[k] * x[static_cast<std::size_t>(col_indices_[k])];
    y[static_cast<std::size_t>(r)] = s;
  }
  return y;
}

std::vector<double> SparseMatrix::multiply_transposed(std::span<const double> x) const {
  std::vector<double> y(static_cast<std::size_t>(cols_), 0.0);
  for (int r = 0; r < rows_; ++r) {
    const double xr = x[static_cast<std::size_t>(r)];
    if (xr == 0.0) continue;
    for (int k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) y[static_cast<std::size_t>(col_indices_[k])] += values_[k] * xr;
  }
  return y;
}

using EigenSparse = Eigen::SparseMatrix<double>;

struct SparseLuSolver::Impl {
  EigenSparse a;
  // transpose() is non-const in Eigen 3.4 although solving does not mutate.
  mutable Eigen::SparseLU<EigenSparse, Eigen::COLAMDOrdering<int>> lu;
  int n = 0;

  Eigen::VectorXd residual_checked(const Eigen::VectorXd& b, Eigen::VectorXd x, bool transposed) const {
    auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return transposed ? Eigen::VectorXd(a.transpose() * v) : Eigen::VectorXd(a * v);
    };
    const double bound = 1e-8 * (1.0 + b.lpNorm<Eigen::Infinity>());
    Eigen::VectorXd r = b - apply(x);
    if (r.lpNorm<Eigen::Infinity>() > bound) {
      // One step of iterative refinement before giving up.
      Eigen::VectorXd dx;
      if (transposed)
        dx = lu.transpose().solve(r);
      else
        dx = lu.solve(r);
      x += dx;
      r = b - apply(x);
      if (r.lpNorm<Eigen::Infinity>() > bound || !x.allFinite())
        throw SingularMatrix("linear system is singular or too ill-conditioned (residual check failed)");
    }
    return x;
  }
};

SparseLuSolver::SparseLuSolver(const SparseMatrix& a) : impl_(std::make_unique<Impl>()) {
  if (a.rows() != a.cols()) throw Error("SparseLuSolver: matrix not square");
  impl_->n = a.rows();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(static_cast<std::size_t>(a.nnz()));
  const auto& off = a.row_offsets();
  const auto& col = a.col_indices();
  const auto& val = a.values();
  for (int r = 0; r < a.rows(); ++r)
    for (int k = off[static_cast<std::size_t>(r)]; k < off[static_cast<std::size_t>(r) + 1]; ++k)
      t.emplace_back(r, col[static_cast<std::size_t>(k)], val[static_cast<std::size_t>(k)]);
  impl_->a.resize(a.rows(), a.cols());
  impl_->a.setFromTriplets(t.begin(), t.end());
  impl_->a.makeCompressed();
  impl_->lu.analyzePattern(impl_->a);
  impl_->lu.factorize(impl_->a);
  g_factorizations.fetch_add(1, std::memory_order_relaxed);
  if (impl_->lu.info() != Eigen::Success)
    throw SingularMatrix("LU factorization failed: matrix is singular");
}

SparseLuSolver::~SparseLuSolver() = default;
SparseLuSolver::SparseLuSolver(SparseLuSolver&&) noexcept = default;
SparseLuSolver& SparseLuSolver::operator=(SparseLuSolver&&) noexcept = default;

int SparseLuSolver::dim() const { return impl_->n; }

long SparseLuSolver::factorization_count() { return g_factorizations.load(std::memory_order_relaxed); }

std::vector<double> SparseLuSolver::solve(std::span<const double> b) const {
  if (static_cast<int>(b.size()) != impl_->n) throw Error("solve: dimension mismatch");
  Eigen::VectorXd bv = Eigen::Map<const Eigen::VectorXd>(b.data(), impl_->n);
  Eigen::VectorXd x = impl_->residual_checked(bv, impl_->lu.solve(bv), false);
  return std::vector<double>(x.data(), x.data() + impl_->n);
}

std::vector<double> SparseLuSolver::solve_transposed(std::span<const double> b) const {
  if (static_cast<int>(b.size()) != impl_->n) throw Error("solve_transposed: dimension mismatch");
  Eigen::VectorXd bv = Eigen::Map<const Eigen::VectorXd>(b.data(), impl_->n);
  Eigen::VectorXd x0 = impl_->lu.transpose().solve(bv);
  Eigen::VectorXd x = impl_->residual_checked(bv, std::move(x0), true);
  return std::vector<double>(x.data(), x.data() + impl_->n);
}

std::vector<std::vector<double>> SparseLuSolver::solve_many(const std::vector<std::vector<double>>& columns) const {
  std::vector<std::vector<double>> out;
  out.reserve(columns.size());
  const int n = impl_->n;
  constexpr int kBlock = 16;
  for (std::size_t start = 0; start < columns.size(); start += kBlock) {
    const int w = static_cast<int>(std::min<std::size_t>(kBlock, columns.size() - start));
    Eigen::MatrixXd b(n, w);
    for (int j = 0; j < w; ++j) {
      const auto& c = columns[start + static_cast<std::size_t>(j)];
      if (static_cast<int>(c.size()) != n) throw Error("solve_many: dimension mismatch");
      b.col(j) = Eigen::Map<const Eigen::VectorXd>(c.data(), n);
    }
    Eigen::MatrixXd x = impl_->lu.solve(b);
    for (int j = 0; j < w; ++j) {
      Eigen::VectorXd xj = impl_->residual_checked(b.col(j), x.col(j), false);
      out.emplace_back(xj.data(), xj.data() + n);
    }
  }
  return out;
}

std::vector<double> solve(const SparseMatrix& a, std::span<const double> b) {
  return SparseLuSolver(a).solve(b);
}

std::vector<double> solve_transposed(const SparseMatrix& a, std::span<const double> b) {
  return SparseLuSolver(a).solve_transposed(b);
}

}  // namespace prsense
