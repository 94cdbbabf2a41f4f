#pragma once

// Dense matrices, per-sample curvature blocks and a symmetric eigensolver.
//
// Columns of an activation matrix are independent samples. Second-order
// information about a node is therefore stored as one n x n block per column
// (the cross-column blocks are structurally zero and never stored), unless an
// operator couples columns, in which case a single joint block over the
// row-major flattening of the whole matrix is kept instead.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace convexcert {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix column(std::span<const double> values);
  static Matrix diagonal(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::vector<double> col(std::size_t j) const;
  std::string shape_string() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);

/// (h + h^T) / 2 in place.
void symmetrize(Matrix& h);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
bool all_finite(const Matrix& a);
bool is_symmetric(const Matrix& h, double tol);

/// v^T h v.
double quadform(const Matrix& h, std::span<const double> v);

/// Congruence J^T h J, the second-order pullback through a linear map J.
Matrix congruence(const Matrix& h, const Matrix& jacobian);

struct JacobiOptions {
  double tol = 1e-10;  // off-diagonal Frobenius norm, relative to max(1, ||h||_F)
  int max_sweeps = 100;
};

/// All eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
std::vector<double> sym_eigenvalues(const Matrix& h, JacobiOptions opts = {});

/// Smallest eigenvalue of a symmetric matrix.
double sym_eig_min(const Matrix& h, double tol = 1e-10);

enum class BlockLayout {
  PerColumn,  // one rows x rows block per column
  Joint,      // one (rows*cols) x (rows*cols) block, row-major flattening
};

/// Second derivatives of the objective with respect to one node's matrix.
class PerSampleBlocks {
 public:
  PerSampleBlocks() = default;

  static PerSampleBlocks per_column(std::size_t rows, std::vector<Matrix> blocks);
  static PerSampleBlocks joint(std::size_t rows, std::size_t cols, Matrix block);
  static PerSampleBlocks zeros(std::size_t rows, std::size_t cols);

  BlockLayout layout() const { return layout_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  /// Number of independent blocks: cols for PerColumn, 1 for Joint.
  std::size_t sample_count() const { return blocks_.size(); }
  const Matrix& block(std::size_t j) const { return blocks_.at(j); }
  Matrix& block(std::size_t j) { return blocks_.at(j); }

  /// Full Hessian over the row-major flattening of the node matrix.
  Matrix to_joint() const;

 private:
  BlockLayout layout_ = BlockLayout::PerColumn;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Matrix> blocks_;
};

}  // namespace convexcert
