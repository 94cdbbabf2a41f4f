#include "convexcert/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace convexcert {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

std::vector<double> Matrix::col(std::size_t j) const {
  std::vector<double> out(rows_);
  for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": operand shapes " + a.shape_string() + " and " +
                     b.shape_string() + " differ");
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: left operand " + a.shape_string() +
                     " is incompatible with right operand " + b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c.data()[k] += b.data()[k];
  return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c.data()[k] -= b.data()[k];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t k = 0; k < c.size(); ++k) c.data()[k] *= b.data()[k];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.data()) x *= s;
  return c;
}

void symmetrize(Matrix& h) {
  if (h.rows() != h.cols()) throw ShapeError("symmetrize: matrix " + h.shape_string() + " is not square");
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = i + 1; j < h.cols(); ++j) {
      const double v = 0.5 * (h(i, j) + h(j, i));
      h(i, j) = v;
      h(j, i) = v;
    }
  }
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double x) { return std::isfinite(x); });
}

bool is_symmetric(const Matrix& h, double tol) {
  if (h.rows() != h.cols()) return false;
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = i + 1; j < h.cols(); ++j)
      if (std::abs(h(i, j) - h(j, i)) > tol) return false;
  return true;
}

double quadform(const Matrix& h, std::span<const double> v) {
  if (h.rows() != h.cols() || h.rows() != v.size()) {
    throw ShapeError("quadform: matrix " + h.shape_string() + " and vector of length " +
                     std::to_string(v.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < h.cols(); ++j) row += h(i, j) * v[j];
    s += v[i] * row;
  }
  return s;
}

Matrix congruence(const Matrix& h, const Matrix& jacobian) {
  if (h.rows() != h.cols() || h.rows() != jacobian.rows()) {
    throw ShapeError("congruence: block " + h.shape_string() + " and Jacobian " +
                     jacobian.shape_string());
  }
  Matrix out = matmul(transpose(jacobian), matmul(h, jacobian));
  symmetrize(out);
  return out;
}

std::vector<double> sym_eigenvalues(const Matrix& h, JacobiOptions opts) {
  const std::size_t n = h.rows();
  if (h.cols() != n) throw ShapeError("sym_eigenvalues: matrix " + h.shape_string() + " is not square");
  const double scale_ref = std::max(1.0, max_abs(h));
  if (!is_symmetric(h, 1e-9 * scale_ref)) {
    throw std::invalid_argument("sym_eigenvalues: matrix is not symmetric within 1e-9");
  }
  Matrix a = h;
  symmetrize(a);
  const double stop = opts.tol * std::max(1.0, frobenius_norm(a));

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < opts.max_sweeps && off_norm() >= stop; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
      }
    }
  }

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

double sym_eig_min(const Matrix& h, double tol) {
  if (h.rows() == 0) throw ShapeError("sym_eig_min: empty matrix");
  return sym_eigenvalues(h, JacobiOptions{tol, 100}).front();
}

PerSampleBlocks PerSampleBlocks::per_column(std::size_t rows, std::vector<Matrix> blocks) {
  for (auto& b : blocks) {
    if (b.rows() != rows || b.cols() != rows) {
      throw ShapeError("per-sample block " + b.shape_string() + " expected " + std::to_string(rows) +
                       "x" + std::to_string(rows));
    }
    symmetrize(b);
  }
  PerSampleBlocks out;
  out.layout_ = BlockLayout::PerColumn;
  out.rows_ = rows;
  out.cols_ = blocks.size();
  out.blocks_ = std::move(blocks);
  return out;
}

PerSampleBlocks PerSampleBlocks::joint(std::size_t rows, std::size_t cols, Matrix block) {
  const std::size_t dim = rows * cols;
  if (block.rows() != dim || block.cols() != dim) {
    throw ShapeError("joint block " + block.shape_string() + " expected " + std::to_string(dim) + "x" +
                     std::to_string(dim));
  }
  symmetrize(block);
  PerSampleBlocks out;
  out.layout_ = BlockLayout::Joint;
  out.rows_ = rows;
  out.cols_ = cols;
  out.blocks_.push_back(std::move(block));
  return out;
}

PerSampleBlocks PerSampleBlocks::zeros(std::size_t rows, std::size_t cols) {
  return per_column(rows, std::vector<Matrix>(cols, Matrix(rows, rows)));
}

Matrix PerSampleBlocks::to_joint() const {
  if (layout_ == BlockLayout::Joint) return blocks_.front();
  Matrix h(rows_ * cols_, rows_ * cols_);
  for (std::size_t j = 0; j < cols_; ++j) {
    const Matrix& b = blocks_[j];
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t k = 0; k < rows_; ++k) h(i * cols_ + j, k * cols_ + j) = b(i, k);
  }
  return h;
}

}  // namespace convexcert
