#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace eirm {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix column(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool all_finite() const;

  Matrix transpose() const;
  Matrix select_rows(std::span<const std::size_t> indices) const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// Products skip zero entries of the left operand, which makes the sparse
// image batches used by the benchmarks cheap.
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ · b without materializing the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
/// a · bᵀ without materializing the transpose.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

/// Adds `bias` to every row.
void add_row_vector(Matrix& m, std::span<const double> bias);
/// Column sums.
std::vector<double> column_sums(const Matrix& m);
/// Stacks matrices with equal column counts.
Matrix vstack(std::span<const Matrix> parts);

double max_abs_diff(const Matrix& a, const Matrix& b);

/// Least-squares solution of x·β ≈ y via Cholesky on the normal equations.
std::vector<double> least_squares(const Matrix& x, std::span<const double> y);

}  // namespace eirm
