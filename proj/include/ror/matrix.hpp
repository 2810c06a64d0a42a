#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ror {

/// Dense row-major matrix of doubles. Carries activations (tokens x channels)
/// and weights (d_in x d_out) alike.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

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

  std::vector<double> column(std::size_t c) const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Y = X * W. Fixed i-k-j summation order, so results are bit-reproducible.
// Throws std::invalid_argument when X.cols() != W.rows().
Matrix matmul(const Matrix& x, const Matrix& w);

Matrix transpose(const Matrix& a);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

// Largest absolute entry (the elementwise infinity norm used throughout).
double max_abs(const Matrix& a);
double frobenius_norm(const Matrix& a);

// Stacks matrices with equal column counts along the row (token) axis.
Matrix concat_rows(std::span<const Matrix> parts);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace ror
