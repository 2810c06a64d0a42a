#include "ror/householder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ror {

CompactWY::CompactWY(Matrix v, Matrix t, std::vector<std::size_t> channels)
    : dim_(v.rows()), v_(std::move(v)), t_(std::move(t)), channels_(std::move(channels)) {
  const std::size_t m = channels_.size();
  if (v_.cols() != m || t_.rows() != m || t_.cols() != m) {
    throw std::invalid_argument("CompactWY: V is " + std::to_string(v_.rows()) + "x" +
                                std::to_string(v_.cols()) + ", T is " +
                                std::to_string(t_.rows()) + "x" + std::to_string(t_.cols()) +
                                " for " + std::to_string(m) + " channels");
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (t_(i, j) != 0.0) throw std::invalid_argument("CompactWY: T is not upper triangular");
  for (std::size_t k : channels_)
    if (k >= dim_) throw std::invalid_argument("CompactWY: protected channel out of range");
}

HouseholderVector householder_from_outlier(std::size_t d, std::size_t k) {
  if (d < 2) throw std::invalid_argument("householder_from_outlier: need d >= 2, got " +
                                         std::to_string(d));
  if (k >= d) throw std::invalid_argument("householder_from_outlier: channel " +
                                          std::to_string(k) + " out of range for d=" +
                                          std::to_string(d));
  const double u = 1.0 / std::sqrt(static_cast<double>(d));
  HouseholderVector h;
  h.target_channel = k;
  h.v.assign(d, -u);
  h.v[k] += 1.0;
  const double n = norm2(h.v);
  for (double& x : h.v) x /= n;
  return h;
}

Matrix apply_householder(const Matrix& x, const HouseholderVector& h) {
  if (x.cols() != h.dim()) {
    throw std::invalid_argument("apply_householder: X has " + std::to_string(x.cols()) +
                                " columns, reflector has dimension " + std::to_string(h.dim()));
  }
  Matrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double s = 2.0 * dot(row, h.v);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= s * h.v[j];
  }
  return out;
}

Matrix householder_dense(const HouseholderVector& h) {
  const std::size_t d = h.dim();
  Matrix hm = Matrix::identity(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) hm(i, j) -= 2.0 * h.v[i] * h.v[j];
  return hm;
}

CompactWY wy_append(const CompactWY& wy, const HouseholderVector& h, std::size_t max_rank) {
  const std::size_t d = wy.dim();
  if (h.dim() != d) {
    throw std::invalid_argument("wy_append: reflector dimension " + std::to_string(h.dim()) +
                                " != " + std::to_string(d));
  }
  const std::size_t m = wy.rank();
  if (m + 1 > max_rank) {
    throw std::invalid_argument("wy_append: rank " + std::to_string(m + 1) +
                                " exceeds limit " + std::to_string(max_rank));
  }

  // w = V_old^T v, t = -2 T_old w
  std::vector<double> w(m, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < m; ++j) w[j] += wy.v_(i, j) * h.v[i];
  std::vector<double> t(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) t[i] += wy.t_(i, j) * w[j];

  CompactWY out;
  out.dim_ = d;
  out.v_ = Matrix(d, m + 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.v_(i, j) = wy.v_(i, j);
    out.v_(i, m) = h.v[i];
  }
  out.t_ = Matrix(m + 1, m + 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) out.t_(i, j) = wy.t_(i, j);
    out.t_(i, m) = -2.0 * t[i];
  }
  out.t_(m, m) = 2.0;
  out.channels_ = wy.channels_;
  out.channels_.push_back(h.target_channel);
  return out;
}

Matrix wy_to_dense(const CompactWY& wy) {
  Matrix q = Matrix::identity(wy.dim());
  if (wy.empty()) return q;
  const Matrix vt = matmul(wy.V(), wy.T());
  return q - matmul(vt, transpose(wy.V()));
}

Matrix apply_wy_right(const Matrix& x, const CompactWY& wy) {
  if (x.cols() != wy.dim()) {
    throw std::invalid_argument("apply_wy_right: X has " + std::to_string(x.cols()) +
                                " columns, rotation has dimension " + std::to_string(wy.dim()));
  }
  if (wy.empty()) return x;
  const Matrix xvt = matmul(matmul(x, wy.V()), wy.T());
  return x - matmul(xvt, transpose(wy.V()));
}

Matrix apply_wy_transpose_left(const Matrix& w, const CompactWY& wy) {
  if (w.rows() != wy.dim()) {
    throw std::invalid_argument("apply_wy_transpose_left: W has " + std::to_string(w.rows()) +
                                " rows, rotation has dimension " + std::to_string(wy.dim()));
  }
  if (wy.empty()) return w;
  const Matrix vtw = matmul(transpose(wy.V()), w);
  return w - matmul(wy.V(), matmul(transpose(wy.T()), vtw));
}

std::vector<double> wy_row(const CompactWY& wy, std::size_t r) {
  if (r >= wy.dim()) throw std::invalid_argument("wy_row: row out of range");
  Matrix e(1, wy.dim());
  e(0, r) = 1.0;
  const Matrix q = apply_wy_right(e, wy);
  return {q.values().begin(), q.values().end()};
}

}  // namespace ror
