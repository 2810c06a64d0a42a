#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "ror/matrix.hpp"

namespace ror {

/// Unit normal of a reflection H = I - 2 v v^T that carries the basis vector
/// e_k onto the uniform vector u = (d^-1/2, ..., d^-1/2).
struct HouseholderVector {
  std::vector<double> v;
  std::size_t target_channel = 0;

  std::size_t dim() const { return v.size(); }
};

/// Product of reflectors Q = H_1 H_2 ... H_m held as Q = I - V T V^T.
///
/// V is d x m with one unit reflector per column, T is m x m upper
/// triangular. protected_channels[j] is the channel reflector j smooths.
class CompactWY {
 public:
  CompactWY() = default;
  explicit CompactWY(std::size_t dim) : dim_(dim), v_(dim, 0) {}
  CompactWY(Matrix v, Matrix t, std::vector<std::size_t> channels);

  std::size_t dim() const { return dim_; }
  std::size_t rank() const { return channels_.size(); }
  bool empty() const { return channels_.empty(); }

  const Matrix& V() const { return v_; }
  const Matrix& T() const { return t_; }
  const std::vector<std::size_t>& protected_channels() const { return channels_; }

  bool operator==(const CompactWY&) const = default;

 private:
  friend CompactWY wy_append(const CompactWY&, const HouseholderVector&, std::size_t);

  std::size_t dim_ = 0;
  Matrix v_;
  Matrix t_;
  std::vector<std::size_t> channels_;
};

// v = (e_k - u) / ||e_k - u||. Requires d >= 2 and k < d.
HouseholderVector householder_from_outlier(std::size_t d, std::size_t k);

// X - 2 (X v) v^T, without forming H.
Matrix apply_householder(const Matrix& x, const HouseholderVector& h);

// Dense H = I - 2 v v^T. Test and attack use only.
Matrix householder_dense(const HouseholderVector& h);

inline constexpr std::size_t kUnboundedRank = std::numeric_limits<std::size_t>::max();

// Returns the factors of Q_old * H. T grows by the column -2 T_old (V_old^T v)
// over a diagonal entry of 2. Throws when the new rank would exceed max_rank.
CompactWY wy_append(const CompactWY& wy, const HouseholderVector& h,
                    std::size_t max_rank = kUnboundedRank);

// Materializes Q. Never used on the inference path.
Matrix wy_to_dense(const CompactWY& wy);

// X Q = X - (X V) T V^T, evaluated through the two skinny products.
Matrix apply_wy_right(const Matrix& x, const CompactWY& wy);

// Q^T W = W - V T^T V^T W.
Matrix apply_wy_transpose_left(const Matrix& w, const CompactWY& wy);

// Row r of Q, i.e. column r of Q^T.
std::vector<double> wy_row(const CompactWY& wy, std::size_t r);

}  // namespace ror
