#include <cmath>
#include <limits>
#include <stdexcept>

#include "doctest.h"
#include "ror/householder.hpp"
#include "ror/matrix.hpp"
#include "test_support.hpp"

using namespace ror;
using ror::testing::Gen;

namespace {

std::vector<double> uniform_vec(std::size_t d) {
  return std::vector<double>(d, 1.0 / std::sqrt(static_cast<double>(d)));
}

Matrix row_vector(const std::vector<double>& v) { return Matrix(1, v.size(), v); }

CompactWY wy_from(const std::vector<std::vector<double>>& vs) {
  CompactWY wy(vs.front().size());
  for (std::size_t i = 0; i < vs.size(); ++i) wy = wy_append(wy, {vs[i], i});
  return wy;
}

}  // namespace

TEST_CASE("matmul hand cases") {
  const Matrix w = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  CHECK(matmul(Matrix::identity(3), w) == w);
  const Matrix y = matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3}, {4}}));
  CHECK(y.rows() == 1);
  CHECK(y.cols() == 1);
  CHECK(y(0, 0) == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("matmul agrees with the triple loop") {
  Gen g(11);
  for (int t = 0; t < 5; ++t) {
    const Matrix a = ror::testing::random_matrix(g, 16, 16);
    const Matrix b = ror::testing::random_matrix(g, 16, 16);
    CHECK(ror::testing::max_abs_diff(matmul(a, b), ror::testing::naive_matmul(a, b)) <= 1e-12);
  }
}

TEST_CASE("matmul is reproducible and propagates NaN") {
  Gen g(12);
  const Matrix a = ror::testing::random_matrix(g, 9, 7);
  const Matrix b = ror::testing::random_matrix(g, 7, 5);
  CHECK(matmul(a, b) == matmul(a, b));
  Matrix z(1, 2, 0.0);
  Matrix w = Matrix::from_rows({{1.0}, {std::numeric_limits<double>::infinity()}});
  CHECK(std::isnan(matmul(z, w)(0, 0)));
}

TEST_CASE("matrix construction checks size") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK(concat_rows(std::vector<Matrix>{Matrix(2, 3, 1.0), Matrix(1, 3, 2.0)}).rows() == 3);
  CHECK_THROWS(concat_rows(std::vector<Matrix>{Matrix(2, 3), Matrix(1, 2)}));
}

TEST_CASE("reflector for d=4, k=0 is [0.5, -0.5, -0.5, -0.5]") {
  const auto h = householder_from_outlier(4, 0);
  REQUIRE(h.dim() == 4);
  CHECK(h.v[0] == doctest::Approx(0.5).epsilon(1e-15));
  for (int i = 1; i < 4; ++i) CHECK(h.v[i] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(h.target_channel == 0);
}

TEST_CASE("reflector maps e_k to u and u to e_k") {
  for (std::size_t d : {2u, 3u, 7u, 64u, 255u}) {
    for (std::size_t k : {std::size_t{0}, d / 2, d - 1}) {
      const auto h = householder_from_outlier(d, k);
      CHECK(std::fabs(norm2(h.v) - 1.0) <= 1e-12);
      std::vector<double> ek(d, 0.0);
      ek[k] = 1.0;
      const Matrix hek = apply_householder(row_vector(ek), h);
      const Matrix hu = apply_householder(row_vector(uniform_vec(d)), h);
      CHECK(ror::testing::max_abs_diff(hek, row_vector(uniform_vec(d))) <= 1e-14);
      CHECK(ror::testing::max_abs_diff(hu, row_vector(ek)) <= 1e-14);
    }
  }
}

TEST_CASE("reflector rejects degenerate input") {
  CHECK_THROWS_AS(householder_from_outlier(1, 0), std::invalid_argument);
  CHECK_THROWS_AS(householder_from_outlier(4, 4), std::invalid_argument);
}

TEST_CASE("apply_householder hand cases") {
  const auto h = householder_from_outlier(4, 0);
  const Matrix e0 = Matrix::from_rows({{1, 0, 0, 0}});
  CHECK(ror::testing::max_abs_diff(apply_householder(e0, h), Matrix::from_rows({{.5, .5, .5, .5}})) <= 1e-15);
  const Matrix perp = Matrix::from_rows({{0, 1, -1, 0}});
  CHECK(ror::testing::max_abs_diff(apply_householder(perp, h), perp) <= 1e-15);
  CHECK_THROWS_AS(apply_householder(Matrix(2, 3), h), std::invalid_argument);
}

TEST_CASE("apply_householder matches the dense reflector and is an involution") {
  Gen g(21);
  for (int t = 0; t < 10; ++t) {
    const auto h = householder_from_outlier(8, g.index(8));
    const Matrix x = ror::testing::random_matrix(g, 8, 8);
    const Matrix hx = apply_householder(x, h);
    CHECK(ror::testing::max_abs_diff(hx, ror::testing::naive_matmul(x, ror::testing::dense_reflector(h.v))) <= 1e-12);
    CHECK(ror::testing::max_abs_diff(apply_householder(hx, h), x) <= 1e-12);
  }
}

TEST_CASE("wy_append single and orthogonal pairs") {
  const auto h = householder_from_outlier(6, 2);
  const CompactWY one = wy_append(CompactWY(6), h);
  CHECK(one.rank() == 1);
  CHECK(one.T()(0, 0) == 2.0);
  CHECK(ror::testing::max_abs_diff(wy_to_dense(one), ror::testing::dense_reflector(h.v)) <= 1e-15);

  // e_0 and e_1 are orthogonal unit vectors.
  std::vector<double> a(4, 0.0), b(4, 0.0);
  a[0] = 1.0;
  b[1] = 1.0;
  const CompactWY two = wy_from({a, b});
  CHECK(two.T() == Matrix::from_rows({{2, 0}, {0, 2}}));
}

TEST_CASE("wy_append enforces dimension and rank cap") {
  const CompactWY wy(5);
  CHECK_THROWS_AS(wy_append(wy, householder_from_outlier(4, 0)), std::invalid_argument);
  const CompactWY one = wy_append(wy, householder_from_outlier(5, 0), 1);
  CHECK_THROWS_AS(wy_append(one, householder_from_outlier(5, 1), 1), std::invalid_argument);
}

TEST_CASE("two random reflectors equal the sequential product") {
  Gen g(31);
  for (int t = 0; t < 10; ++t) {
    const auto v1 = ror::testing::random_unit(g, 12);
    const auto v2 = ror::testing::random_unit(g, 12);
    const Matrix seq = ror::testing::naive_matmul(ror::testing::dense_reflector(v1),
                                                  ror::testing::dense_reflector(v2));
    CHECK(ror::testing::frob_diff(wy_to_dense(wy_from({v1, v2})), seq) <= 1e-12);
  }
}

TEST_CASE("wy_to_dense edge cases and orthogonality") {
  CHECK(wy_to_dense(CompactWY(5)) == Matrix::identity(5));
  Gen g(41);
  std::vector<std::vector<double>> vs;
  for (int i = 0; i < 5; ++i) vs.push_back(ror::testing::random_unit(g, 64));
  CHECK(ror::testing::orthogonality_error(wy_to_dense(wy_from(vs))) <= 1e-10);
}

TEST_CASE("apply_wy_right and apply_wy_transpose_left match dense Q") {
  Gen g(51);
  const std::size_t d = 20;
  CompactWY wy(d);
  for (std::size_t k : {3u, 9u, 14u}) wy = wy_append(wy, householder_from_outlier(d, k));
  const Matrix q = wy_to_dense(wy);
  const Matrix x = ror::testing::random_matrix(g, 7, d);
  const Matrix w = ror::testing::random_matrix(g, d, 11);
  CHECK(ror::testing::max_abs_diff(apply_wy_right(x, wy), ror::testing::naive_matmul(x, q)) <= 1e-10);
  CHECK(ror::testing::max_abs_diff(apply_wy_transpose_left(w, wy),
                                   ror::testing::naive_matmul(ror::testing::naive_transpose(q), w)) <= 1e-10);

  CHECK(apply_wy_right(x, CompactWY(d)) == x);
  CHECK(apply_wy_transpose_left(w, CompactWY(d)) == w);
  CHECK_THROWS_AS(apply_wy_right(Matrix(2, d + 1), wy), std::invalid_argument);
  CHECK_THROWS_AS(apply_wy_transpose_left(Matrix(d + 1, 2), wy), std::invalid_argument);
}

TEST_CASE("fused identity is Q transpose and stays orthogonal") {
  const std::size_t d = 16;
  CompactWY wy(d);
  for (std::size_t k : {1u, 5u, 6u}) wy = wy_append(wy, householder_from_outlier(d, k));
  const Matrix wt = apply_wy_transpose_left(Matrix::identity(d), wy);
  CHECK(ror::testing::max_abs_diff(wt, ror::testing::naive_transpose(wy_to_dense(wy))) <= 1e-12);
  CHECK(ror::testing::orthogonality_error(wt) <= 1e-10);
}

TEST_CASE("single outlier row becomes uniform") {
  const std::size_t d = 32, k = 13;
  const CompactWY wy = wy_append(CompactWY(d), householder_from_outlier(d, k));
  std::vector<double> ek(d, 0.0);
  ek[k] = 1.0;
  CHECK(ror::testing::max_abs_diff(apply_wy_right(row_vector(ek), wy), row_vector(uniform_vec(d))) <= 1e-14);
}

TEST_CASE("property: losslessness of rotate-then-fuse") {
  Gen g(61);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 8 + g.index(60);
    const std::size_t m = g.index(std::min<std::size_t>(d, 6) + 1);
    CompactWY wy(d);
    for (std::size_t k : ror::testing::random_channels(g, d, m))
      wy = wy_append(wy, householder_from_outlier(d, k));
    const Matrix x = ror::testing::random_matrix(g, 1 + g.index(10), d, g.uniform(0.1, 50.0));
    const Matrix w = ror::testing::random_matrix(g, d, 1 + g.index(20));
    const Matrix ref = matmul(x, w);
    const Matrix got = matmul(apply_wy_right(x, wy), apply_wy_transpose_left(w, wy));
    CHECK(ror::testing::max_abs_diff(got, ref) <= 1e-9 * (1.0 + max_abs(ref)));
  }
}

TEST_CASE("property: WY equals the sequential reflector product") {
  Gen g(71);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 4 + g.index(60);
    const std::size_t m = 1 + g.index(8);
    std::vector<std::vector<double>> vs;
    Matrix seq = Matrix::identity(d);
    for (std::size_t i = 0; i < m; ++i) {
      vs.push_back(ror::testing::random_unit(g, d));
      seq = ror::testing::naive_matmul(seq, ror::testing::dense_reflector(vs.back()));
    }
    const CompactWY wy = wy_from(vs);
    for (std::size_t j = 0; j < m; ++j) {
      CHECK(std::fabs(norm2(wy.V().column(j)) - 1.0) <= 1e-12);
      for (std::size_t i = j + 1; i < m; ++i) CHECK(wy.T()(i, j) == 0.0);
    }
    CHECK(ror::testing::frob_diff(wy_to_dense(wy), seq) <= 1e-10);
    CHECK(ror::testing::orthogonality_error(wy_to_dense(wy)) <= 1e-10);
  }
}

TEST_CASE("property: single-outlier spike column equals X u") {
  Gen g(81);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 2 + g.index(100);
    const std::size_t k = g.index(d);
    const CompactWY wy = wy_append(CompactWY(d), householder_from_outlier(d, k));
    const Matrix x = ror::testing::random_matrix(g, 5, d);
    const Matrix xt = apply_wy_right(x, wy);
    const auto u = uniform_vec(d);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double xu = 0.0;
      for (std::size_t j = 0; j < d; ++j) xu += x(i, j) * u[j];
      CHECK(std::fabs(xt(i, k) - xu) <= 1e-12 * (1.0 + std::fabs(xu)));
    }
  }
}

TEST_CASE("shared target: a second reflector moves the first spike onward") {
  // Both reflectors target the same u, so H_b sends the u produced by H_a
  // back to e_b. Only the last protected channel ends up smoothed.
  const std::size_t d = 16;
  CompactWY wy(d);
  wy = wy_append(wy, householder_from_outlier(d, 2));
  wy = wy_append(wy, householder_from_outlier(d, 9));
  std::vector<double> e2(d, 0.0), e9(d, 0.0);
  e2[2] = 1.0;
  e9[9] = 1.0;
  CHECK(ror::testing::max_abs_diff(apply_wy_right(row_vector(e2), wy), row_vector(e9)) <= 1e-13);
  const Matrix r9 = apply_wy_right(row_vector(e9), wy);
  CHECK(max_abs(r9) < 1.0);
}

TEST_CASE("CompactWY validating constructor") {
  CHECK_THROWS_AS(CompactWY(Matrix(4, 2), Matrix(1, 1), {0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(CompactWY(Matrix(4, 1), Matrix(1, 1), {4}), std::invalid_argument);
  CHECK_THROWS_AS(CompactWY(Matrix(4, 2), Matrix::from_rows({{2, 0}, {1, 2}}), {0, 1}),
                  std::invalid_argument);
  const CompactWY ok = wy_append(CompactWY(4), householder_from_outlier(4, 1));
  CHECK(CompactWY(ok.V(), ok.T(), ok.protected_channels()) == ok);
}
