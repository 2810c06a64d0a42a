#include <bit>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "ror/quant.hpp"
#include "test_support.hpp"

using namespace ror;
using ror::testing::Gen;

namespace {

QuantizedTensor fixed_scale(const Matrix& w, float s) {
  return quantize_with_scales(w, ScaleMode::per_tensor, {s});
}

std::size_t brute_hamming(const QuantizedTensor& a, const QuantizedTensor& b) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      for (unsigned bit = 0; bit < a.bit_width(); ++bit)
        n += ((a.word(r, c) >> bit) & 1u) != ((b.word(r, c) >> bit) & 1u);
  return n;
}

}  // namespace

TEST_CASE("quantize hand cases") {
  const float s = 0.1f;
  CHECK(fixed_scale(Matrix(1, 1, 0.5), s).int_value(0, 0) == 5);
  CHECK(fixed_scale(Matrix(1, 1, 100.0), s).int_value(0, 0) == 127);
  CHECK(fixed_scale(Matrix(1, 1, -100.0), s).int_value(0, 0) == -128);
  // -0.05 / 0.1 sits at -0.5 and rounds to the even neighbour 0.
  CHECK(quantize_with_scales(Matrix(1, 1, -0.5), ScaleMode::per_tensor, {1.0f}).int_value(0, 0) == 0);
  CHECK(quantize_with_scales(Matrix(1, 1, 1.5), ScaleMode::per_tensor, {1.0f}).int_value(0, 0) == 2);
  CHECK(quantize_with_scales(Matrix(1, 1, 2.5), ScaleMode::per_tensor, {1.0f}).int_value(0, 0) == 2);
  CHECK(fixed_scale(Matrix(1, 1, -0.05), s).int_value(0, 0) == 0);
}

TEST_CASE("quantize computes symmetric scales per row and per tensor") {
  const Matrix w = Matrix::from_rows({{1.27, -0.5}, {0.0, 2.54}});
  const auto pr = quantize(w);
  CHECK(pr.scale_mode() == ScaleMode::per_row);
  REQUIRE(pr.scales().size() == 2);
  CHECK(pr.scales()[0] == static_cast<float>(1.27 / 127));
  CHECK(pr.scales()[1] == static_cast<float>(2.54 / 127));
  CHECK(pr.int_value(0, 0) == 127);
  CHECK(pr.int_value(1, 1) == 127);
  const auto pt = quantize(w, {ScaleMode::per_tensor, 8, 0});
  REQUIRE(pt.scales().size() == 1);
  CHECK(pt.int_value(1, 1) == 127);
  CHECK(pt.int_value(0, 0) == 64);  // 1.27 / 0.02 = 63.5 -> 64 (even)
}

TEST_CASE("quantize degenerate zero tensor") {
  const auto q = quantize(Matrix(3, 3, 0.0), {ScaleMode::per_tensor, 8, 0});
  CHECK(q.degenerate_scale());
  CHECK(q.scales()[0] == 1.0f);
  CHECK(!quantize(Matrix(2, 2, 1.0)).degenerate_scale());
  CHECK(quantize(Matrix::from_rows({{0, 0}, {1, 1}})).degenerate_scale());
}

TEST_CASE("quantize rejects unsupported bit widths and bad scales") {
  CHECK_THROWS_AS(quantize(Matrix(2, 2, 1.0), {ScaleMode::per_row, 4, 0}), std::invalid_argument);
  CHECK_THROWS_AS(quantize_with_scales(Matrix(2, 2), ScaleMode::per_row, {1.0f}), std::invalid_argument);
  CHECK_THROWS_AS(quantize_with_scales(Matrix(2, 2), ScaleMode::per_tensor, {0.0f}), std::invalid_argument);
}

TEST_CASE("asymmetric zero point") {
  const auto q = quantize_with_scales(Matrix(1, 1, 0.5), ScaleMode::per_tensor, {0.1f}, 3);
  CHECK(q.int_value(0, 0) == 8);
  CHECK(q.value(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("dequantize hand cases") {
  const auto q = fixed_scale(Matrix(1, 1, 0.5), 0.1f);
  CHECK(dequantize(q)(0, 0) == doctest::Approx(0.5).epsilon(1e-7));
  const auto b = QuantizedTensor::from_words(DType::bf16, 1, 1, {0x3F80});
  CHECK(dequantize(b)(0, 0) == 1.0);
}

TEST_CASE("round trip error is at most half a step") {
  Gen g(13);
  for (ScaleMode mode : {ScaleMode::per_row, ScaleMode::per_tensor}) {
    const Matrix w = ror::testing::random_matrix(g, 20, 30);
    const auto q = quantize(w, {mode, 8, 0});
    const Matrix back = dequantize(q);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c)
        CHECK(std::fabs(back(r, c) - w(r, c)) <= q.row_scale(r) / 2.0 * (1.0 + 1e-6));
  }
}

TEST_CASE("bf16 conversion rounds to nearest even") {
  CHECK(float_to_bf16(1.0f) == 0x3F80);
  CHECK(bf16_to_float(0xC000) == -2.0f);
  // 1 + 2^-8 is halfway between 1 and 1 + 2^-7; ties go to the even pattern 0x3F80.
  CHECK(float_to_bf16(1.0f + 0x1.0p-8f) == 0x3F80);
  CHECK(float_to_bf16(1.0f + 0x1.0p-8f + 0x1.0p-20f) == 0x3F81);
  CHECK(std::isnan(bf16_to_float(float_to_bf16(NAN))));
  CHECK(std::isinf(bf16_to_float(float_to_bf16(INFINITY))));
}

TEST_CASE("flip_bit hand cases") {
  const auto q = fixed_scale(Matrix(1, 1, 0.5), 0.1f);
  REQUIRE(q.int_value(0, 0) == 5);
  const auto [msb, d7] = flip_bit(q, {0, 0, 0, 7});
  CHECK(msb.int_value(0, 0) == -123);
  CHECK(d7 == doctest::Approx(-12.8).epsilon(1e-6));
  CHECK(q.int_value(0, 0) == 5);  // original untouched
  const auto [lsb, d0] = flip_bit(q, {0, 0, 0, 0});
  CHECK(lsb.int_value(0, 0) == 4);
  CHECK(d0 == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(flip_bit(msb, {0, 0, 0, 7}).first == q);
}

TEST_CASE("flip_bit bounds") {
  const auto q = quantize(Matrix(2, 3, 1.0));
  CHECK_THROWS_AS(flip_bit(q, {0, 2, 0, 0}), std::out_of_range);
  CHECK_THROWS_AS(flip_bit(q, {0, 0, 3, 0}), std::out_of_range);
  CHECK_THROWS_AS(flip_bit(q, {0, 0, 0, 8}), std::out_of_range);
  const auto b = quantize_bf16(Matrix(2, 3, 1.0));
  CHECK_NOTHROW(flip_bit(b, {0, 1, 2, 15}));
  CHECK_THROWS_AS(flip_bit(b, {0, 1, 2, 16}), std::out_of_range);
}

TEST_CASE("bf16 flip delta follows the bit pattern") {
  const auto b = quantize_bf16(Matrix(1, 1, 1.0));
  const auto [f, d] = flip_bit(b, {0, 0, 0, 15});
  CHECK(f.value(0, 0) == -1.0);
  CHECK(d == -2.0);
}

TEST_CASE("hamming distance") {
  Gen g(17);
  const auto a = quantize(ror::testing::random_matrix(g, 6, 7));
  CHECK(hamming_distance(a, a) == 0);
  CHECK(hamming_distance(a, flip_bit(a, {0, 3, 4, 6}).first) == 1);
  for (int t = 0; t < 10; ++t) {
    const auto x = quantize(ror::testing::random_matrix(g, 6, 7));
    const auto y = quantize(ror::testing::random_matrix(g, 6, 7));
    CHECK(hamming_distance(x, y) == brute_hamming(x, y));
    const auto bx = quantize_bf16(ror::testing::random_matrix(g, 4, 5));
    const auto by = quantize_bf16(ror::testing::random_matrix(g, 4, 5));
    CHECK(hamming_distance(bx, by) == brute_hamming(bx, by));
  }
  CHECK_THROWS_AS(hamming_distance(a, quantize(Matrix(7, 6, 1.0))), std::invalid_argument);
  CHECK_THROWS_AS(hamming_distance(quantize_bf16(Matrix(6, 7, 1.0)), a), std::invalid_argument);
}

TEST_CASE("property: every single flip changes exactly one bit") {
  Gen g(19);
  for (int t = 0; t < 200; ++t) {
    const bool bf = g.uniform() < 0.5;
    const Matrix w = ror::testing::random_matrix(g, 3, 4);
    const auto q = bf ? quantize_bf16(w) : quantize(w);
    const FlipLocation loc{0, g.index(3), g.index(4), static_cast<unsigned>(g.index(q.bit_width()))};
    const auto [f, d] = flip_bit(q, loc);
    CHECK(hamming_distance(q, f) == 1);
    const double expected = f.value(loc.row, loc.col) - q.value(loc.row, loc.col);
    if (std::isfinite(expected)) CHECK(d == expected);
  }
}

TEST_CASE("property: int8 MSB flip moves the integer by 128") {
  Gen g(23);
  for (int t = 0; t < 100; ++t) {
    const auto q = quantize(ror::testing::random_matrix(g, 4, 4));
    const std::size_t r = g.index(4), c = g.index(4);
    const auto [f, d] = flip_bit(q, {0, r, c, 7});
    CHECK(std::abs(f.int_value(r, c) - q.int_value(r, c)) == 128);
    CHECK(std::fabs(d) == doctest::Approx(128.0 * q.row_scale(r)).epsilon(1e-12));
  }
}

TEST_CASE("property: requantizing a representable grid is the identity") {
  Gen g(29);
  for (int t = 0; t < 20; ++t) {
    const auto mode = g.uniform() < 0.5 ? ScaleMode::per_row : ScaleMode::per_tensor;
    const auto q = quantize(ror::testing::random_matrix(g, 8, 9), {mode, 8, 0});
    const std::vector<float> scales(q.scales().begin(), q.scales().end());
    CHECK(quantize_with_scales(dequantize(q), mode, scales) == q);
  }
}

TEST_CASE("from_words validation") {
  CHECK_THROWS_AS(QuantizedTensor::from_words(DType::i8, 2, 2, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(QuantizedTensor::from_words(DType::i8, 1, 1, {0x100}), std::invalid_argument);
  CHECK_THROWS_AS(QuantizedTensor::from_words(DType::f32, 1, 1, {0}), std::invalid_argument);
  CHECK_THROWS_AS(QuantizedTensor::from_words(DType::i8, 2, 1, {0, 0}, ScaleMode::per_row, {1.0f}),
                  std::invalid_argument);
  const auto q = QuantizedTensor::from_words(DType::i8, 1, 2, {0x85, 0x05});
  CHECK(q.int_value(0, 0) == -123);
  CHECK(q.int_value(0, 1) == 5);
}
