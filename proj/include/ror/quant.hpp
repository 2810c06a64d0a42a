#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ror/matrix.hpp"

namespace ror {

// Storage codes; the numeric values are the on-disk dtype codes.
enum class DType : std::uint8_t { f32 = 0, bf16 = 1, i8 = 2, f64 = 3 };
enum class ScaleMode : std::uint8_t { per_tensor = 0, per_row = 1 };

const char* to_string(DType d);
const char* to_string(ScaleMode m);

/// Address of one stored bit. bit 0 is the LSB; bit 7 is the int8 sign bit.
struct FlipLocation {
  std::size_t layer = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  unsigned bit = 0;

  auto operator<=>(const FlipLocation&) const = default;
};

/// Weight tensor in its stored representation: int8 two's-complement words
/// with per-tensor or per-row scales, or raw bf16 bit patterns.
struct QuantOptions;

class QuantizedTensor {
 public:
  QuantizedTensor() = default;

  // Validates shape, word range and scale count.
  static QuantizedTensor from_words(DType dtype, std::size_t rows, std::size_t cols,
                                    std::vector<std::uint16_t> words,
                                    ScaleMode mode = ScaleMode::per_tensor,
                                    std::vector<float> scales = {1.0f},
                                    std::int32_t zero_point = 0);

  DType dtype() const { return dtype_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return words_.size(); }
  unsigned bit_width() const { return dtype_ == DType::i8 ? 8u : 16u; }
  std::size_t total_bits() const { return words_.size() * bit_width(); }

  std::uint16_t word(std::size_t r, std::size_t c) const { return words_[r * cols_ + c]; }
  std::span<const std::uint16_t> words() const { return words_; }
  // Signed integer value of an int8 element.
  std::int32_t int_value(std::size_t r, std::size_t c) const;

  ScaleMode scale_mode() const { return scale_mode_; }
  std::span<const float> scales() const { return scales_; }
  float row_scale(std::size_t r) const {
    return scale_mode_ == ScaleMode::per_row ? scales_[r] : scales_[0];
  }
  std::int32_t zero_point() const { return zero_point_; }
  // Set when an all-zero tensor or row forced a fallback scale of 1.0.
  bool degenerate_scale() const { return degenerate_scale_; }

  // Dequantized value of one element.
  double value(std::size_t r, std::size_t c) const;

  // XORs one stored bit in place.
  void toggle_bit(std::size_t r, std::size_t c, unsigned bit);
  // Overwrites a stored word; int8 words must fit in 8 bits.
  void set_word(std::size_t r, std::size_t c, std::uint16_t w);

  bool operator==(const QuantizedTensor& other) const;

 private:
  friend QuantizedTensor quantize_with_scales(const Matrix&, ScaleMode, std::vector<float>,
                                              std::int32_t);
  friend QuantizedTensor quantize_bf16(const Matrix&);
  friend QuantizedTensor quantize(const Matrix&, const QuantOptions&);

  DType dtype_ = DType::i8;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint16_t> words_;
  ScaleMode scale_mode_ = ScaleMode::per_tensor;
  std::vector<float> scales_{1.0f};
  std::int32_t zero_point_ = 0;
  bool degenerate_scale_ = false;
};

struct QuantOptions {
  ScaleMode scale_mode = ScaleMode::per_row;
  int bits = 8;
  std::int32_t zero_point = 0;
};

// w_q = clamp(round_half_even(w / s) + z, -128, 127), s = max|w| / 127 per row
// or per tensor. A zero row or tensor gets s = 1.0 and the degenerate flag.
QuantizedTensor quantize(const Matrix& w, const QuantOptions& opts = {});

// Same rounding with caller-supplied (frozen) scales.
QuantizedTensor quantize_with_scales(const Matrix& w, ScaleMode mode, std::vector<float> scales,
                                     std::int32_t zero_point = 0);

QuantizedTensor quantize_bf16(const Matrix& w);

// Re-encodes w in the dtype and scale mode of `like`, with fresh scales.
QuantizedTensor quantize_like(const Matrix& w, const QuantizedTensor& like);

Matrix dequantize(const QuantizedTensor& q);

// Copy of q with one bit flipped, and the change in the dequantized element.
std::pair<QuantizedTensor, double> flip_bit(const QuantizedTensor& q, const FlipLocation& loc);

// Change in the dequantized value of (r, c) if `bit` were flipped; q is unchanged.
double flip_delta(const QuantizedTensor& q, std::size_t r, std::size_t c, unsigned bit);

std::size_t hamming_distance(const QuantizedTensor& a, const QuantizedTensor& b);

std::uint16_t float_to_bf16(float f);
float bf16_to_float(std::uint16_t h);

}  // namespace ror
