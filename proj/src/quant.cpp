#include "ror/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ror {

namespace {

constexpr std::int32_t kQMin = -128;
constexpr std::int32_t kQMax = 127;

std::uint16_t encode_i8(std::int32_t q) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(static_cast<std::int8_t>(q)));
}

std::int32_t decode_i8(std::uint16_t w) {
  return static_cast<std::int8_t>(static_cast<std::uint8_t>(w));
}

float symmetric_scale(double max_abs_value, bool& degenerate) {
  if (max_abs_value == 0.0) {
    degenerate = true;
    return 1.0f;
  }
  return static_cast<float>(max_abs_value / kQMax);
}

void check_in_bounds(const QuantizedTensor& q, std::size_t r, std::size_t c, unsigned bit) {
  if (r >= q.rows() || c >= q.cols() || bit >= q.bit_width()) {
    throw std::out_of_range("bit address (" + std::to_string(r) + ", " + std::to_string(c) +
                            ", bit " + std::to_string(bit) + ") outside " +
                            std::to_string(q.rows()) + "x" + std::to_string(q.cols()) + " " +
                            to_string(q.dtype()) + " tensor");
  }
}

}  // namespace

const char* to_string(DType d) {
  switch (d) {
    case DType::f32: return "f32";
    case DType::bf16: return "bf16";
    case DType::i8: return "int8";
    case DType::f64: return "f64";
  }
  return "?";
}

const char* to_string(ScaleMode m) {
  return m == ScaleMode::per_row ? "per_row" : "per_tensor";
}

QuantizedTensor QuantizedTensor::from_words(DType dtype, std::size_t rows, std::size_t cols,
                                            std::vector<std::uint16_t> words, ScaleMode mode,
                                            std::vector<float> scales,
                                            std::int32_t zero_point) {
  if (dtype != DType::i8 && dtype != DType::bf16) {
    throw std::invalid_argument("QuantizedTensor: dtype must be int8 or bf16");
  }
  if (words.size() != rows * cols) {
    throw std::invalid_argument("QuantizedTensor: " + std::to_string(words.size()) +
                                " words for a " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " tensor");
  }
  QuantizedTensor q;
  q.dtype_ = dtype;
  q.rows_ = rows;
  q.cols_ = cols;
  if (dtype == DType::i8) {
    for (auto w : words)
      if (w > 0xFF) throw std::invalid_argument("QuantizedTensor: int8 word exceeds 8 bits");
    const std::size_t want = mode == ScaleMode::per_row ? rows : 1;
    if (scales.size() != want) {
      throw std::invalid_argument("QuantizedTensor: expected " + std::to_string(want) +
                                  " scales, got " + std::to_string(scales.size()));
    }
    for (float s : scales)
      if (!(s > 0.0f) || !std::isfinite(s))
        throw std::invalid_argument("QuantizedTensor: scales must be finite and > 0");
    q.scale_mode_ = mode;
    q.scales_ = std::move(scales);
    q.zero_point_ = zero_point;
  }
  q.words_ = std::move(words);
  return q;
}

std::int32_t QuantizedTensor::int_value(std::size_t r, std::size_t c) const {
  return decode_i8(word(r, c));
}

double QuantizedTensor::value(std::size_t r, std::size_t c) const {
  if (dtype_ == DType::bf16) return static_cast<double>(bf16_to_float(word(r, c)));
  return static_cast<double>(row_scale(r)) * static_cast<double>(int_value(r, c) - zero_point_);
}

void QuantizedTensor::toggle_bit(std::size_t r, std::size_t c, unsigned bit) {
  check_in_bounds(*this, r, c, bit);
  words_[r * cols_ + c] ^= static_cast<std::uint16_t>(1u << bit);
}

void QuantizedTensor::set_word(std::size_t r, std::size_t c, std::uint16_t w) {
  if (r >= rows_ || c >= cols_) throw std::out_of_range("set_word: index out of range");
  if (dtype_ == DType::i8 && w > 0xFF) throw std::invalid_argument("set_word: int8 overflow");
  words_[r * cols_ + c] = w;
}

bool QuantizedTensor::operator==(const QuantizedTensor& o) const {
  // Scale floats compare by bit pattern so a round trip is checked exactly.
  if (dtype_ != o.dtype_ || rows_ != o.rows_ || cols_ != o.cols_ || words_ != o.words_) return false;
  if (dtype_ == DType::bf16) return true;
  if (scale_mode_ != o.scale_mode_ || zero_point_ != o.zero_point_) return false;
  if (scales_.size() != o.scales_.size()) return false;
  for (std::size_t i = 0; i < scales_.size(); ++i)
    if (std::bit_cast<std::uint32_t>(scales_[i]) != std::bit_cast<std::uint32_t>(o.scales_[i]))
      return false;
  return true;
}

QuantizedTensor quantize_with_scales(const Matrix& w, ScaleMode mode, std::vector<float> scales,
                                     std::int32_t zero_point) {
  const std::size_t want = mode == ScaleMode::per_row ? w.rows() : 1;
  if (scales.size() != want) {
    throw std::invalid_argument("quantize_with_scales: expected " + std::to_string(want) +
                                " scales, got " + std::to_string(scales.size()));
  }
  QuantizedTensor q;
  q.dtype_ = DType::i8;
  q.rows_ = w.rows();
  q.cols_ = w.cols();
  q.scale_mode_ = mode;
  q.scales_ = std::move(scales);
  q.zero_point_ = zero_point;
  for (float s : q.scales_)
    if (!(s > 0.0f) || !std::isfinite(s))
      throw std::invalid_argument("quantize_with_scales: scales must be finite and > 0");
  q.words_.resize(w.size());
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double s = q.row_scale(r);
    for (std::size_t c = 0; c < w.cols(); ++c) {
      // nearbyint under the default FE_TONEAREST mode rounds half to even.
      const double scaled = std::nearbyint(w(r, c) / s) + zero_point;
      const double clamped = std::clamp(scaled, double(kQMin), double(kQMax));
      q.words_[r * q.cols_ + c] = encode_i8(static_cast<std::int32_t>(clamped));
    }
  }
  return q;
}

QuantizedTensor quantize(const Matrix& w, const QuantOptions& opts) {
  if (opts.bits != 8) {
    throw std::invalid_argument("quantize: only 8-bit integer quantization is supported, got " +
                                std::to_string(opts.bits));
  }
  bool degenerate = false;
  std::vector<float> scales;
  if (opts.scale_mode == ScaleMode::per_tensor) {
    scales.push_back(symmetric_scale(max_abs(w), degenerate));
  } else {
    scales.reserve(w.rows());
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double m = 0.0;
      for (double v : w.row(r)) m = std::max(m, std::fabs(v));
      scales.push_back(symmetric_scale(m, degenerate));
    }
  }
  QuantizedTensor q = quantize_with_scales(w, opts.scale_mode, std::move(scales), opts.zero_point);
  q.degenerate_scale_ = degenerate;
  return q;
}

QuantizedTensor quantize_bf16(const Matrix& w) {
  QuantizedTensor q;
  q.dtype_ = DType::bf16;
  q.rows_ = w.rows();
  q.cols_ = w.cols();
  q.words_.resize(w.size());
  const auto v = w.values();
  for (std::size_t i = 0; i < v.size(); ++i) q.words_[i] = float_to_bf16(static_cast<float>(v[i]));
  return q;
}

QuantizedTensor quantize_like(const Matrix& w, const QuantizedTensor& like) {
  if (like.dtype() == DType::bf16) return quantize_bf16(w);
  return quantize(w, {like.scale_mode(), 8, like.zero_point()});
}

Matrix dequantize(const QuantizedTensor& q) {
  Matrix w(q.rows(), q.cols());
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = 0; c < q.cols(); ++c) w(r, c) = q.value(r, c);
  return w;
}

double flip_delta(const QuantizedTensor& q, std::size_t r, std::size_t c, unsigned bit) {
  check_in_bounds(q, r, c, bit);
  const std::uint16_t old_word = q.word(r, c);
  const std::uint16_t new_word = old_word ^ static_cast<std::uint16_t>(1u << bit);
  if (q.dtype() == DType::bf16) {
    return static_cast<double>(bf16_to_float(new_word)) -
           static_cast<double>(bf16_to_float(old_word));
  }
  return static_cast<double>(q.row_scale(r)) *
         static_cast<double>(decode_i8(new_word) - decode_i8(old_word));
}

std::pair<QuantizedTensor, double> flip_bit(const QuantizedTensor& q, const FlipLocation& loc) {
  const double delta = flip_delta(q, loc.row, loc.col, loc.bit);
  QuantizedTensor out = q;
  out.toggle_bit(loc.row, loc.col, loc.bit);
  return {std::move(out), delta};
}

std::size_t hamming_distance(const QuantizedTensor& a, const QuantizedTensor& b) {
  if (a.dtype() != b.dtype() || a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("hamming_distance: tensors differ in dtype or shape");
  }
  std::size_t n = 0;
  const auto wa = a.words();
  const auto wb = b.words();
  for (std::size_t i = 0; i < wa.size(); ++i)
    n += static_cast<std::size_t>(std::popcount(static_cast<std::uint16_t>(wa[i] ^ wb[i])));
  return n;
}

std::uint16_t float_to_bf16(float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  if (std::isnan(f)) return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);
  // Round to nearest, ties to even, on the discarded low half.
  const std::uint32_t lsb = (bits >> 16) & 1u;
  bits += 0x7FFFu + lsb;
  return static_cast<std::uint16_t>(bits >> 16);
}

float bf16_to_float(std::uint16_t h) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

}  // namespace ror
