#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ror/matrix.hpp"
#include "ror/quant.hpp"

namespace ror {

// Malformed or unreadable RORT data. Messages carry the byte offset.
class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kRortVersion = 1;

std::size_t dtype_width(DType d);

/// One named tensor. The payload holds the stored words verbatim,
/// little-endian, row-major.
struct TensorRecord {
  std::string name;
  DType dtype = DType::f32;
  bool quantized = false;
  ScaleMode scale_mode = ScaleMode::per_tensor;
  std::vector<float> scales;
  std::int32_t zero_point = 0;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const;
  bool operator==(const TensorRecord&) const = default;
};

struct RortContainer {
  std::uint16_t version = kRortVersion;
  std::vector<TensorRecord> tensors;

  // Throws ContainerError on a duplicate name.
  void add(TensorRecord rec);
  const TensorRecord* find(const std::string& name) const;
  const TensorRecord& at(const std::string& name) const;
};

// Layout: "RORT", u16 version, u32 tensor count, then per tensor:
//   u16 name length, name bytes, u8 dtype, u8 quant flag,
//   [u8 scale mode, u32 scale count, f32 scales..., i32 zero point] if quantized,
//   u8 ndim, u64 dims..., payload.
std::vector<std::uint8_t> encode_container(const RortContainer& c);
RortContainer decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const RortContainer& c);
RortContainer read_container(const std::filesystem::path& path);

TensorRecord to_record(const std::string& name, const QuantizedTensor& q);
// Dense values stored as f64 (or f32 when asked).
TensorRecord to_record(const std::string& name, const Matrix& m, DType dtype = DType::f64);
TensorRecord to_record(const std::string& name, const std::vector<double>& v,
                       DType dtype = DType::f64);

QuantizedTensor to_quantized(const TensorRecord& rec);
Matrix to_matrix(const TensorRecord& rec);
std::vector<double> to_vector(const TensorRecord& rec);

}  // namespace ror
