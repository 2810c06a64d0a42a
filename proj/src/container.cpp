#include "ror/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace ror {

namespace {

constexpr char kMagic[4] = {'R', 'O', 'R', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw ContainerError("truncated RORT data at byte " + std::to_string(pos_) + ": " + what +
                           " needs " + std::to_string(n) + " bytes, " +
                           std::to_string(remaining()) + " available");
    }
  }
  std::uint8_t u8(const std::string& what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(const std::string& what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const std::string& what) { return get(8, what); }
  std::span<const std::uint8_t> bytes(std::size_t n, const std::string& what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::uint64_t get(int n, const std::string& what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, std::size_t n) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

bool valid_dtype(std::uint8_t code) { return code <= static_cast<std::uint8_t>(DType::f64); }

void check_record(const TensorRecord& rec) {
  const std::uint64_t want = rec.element_count() * dtype_width(rec.dtype);
  if (rec.payload.size() != want) {
    throw ContainerError("tensor '" + rec.name + "': payload has " +
                         std::to_string(rec.payload.size()) + " bytes, dims need " +
                         std::to_string(want));
  }
  if (rec.name.size() > 0xFFFF) throw ContainerError("tensor name longer than 65535 bytes");
  if (rec.dims.size() > 0xFF) throw ContainerError("tensor '" + rec.name + "' has too many dims");
}

std::pair<std::size_t, std::size_t> as_2d(const TensorRecord& rec) {
  if (rec.dims.size() == 2) return {rec.dims[0], rec.dims[1]};
  if (rec.dims.size() == 1) return {1, rec.dims[0]};
  if (rec.dims.empty()) return {1, 1};
  throw ContainerError("tensor '" + rec.name + "' has " + std::to_string(rec.dims.size()) +
                       " dims; expected at most 2");
}

double element(const TensorRecord& rec, std::size_t i) {
  const std::size_t w = dtype_width(rec.dtype);
  const std::uint64_t v = get_le(rec.payload.data() + i * w, w);
  switch (rec.dtype) {
    case DType::f64: return std::bit_cast<double>(v);
    case DType::f32: return std::bit_cast<float>(static_cast<std::uint32_t>(v));
    case DType::bf16: return bf16_to_float(static_cast<std::uint16_t>(v));
    case DType::i8: {
      const double s = rec.quantized ? rec.scales.at(0) : 1.0;
      return s * (static_cast<std::int8_t>(static_cast<std::uint8_t>(v)) - rec.zero_point);
    }
  }
  return 0.0;
}

}  // namespace

std::size_t dtype_width(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::bf16: return 2;
    case DType::i8: return 1;
    case DType::f64: return 8;
  }
  throw ContainerError("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void RortContainer::add(TensorRecord rec) {
  if (find(rec.name)) throw ContainerError("duplicate tensor name '" + rec.name + "'");
  tensors.push_back(std::move(rec));
}

const TensorRecord* RortContainer::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const TensorRecord& RortContainer::at(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw ContainerError("container has no tensor named '" + name + "'");
  return *t;
}

std::vector<std::uint8_t> encode_container(const RortContainer& c) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(c.version);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  std::set<std::string> seen;
  for (const auto& rec : c.tensors) {
    check_record(rec);
    if (!seen.insert(rec.name).second)
      throw ContainerError("duplicate tensor name '" + rec.name + "'");
    w.u16(static_cast<std::uint16_t>(rec.name.size()));
    w.bytes(rec.name.data(), rec.name.size());
    w.u8(static_cast<std::uint8_t>(rec.dtype));
    w.u8(rec.quantized ? 1 : 0);
    if (rec.quantized) {
      w.u8(static_cast<std::uint8_t>(rec.scale_mode));
      w.u32(static_cast<std::uint32_t>(rec.scales.size()));
      for (float s : rec.scales) w.u32(std::bit_cast<std::uint32_t>(s));
      w.u32(static_cast<std::uint32_t>(rec.zero_point));
    }
    w.u8(static_cast<std::uint8_t>(rec.dims.size()));
    for (auto d : rec.dims) w.u64(d);
    w.bytes(rec.payload.data(), rec.payload.size());
  }
  return w.take();
}

RortContainer decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw ContainerError("bad magic at byte 0: not a RORT container");
  RortContainer c;
  c.version = r.u16("version");
  if (c.version != kRortVersion) {
    throw ContainerError("unsupported RORT version " + std::to_string(c.version) + " at byte 4");
  }
  const std::uint32_t count = r.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string idx = "tensor #" + std::to_string(t);
    TensorRecord rec;
    const std::uint16_t name_len = r.u16(idx + " name length");
    const auto name = r.bytes(name_len, idx + " name");
    rec.name.assign(name.begin(), name.end());
    const std::string ctx = "tensor '" + rec.name + "'";
    const std::size_t dtype_at = r.offset();
    const std::uint8_t code = r.u8(ctx + " dtype");
    if (!valid_dtype(code)) {
      throw ContainerError(ctx + ": unknown dtype code " + std::to_string(code) + " at byte " +
                           std::to_string(dtype_at));
    }
    rec.dtype = static_cast<DType>(code);
    rec.quantized = r.u8(ctx + " quant flag") != 0;
    if (rec.quantized) {
      const std::size_t mode_at = r.offset();
      const std::uint8_t mode = r.u8(ctx + " scale mode");
      if (mode > 1) {
        throw ContainerError(ctx + ": unknown scale mode " + std::to_string(mode) +
                             " at byte " + std::to_string(mode_at));
      }
      rec.scale_mode = static_cast<ScaleMode>(mode);
      const std::uint32_t n_scales = r.u32(ctx + " scale count");
      r.need(static_cast<std::size_t>(n_scales) * 4, ctx + " scales");
      rec.scales.reserve(n_scales);
      for (std::uint32_t i = 0; i < n_scales; ++i)
        rec.scales.push_back(std::bit_cast<float>(r.u32(ctx + " scale")));
      rec.zero_point = static_cast<std::int32_t>(r.u32(ctx + " zero point"));
    }
    const std::uint8_t ndim = r.u8(ctx + " ndim");
    for (std::uint8_t i = 0; i < ndim; ++i) rec.dims.push_back(r.u64(ctx + " dim"));
    const std::uint64_t want = rec.element_count() * dtype_width(rec.dtype);
    if (want > r.remaining()) {
      throw ContainerError(ctx + ": payload at byte " + std::to_string(r.offset()) +
                           " expects " + std::to_string(want) + " bytes, only " +
                           std::to_string(r.remaining()) + " remain");
    }
    const auto payload = r.bytes(static_cast<std::size_t>(want), ctx + " payload");
    rec.payload.assign(payload.begin(), payload.end());
    if (c.find(rec.name)) {
      throw ContainerError("duplicate tensor name '" + rec.name + "' ending at byte " +
                           std::to_string(r.offset()));
    }
    c.tensors.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw ContainerError("trailing " + std::to_string(r.remaining()) + " bytes at byte " +
                         std::to_string(r.offset()));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const RortContainer& c) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContainerError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContainerError("write failed for " + path.string());
}

RortContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_container(bytes);
  } catch (const ContainerError& e) {
    throw ContainerError(path.string() + ": " + e.what());
  }
}

TensorRecord to_record(const std::string& name, const QuantizedTensor& q) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = q.dtype();
  rec.dims = {q.rows(), q.cols()};
  if (q.dtype() == DType::i8) {
    rec.quantized = true;
    rec.scale_mode = q.scale_mode();
    rec.scales.assign(q.scales().begin(), q.scales().end());
    rec.zero_point = q.zero_point();
  }
  const std::size_t w = dtype_width(q.dtype());
  rec.payload.reserve(q.size() * w);
  for (auto word : q.words()) put_le(rec.payload, word, w);
  return rec;
}

TensorRecord to_record(const std::string& name, const std::vector<double>& v, DType dtype) {
  TensorRecord rec;
  rec.name = name;
  rec.dtype = dtype;
  rec.dims = {v.size()};
  if (dtype == DType::f64) {
    for (double x : v) put_le(rec.payload, std::bit_cast<std::uint64_t>(x), 8);
  } else if (dtype == DType::f32) {
    for (double x : v) put_le(rec.payload, std::bit_cast<std::uint32_t>(static_cast<float>(x)), 4);
  } else {
    throw ContainerError("tensor '" + name + "': dense values must be stored as f32 or f64");
  }
  return rec;
}

TensorRecord to_record(const std::string& name, const Matrix& m, DType dtype) {
  TensorRecord rec = to_record(name, std::vector<double>(m.values().begin(), m.values().end()),
                               dtype);
  rec.dims = {m.rows(), m.cols()};
  return rec;
}

QuantizedTensor to_quantized(const TensorRecord& rec) {
  if (rec.dtype != DType::i8 && rec.dtype != DType::bf16) {
    throw ContainerError("tensor '" + rec.name + "' is " + to_string(rec.dtype) +
                         ", not a quantized weight tensor");
  }
  check_record(rec);
  const auto [rows, cols] = as_2d(rec);
  const std::size_t w = dtype_width(rec.dtype);
  std::vector<std::uint16_t> words(rows * cols);
  for (std::size_t i = 0; i < words.size(); ++i)
    words[i] = static_cast<std::uint16_t>(get_le(rec.payload.data() + i * w, w));
  try {
    if (rec.dtype == DType::i8 && rec.quantized)
      return QuantizedTensor::from_words(rec.dtype, rows, cols, std::move(words), rec.scale_mode,
                                         rec.scales, rec.zero_point);
    return QuantizedTensor::from_words(rec.dtype, rows, cols, std::move(words));
  } catch (const std::invalid_argument& e) {
    throw ContainerError("tensor '" + rec.name + "': " + e.what());
  }
}

Matrix to_matrix(const TensorRecord& rec) {
  check_record(rec);
  if (rec.dtype == DType::i8 || rec.dtype == DType::bf16) return dequantize(to_quantized(rec));
  const auto [rows, cols] = as_2d(rec);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = element(rec, i);
  return m;
}

std::vector<double> to_vector(const TensorRecord& rec) {
  const Matrix m = to_matrix(rec);
  return {m.values().begin(), m.values().end()};
}

}  // namespace ror
