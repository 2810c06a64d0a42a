#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ror/householder.hpp"
#include "ror/matrix.hpp"
#include "ror/outlier_stats.hpp"
#include "ror/quant.hpp"

namespace ror {

struct DefenseConfig {
  double alpha = kDefaultAlpha;
  // Cap on reflectors per layer. Unset means ceil(0.01 * d).
  std::optional<std::size_t> m_max;
  // Relative infinity-norm tolerance for verify_lossless. Unset means 1e-9 for
  // full-precision fused weights and 2 * max(scale) * d_in when requantized.
  std::optional<double> lossless_tol;
  bool requantize_fused = false;

  void validate() const;
};

std::size_t default_m_max(std::size_t d);
std::size_t effective_m_max(const DefenseConfig& cfg, std::size_t d);

/// Quantization parameters of a layer before fusion.
struct QuantInfo {
  bool quantized = false;
  DType dtype = DType::f64;
  ScaleMode scale_mode = ScaleMode::per_tensor;
  std::vector<float> scales;
  std::int32_t zero_point = 0;

  static QuantInfo of(const QuantizedTensor& q);
  bool operator==(const QuantInfo&) const = default;
};

using FusedWeights = std::variant<QuantizedTensor, Matrix>;

/// Rotated weights plus the factors needed to rotate activations online.
struct ProtectedLayer {
  std::string layer_id;
  FusedWeights fused;
  CompactWY wy;
  QuantInfo original;

  bool is_quantized() const { return std::holds_alternative<QuantizedTensor>(fused); }
  const QuantizedTensor& fused_quantized() const { return std::get<QuantizedTensor>(fused); }
  Matrix fused_dense() const;
  std::size_t d_in() const;
  std::size_t d_out() const;
  std::size_t rank() const { return wy.rank(); }
};

/// Calibration activations of one layer; batches stack along the token axis.
struct LayerCalibration {
  std::string layer_id;
  std::vector<Matrix> batches;
};

// Per-layer statistics. When more than m_max channels exceed tau, only the
// m_max largest peaks are kept (lower index wins ties).
std::vector<ChannelStats> calibrate(const std::vector<LayerCalibration>& layers,
                                    const DefenseConfig& cfg);
ChannelStats calibrate_layer(const LayerCalibration& layer, const DefenseConfig& cfg);

// One reflector per flagged channel, appended in ascending channel order.
CompactWY build_rotation(const ChannelStats& stats);

// W~ = Q^T W in full precision. With requantize_fused a quantized input is
// re-encoded in its own dtype and scale mode with fresh scales, and a dense
// input is quantized per row. m == 0 copies the input unchanged.
ProtectedLayer fuse_weights(const Matrix& w, const CompactWY& wy, const DefenseConfig& cfg,
                            std::string layer_id = "layer");
ProtectedLayer fuse_weights(const QuantizedTensor& w, const CompactWY& wy,
                            const DefenseConfig& cfg, std::string layer_id = "layer");

// Y = (X Q) W~.
Matrix protected_forward(const Matrix& x, const ProtectedLayer& layer);

struct LosslessReport {
  double max_abs_deviation = 0.0;
  double relative_deviation = 0.0;  // max_abs_deviation / ||X W||_inf (or / 1 if that is 0)
  double tolerance = 0.0;
  bool passed = false;
};

double default_lossless_tol(const ProtectedLayer& layer);

LosslessReport verify_lossless(const Matrix& original, const ProtectedLayer& layer,
                               const Matrix& probe, std::optional<double> tol = std::nullopt);
LosslessReport verify_lossless(const QuantizedTensor& original, const ProtectedLayer& layer,
                               const Matrix& probe, std::optional<double> tol = std::nullopt);

// (2 B d_in m + 2 B m^2 + 2 B m d_in) / (2 B d_in d_out). B cancels.
double flop_overhead(std::size_t d_in, std::size_t d_out, std::size_t m, std::size_t batch = 1);
double flop_overhead(const ProtectedLayer& layer, std::size_t batch = 1);

}  // namespace ror
