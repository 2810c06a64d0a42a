#include "ror/defense.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ror {

namespace {

void keep_largest(ChannelStats& s, std::size_t cap) {
  if (s.outliers.size() <= cap) return;
  auto& idx = s.outliers;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return s.peaks[a] > s.peaks[b]; });
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
}

LosslessReport compare_outputs(const Matrix& y_base, const Matrix& y_prot, double tol) {
  LosslessReport rep;
  rep.tolerance = tol;
  rep.max_abs_deviation = max_abs(y_prot - y_base);
  const double scale = max_abs(y_base);
  rep.relative_deviation = rep.max_abs_deviation / (scale > 0.0 ? scale : 1.0);
  rep.passed = rep.relative_deviation <= tol;
  return rep;
}

}  // namespace

void DefenseConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("alpha must be finite and >= 0");
  if (lossless_tol && !(*lossless_tol > 0.0))
    throw std::invalid_argument("lossless_tol must be > 0");
}

std::size_t default_m_max(std::size_t d) {
  return static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(d)));
}

std::size_t effective_m_max(const DefenseConfig& cfg, std::size_t d) {
  return cfg.m_max ? *cfg.m_max : default_m_max(d);
}

QuantInfo QuantInfo::of(const QuantizedTensor& q) {
  QuantInfo info;
  info.quantized = true;
  info.dtype = q.dtype();
  if (q.dtype() == DType::i8) {
    info.scale_mode = q.scale_mode();
    info.scales.assign(q.scales().begin(), q.scales().end());
    info.zero_point = q.zero_point();
  }
  return info;
}

Matrix ProtectedLayer::fused_dense() const {
  if (is_quantized()) return dequantize(fused_quantized());
  return std::get<Matrix>(fused);
}

std::size_t ProtectedLayer::d_in() const {
  return is_quantized() ? fused_quantized().rows() : std::get<Matrix>(fused).rows();
}

std::size_t ProtectedLayer::d_out() const {
  return is_quantized() ? fused_quantized().cols() : std::get<Matrix>(fused).cols();
}

ChannelStats calibrate_layer(const LayerCalibration& layer, const DefenseConfig& cfg) {
  cfg.validate();
  if (layer.batches.empty()) {
    throw std::invalid_argument("calibrate: no calibration data for layer '" + layer.layer_id +
                                "'");
  }
  const Matrix x = concat_rows(layer.batches);
  if (x.empty()) {
    throw std::invalid_argument("calibrate: empty calibration data for layer '" +
                                layer.layer_id + "'");
  }
  const std::vector<double> peaks = channel_linf(x);
  ChannelStats s = compute_threshold(peaks, cfg.alpha);
  keep_largest(s, effective_m_max(cfg, peaks.size()));
  return s;
}

std::vector<ChannelStats> calibrate(const std::vector<LayerCalibration>& layers,
                                    const DefenseConfig& cfg) {
  std::vector<ChannelStats> out;
  out.reserve(layers.size());
  for (const auto& l : layers) out.push_back(calibrate_layer(l, cfg));
  return out;
}

CompactWY build_rotation(const ChannelStats& stats) {
  const std::size_t d = stats.peaks.size();
  CompactWY wy(d);
  std::vector<std::size_t> channels = stats.outliers;
  std::sort(channels.begin(), channels.end());
  for (std::size_t k : channels) wy = wy_append(wy, householder_from_outlier(d, k));
  return wy;
}

ProtectedLayer fuse_weights(const Matrix& w, const CompactWY& wy, const DefenseConfig& cfg,
                            std::string layer_id) {
  ProtectedLayer p;
  p.layer_id = std::move(layer_id);
  p.wy = wy;
  if (w.rows() != wy.dim()) {
    throw std::invalid_argument("fuse_weights: layer '" + p.layer_id + "' has " +
                                std::to_string(w.rows()) + " input rows, rotation dimension " +
                                std::to_string(wy.dim()));
  }
  if (wy.empty()) {
    p.fused = w;
    return p;
  }
  Matrix fused = apply_wy_transpose_left(w, wy);
  if (cfg.requantize_fused) {
    p.fused = quantize(fused);
  } else {
    p.fused = std::move(fused);
  }
  return p;
}

ProtectedLayer fuse_weights(const QuantizedTensor& w, const CompactWY& wy,
                            const DefenseConfig& cfg, std::string layer_id) {
  ProtectedLayer p;
  p.layer_id = std::move(layer_id);
  p.wy = wy;
  p.original = QuantInfo::of(w);
  if (w.rows() != wy.dim()) {
    throw std::invalid_argument("fuse_weights: layer '" + p.layer_id + "' has " +
                                std::to_string(w.rows()) + " input rows, rotation dimension " +
                                std::to_string(wy.dim()));
  }
  if (wy.empty()) {
    p.fused = w;
    return p;
  }
  Matrix fused = apply_wy_transpose_left(dequantize(w), wy);
  if (cfg.requantize_fused) {
    p.fused = quantize_like(fused, w);
  } else {
    p.fused = std::move(fused);
  }
  return p;
}

Matrix protected_forward(const Matrix& x, const ProtectedLayer& layer) {
  if (x.cols() != layer.wy.dim()) {
    throw std::invalid_argument("protected_forward: X has " + std::to_string(x.cols()) +
                                " columns, layer '" + layer.layer_id + "' expects " +
                                std::to_string(layer.wy.dim()));
  }
  if (layer.is_quantized()) return matmul(apply_wy_right(x, layer.wy), layer.fused_dense());
  return matmul(apply_wy_right(x, layer.wy), std::get<Matrix>(layer.fused));
}

double default_lossless_tol(const ProtectedLayer& layer) {
  if (!layer.is_quantized() || layer.wy.empty()) return 1e-9;
  const auto& q = layer.fused_quantized();
  double smax = 0.0;
  if (q.dtype() == DType::bf16) {
    // bf16 keeps 8 significant bits: relative step 2^-8 on the largest weight.
    smax = max_abs(dequantize(q)) * std::ldexp(1.0, -8);
  } else {
    for (float s : q.scales()) smax = std::max(smax, static_cast<double>(s));
  }
  return 2.0 * smax * static_cast<double>(q.rows());
}

LosslessReport verify_lossless(const Matrix& original, const ProtectedLayer& layer,
                               const Matrix& probe, std::optional<double> tol) {
  if (original.rows() != layer.d_in() || original.cols() != layer.d_out()) {
    throw std::invalid_argument("verify_lossless: original and protected shapes differ");
  }
  return compare_outputs(matmul(probe, original), protected_forward(probe, layer),
                         tol.value_or(default_lossless_tol(layer)));
}

LosslessReport verify_lossless(const QuantizedTensor& original, const ProtectedLayer& layer,
                               const Matrix& probe, std::optional<double> tol) {
  return verify_lossless(dequantize(original), layer, probe, tol);
}

double flop_overhead(std::size_t d_in, std::size_t d_out, std::size_t m, std::size_t batch) {
  if (d_in == 0 || d_out == 0) throw std::invalid_argument("flop_overhead: zero dimension");
  const double b = static_cast<double>(batch == 0 ? 1 : batch);
  const double di = static_cast<double>(d_in);
  const double dout = static_cast<double>(d_out);
  const double mm = static_cast<double>(m);
  const double correction = 2.0 * b * di * mm + 2.0 * b * mm * mm + 2.0 * b * mm * di;
  return correction / (2.0 * b * di * dout);
}

double flop_overhead(const ProtectedLayer& layer, std::size_t batch) {
  return flop_overhead(layer.d_in(), layer.d_out(), layer.rank(), batch);
}

}  // namespace ror
