#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ror/matrix.hpp"

namespace ror {

inline constexpr double kDefaultAlpha = 6.0;
inline constexpr double kAbsoluteFloor = 1.0;

/// Per-channel L-infinity peaks of calibration activations and the composite
/// threshold derived from them.
struct ChannelStats {
  std::vector<double> peaks;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  double alpha = kDefaultAlpha;
  double tau = kAbsoluteFloor;
  // Channels with peaks[j] > tau, ascending.
  std::vector<std::size_t> outliers;
  // Number of channels above tau before any cap on the reflector count.
  std::size_t flagged_count = 0;
};

// peaks[j] = max_i |X(i, j)|. Throws on an empty matrix.
std::vector<double> channel_linf(const Matrix& x);

// tau = max(mean + alpha * stddev, 2 * mean, 1.0); flags peaks strictly above tau.
ChannelStats compute_threshold(std::span<const double> peaks, double alpha = kDefaultAlpha);

// Worst single-token output error from a weight change delta_w on channel j:
// |delta_w| * peaks[j].
double amplification_bound(double delta_w, std::span<const double> peaks, std::size_t j);

}  // namespace ror
