#include "ror/outlier_stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ror {

std::vector<double> channel_linf(const Matrix& x) {
  if (x.empty()) throw std::invalid_argument("channel_linf: empty activation matrix");
  std::vector<double> peaks(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto row = x.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) peaks[j] = std::max(peaks[j], std::fabs(row[j]));
  }
  return peaks;
}

ChannelStats compute_threshold(std::span<const double> peaks, double alpha) {
  if (peaks.empty()) throw std::invalid_argument("compute_threshold: no channels");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw std::invalid_argument("compute_threshold: alpha must be finite and >= 0");
  }
  for (double p : peaks) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("compute_threshold: peaks must be finite and >= 0");
    }
  }

  ChannelStats s;
  s.peaks.assign(peaks.begin(), peaks.end());
  s.alpha = alpha;
  const double n = static_cast<double>(peaks.size());
  double sum = 0.0;
  for (double p : peaks) sum += p;
  s.mean = sum / n;
  double ss = 0.0;
  for (double p : peaks) ss += (p - s.mean) * (p - s.mean);
  s.stddev = std::sqrt(ss / n);
  s.tau = std::max({s.mean + alpha * s.stddev, 2.0 * s.mean, kAbsoluteFloor});
  for (std::size_t j = 0; j < peaks.size(); ++j)
    if (peaks[j] > s.tau) s.outliers.push_back(j);
  s.flagged_count = s.outliers.size();
  return s;
}

double amplification_bound(double delta_w, std::span<const double> peaks, std::size_t j) {
  if (j >= peaks.size()) {
    throw std::invalid_argument("amplification_bound: channel " + std::to_string(j) +
                                " out of range");
  }
  return std::fabs(delta_w) * peaks[j];
}

}  // namespace ror
