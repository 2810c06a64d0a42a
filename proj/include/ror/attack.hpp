#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <vector>

#include "ror/defense.hpp"
#include "ror/matrix.hpp"
#include "ror/quant.hpp"

namespace ror {

// Stored weight tensors of a model, in layer order. FlipLocation::layer
// indexes into this vector.
using WeightImage = std::vector<QuantizedTensor>;

using MetricFn = std::function<double(const WeightImage&)>;

/// failed iff metric > max(absolute, relative * clean). NaN counts as failed.
struct FailureRule {
  double absolute = 100.0;
  double relative = 20.0;

  double threshold(double clean_metric) const;
  bool failed(double metric, double clean_metric) const;
};

struct AttackOutcome {
  std::vector<FlipLocation> flips;
  double metric_before = 0.0;
  double metric_after = 0.0;
  bool failed = false;
  std::size_t hamming_cost = 0;
  std::uint64_t seed = 0;
};

std::size_t total_bits(const WeightImage& image);

// Highest-impact bit of a stored word: the int8 sign bit, or the bf16
// exponent MSB (bit 14).
unsigned msb_bit(DType dtype);

// Each stored bit flips independently with probability ber. Bits are visited
// tensor by tensor, row-major, bit 0 upward, one uniform draw per bit, so a
// fixed seed gives nested flip sets as ber grows.
std::vector<FlipLocation> sample_ber_flips(const WeightImage& image, double ber,
                                           std::uint64_t seed);

WeightImage apply_flips(const WeightImage& image, const std::vector<FlipLocation>& flips);

// clean_metric defaults to metric(image).
AttackOutcome random_ber_attack(const WeightImage& image, double ber, std::uint64_t seed,
                                const MetricFn& metric, const FailureRule& rule = {},
                                std::optional<double> clean_metric = std::nullopt);

// Candidate flips for the next greedy step, given the current image and the
// bits already flipped.
using CandidateFn =
    std::function<std::vector<FlipLocation>(const WeightImage&, const std::set<FlipLocation>&)>;

// MSB of the k largest |w| per layer.
CandidateFn top_magnitude_candidates(std::size_t k = 32);

// Input-channel peaks of every layer, measured on the current image.
using PeaksFn = std::function<std::vector<std::vector<double>>(const WeightImage&)>;

// MSB of the k elements per layer with the largest |MSB delta| * peak[row],
// larger |w| first among equal scores.
CandidateFn amplification_candidates(std::size_t k, PeaksFn peaks);

struct GreedyResult {
  AttackOutcome outcome;
  // trace[0] is the clean metric, trace[i] the metric after step i. Always
  // n_flips + 1 long; steps after an early stop repeat the last value.
  std::vector<double> trace;
  bool stopped_early = false;
  // First step whose metric crosses the failure rule.
  std::optional<std::size_t> first_failure_step;
};

// Applies, n_flips times, the candidate flip with the highest resulting
// metric (first candidate wins ties). Stops early when no candidate remains or
// every candidate would lower the metric.
GreedyResult greedy_bit_search(const WeightImage& image, const MetricFn& metric,
                               std::size_t n_flips, const CandidateFn& candidates,
                               const FailureRule& rule = {});

struct SpfaResult {
  bool isolated = false;
  std::optional<FlipLocation> location;
  // Smallest failing subset reached. One element when isolated.
  std::vector<FlipLocation> remaining;
  std::size_t evaluations = 0;
  double metric = 0.0;
};

// Bisects a failing flip set by replaying halves on fresh copies of the clean
// image. At most 2 * ceil(log2 N) + 1 metric evaluations. Throws if the full
// set does not fail. When neither half fails on its own the result is
// non-isolable.
SpfaResult spfa_locate(const WeightImage& clean, const std::vector<FlipLocation>& flips,
                       const MetricFn& metric, const FailureRule& rule = {},
                       std::optional<double> clean_metric = std::nullopt);

struct ColumnAttackResult {
  // delta * (row r of Q): the full-precision change to fused column c.
  std::vector<double> column_delta;
  // Fused weights after the change is written to storage.
  FusedWeights perturbed;
  AttackOutcome outcome;
  std::size_t elements_changed = 0;
};

// Reproduces the baseline flip "delta at (r, c)" through the rotation. The
// quantized column is re-encoded with its frozen scales; bf16 is re-rounded;
// dense f64 weights are written exactly and counted in f64 bits.
ColumnAttackResult spfa_column_attack(const ProtectedLayer& layer, std::size_t r, std::size_t c,
                                      double delta, std::size_t layer_index = 0);

struct WorstCase {
  double max_delta_y = 0.0;
  FlipLocation where;
};

// Exhaustive single-flip sweep: max over (row, col, bit) of ||X dW||_inf.
// An empty bit list means every bit.
WorstCase worst_case_perturbation(const QuantizedTensor& w, const Matrix& x,
                                  const std::vector<unsigned>& bits = {});
// Same sweep on the fused tensor, driven by the rotated input X Q.
WorstCase worst_case_perturbation(const ProtectedLayer& layer, const Matrix& x,
                                  const std::vector<unsigned>& bits = {});

}  // namespace ror
