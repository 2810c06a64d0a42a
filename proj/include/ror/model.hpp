#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ror/attack.hpp"
#include "ror/defense.hpp"
#include "ror/householder.hpp"
#include "ror/matrix.hpp"
#include "ror/outlier_stats.hpp"
#include "ror/quant.hpp"

namespace ror {

struct PlantedOutlier {
  std::size_t layer = 0;
  std::size_t channel = 0;
  double magnitude = 32.0;

  bool operator==(const PlantedOutlier&) const = default;
};

struct ToyModelSpec {
  std::vector<std::size_t> dims{64, 128, 128, 64};
  std::uint64_t seed = 7;
  std::vector<PlantedOutlier> outliers;
  ScaleMode scale_mode = ScaleMode::per_tensor;
  DType dtype = DType::i8;
};

/// Stack of quantized dense layers with SiLU between them (none after the
/// last). Layer l computes ((h * gain_l) Q_l) W_l, where gain_l is a fixed
/// per-channel input gain and Q_l the optional rotation.
struct ToyModel {
  std::vector<std::size_t> dims;
  std::vector<QuantizedTensor> weights;
  std::vector<std::vector<double>> input_gains;
  std::vector<CompactWY> rotations;
  std::vector<PlantedOutlier> planted;
  std::uint64_t seed = 0;
  ScaleMode scale_mode = ScaleMode::per_tensor;
  DType dtype = DType::i8;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t reflector_count() const;
  bool operator==(const ToyModel&) const = default;
};

// Standard normal stream: Box-Muller over 53-bit uniforms from mt19937_64.
// Used instead of std::normal_distribution, whose output is not fixed across
// standard library implementations.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed);
  double next();

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed);

// Weights are N(0,1)/sqrt(d_in). A planted outlier (l, k, M) multiplies input
// channel k of layer l by M and divides row k of W_l by M before quantizing,
// so the spike shows in the activations while the function is unchanged.
ToyModel build_toy_model(const ToyModelSpec& spec);

Matrix silu(const Matrix& x);

Matrix forward(const ToyModel& model, const Matrix& x);
Matrix forward_with(const ToyModel& model, const WeightImage& weights, const Matrix& x);

// Input of every layer as the stored weights see it (after gain and rotation).
std::vector<Matrix> layer_inputs(const ToyModel& model, const WeightImage& weights,
                                 const Matrix& x);

// exp(mean over tokens of ||y_t - ref_t||^2). Any non-finite value maps to +inf.
double proxy_metric(const Matrix& outputs, const Matrix& reference);
double proxy_metric(const ToyModel& model, const WeightImage& weights, const Matrix& probe,
                    const Matrix& reference);

// Metric against the model's own clean outputs on the probe set.
MetricFn make_metric(const ToyModel& model, const Matrix& probe);

struct CalibrationSpec {
  std::size_t batches = 8;
  std::size_t tokens = 128;
  std::uint64_t seed = 1001;
};

struct ProtectionResult {
  ToyModel model;
  std::vector<ChannelStats> stats;
  std::vector<ProtectedLayer> layers;
};

// Calibrates on the baseline activations and rotates every layer not in
// opt_outs. Fused weights are always requantized in the model's own format,
// since the model stores quantized tensors only.
ProtectionResult protect_model(const ToyModel& baseline, const DefenseConfig& cfg,
                               const CalibrationSpec& cal = {},
                               const std::vector<std::size_t>& opt_outs = {});

std::vector<LayerCalibration> calibration_activations(const ToyModel& baseline,
                                                      const CalibrationSpec& cal);

struct CandidatePolicy {
  enum class Kind { top_magnitude, amplification };
  Kind kind = Kind::top_magnitude;
  std::size_t k = 32;
};

const char* to_string(CandidatePolicy::Kind k);

// Amplification peaks are measured on the probe set through the current image.
CandidateFn make_candidates(const ToyModel& model, const Matrix& probe,
                            const CandidatePolicy& policy);

struct EvalReport {
  std::size_t trials = 0;
  double mean_metric = 0.0;
  double max_metric = 0.0;
  double fail_rate = 0.0;
  std::size_t failed_trials = 0;
  std::vector<AttackOutcome> outcomes;
};

EvalReport aggregate(std::vector<AttackOutcome> outcomes);

// Trial i draws flips with seed base_seed + i on a private copy of the
// weights. Results do not depend on the worker count (0 = hardware threads).
EvalReport monte_carlo(const ToyModel& model, const Matrix& probe, double ber,
                       std::size_t trials, std::uint64_t base_seed, const FailureRule& rule = {},
                       unsigned workers = 0);

struct AlphaRow {
  double alpha = 0.0;
  std::size_t reflector_count = 0;
  double post_attack_metric = 0.0;
  std::optional<std::size_t> first_failure_step;
};

// For each alpha: protect, run the greedy attack, record the final metric.
std::vector<AlphaRow> alpha_sweep(const ToyModel& baseline, const std::vector<double>& alphas,
                                  std::size_t n_flips, const CandidatePolicy& policy,
                                  const Matrix& probe, const DefenseConfig& base_cfg = {},
                                  const CalibrationSpec& cal = {},
                                  const FailureRule& rule = {});

}  // namespace ror
