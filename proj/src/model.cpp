#include "ror/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>

namespace ror {

namespace {

constexpr double kInv53 = 1.0 / 9007199254740992.0;

Matrix apply_gain(const Matrix& h, const std::vector<double>& gain) {
  Matrix a = h;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = a.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] *= gain[j];
  }
  return a;
}

void check_image(const ToyModel& model, const WeightImage& weights) {
  if (weights.size() != model.num_layers()) {
    throw std::invalid_argument("weight image has " + std::to_string(weights.size()) +
                                " tensors, model has " + std::to_string(model.num_layers()) +
                                " layers");
  }
}

std::string layer_name(std::size_t l) { return "layer" + std::to_string(l); }

}  // namespace

std::size_t ToyModel::reflector_count() const {
  std::size_t n = 0;
  for (const auto& r : rotations) n += r.rank();
  return n;
}

NormalStream::NormalStream(std::uint64_t seed) : rng_(seed) {}

double NormalStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = static_cast<double>(rng_() >> 11) * kInv53;
  } while (u1 == 0.0);
  const double u2 = static_cast<double>(rng_() >> 11) * kInv53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double th = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  NormalStream ns(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = ns.next();
  return m;
}

ToyModel build_toy_model(const ToyModelSpec& spec) {
  if (spec.dims.size() < 3) {
    throw std::invalid_argument("build_toy_model: need at least 2 layers (3 dims), got " +
                                std::to_string(spec.dims.size()) + " dims");
  }
  for (std::size_t d : spec.dims)
    if (d < 8) throw std::invalid_argument("build_toy_model: every dim must be >= 8");
  if (spec.dtype != DType::i8 && spec.dtype != DType::bf16)
    throw std::invalid_argument("build_toy_model: dtype must be int8 or bf16");

  ToyModel m;
  m.dims = spec.dims;
  m.seed = spec.seed;
  m.scale_mode = spec.scale_mode;
  m.dtype = spec.dtype;
  m.planted = spec.outliers;
  const std::size_t n_layers = spec.dims.size() - 1;

  NormalStream ns(spec.seed);
  std::vector<Matrix> dense;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t din = spec.dims[l];
    Matrix w(din, spec.dims[l + 1]);
    const double s = 1.0 / std::sqrt(static_cast<double>(din));
    for (double& v : w.values()) v = ns.next() * s;
    dense.push_back(std::move(w));
    m.input_gains.emplace_back(din, 1.0);
    m.rotations.emplace_back(din);
  }
  for (const auto& p : spec.outliers) {
    if (p.layer >= n_layers || p.channel >= spec.dims[p.layer]) {
      throw std::invalid_argument("build_toy_model: planted outlier (layer " +
                                  std::to_string(p.layer) + ", channel " +
                                  std::to_string(p.channel) + ") out of range");
    }
    if (!(p.magnitude > 0.0) || !std::isfinite(p.magnitude))
      throw std::invalid_argument("build_toy_model: outlier magnitude must be finite and > 0");
    m.input_gains[p.layer][p.channel] *= p.magnitude;
    for (double& v : dense[p.layer].row(p.channel)) v /= p.magnitude;
  }
  for (const auto& w : dense) {
    if (spec.dtype == DType::bf16)
      m.weights.push_back(quantize_bf16(w));
    else
      m.weights.push_back(quantize(w, {spec.scale_mode, 8, 0}));
  }
  return m;
}

Matrix silu(const Matrix& x) {
  Matrix y = x;
  for (double& v : y.values()) v = v / (1.0 + std::exp(-v));
  return y;
}

std::vector<Matrix> layer_inputs(const ToyModel& model, const WeightImage& weights,
                                 const Matrix& x) {
  check_image(model, weights);
  std::vector<Matrix> ins;
  Matrix h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    ins.push_back(apply_wy_right(apply_gain(h, model.input_gains[l]), model.rotations[l]));
    const Matrix y = matmul(ins.back(), dequantize(weights[l]));
    h = l + 1 < weights.size() ? silu(y) : y;
  }
  return ins;
}

Matrix forward_with(const ToyModel& model, const WeightImage& weights, const Matrix& x) {
  check_image(model, weights);
  if (x.cols() != model.dims.front()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " channels, model expects " + std::to_string(model.dims.front()));
  }
  Matrix h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const Matrix a = apply_wy_right(apply_gain(h, model.input_gains[l]), model.rotations[l]);
    const Matrix y = matmul(a, dequantize(weights[l]));
    h = l + 1 < weights.size() ? silu(y) : y;
  }
  return h;
}

Matrix forward(const ToyModel& model, const Matrix& x) {
  return forward_with(model, model.weights, x);
}

double proxy_metric(const Matrix& outputs, const Matrix& reference) {
  if (outputs.rows() != reference.rows() || outputs.cols() != reference.cols())
    throw std::invalid_argument("proxy_metric: output and reference shapes differ");
  if (outputs.rows() == 0) throw std::invalid_argument("proxy_metric: empty probe set");
  double total = 0.0;
  for (std::size_t i = 0; i < outputs.rows(); ++i) {
    double sq = 0.0;
    const auto a = outputs.row(i);
    const auto b = reference.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) sq += (a[j] - b[j]) * (a[j] - b[j]);
    total += sq;
  }
  const double m = std::exp(total / static_cast<double>(outputs.rows()));
  return std::isfinite(m) ? m : std::numeric_limits<double>::infinity();
}

double proxy_metric(const ToyModel& model, const WeightImage& weights, const Matrix& probe,
                    const Matrix& reference) {
  return proxy_metric(forward_with(model, weights, probe), reference);
}

MetricFn make_metric(const ToyModel& model, const Matrix& probe) {
  Matrix reference = forward(model, probe);
  return [model, probe, reference = std::move(reference)](const WeightImage& w) {
    return proxy_metric(model, w, probe, reference);
  };
}

std::vector<LayerCalibration> calibration_activations(const ToyModel& baseline,
                                                      const CalibrationSpec& cal) {
  if (cal.batches == 0 || cal.tokens == 0)
    throw std::invalid_argument("calibration needs at least one batch of one token");
  std::vector<LayerCalibration> out(baseline.num_layers());
  for (std::size_t l = 0; l < out.size(); ++l) out[l].layer_id = layer_name(l);
  for (std::size_t b = 0; b < cal.batches; ++b) {
    const Matrix x = gaussian_matrix(cal.tokens, baseline.dims.front(), cal.seed + b);
    auto ins = layer_inputs(baseline, baseline.weights, x);
    for (std::size_t l = 0; l < out.size(); ++l) out[l].batches.push_back(std::move(ins[l]));
  }
  return out;
}

ProtectionResult protect_model(const ToyModel& baseline, const DefenseConfig& cfg,
                               const CalibrationSpec& cal,
                               const std::vector<std::size_t>& opt_outs) {
  cfg.validate();
  if (baseline.reflector_count() != 0)
    throw std::invalid_argument("protect_model: model is already protected");
  for (std::size_t l : opt_outs)
    if (l >= baseline.num_layers())
      throw std::invalid_argument("protect_model: opt-out layer " + std::to_string(l) +
                                  " out of range");

  DefenseConfig fuse_cfg = cfg;
  fuse_cfg.requantize_fused = true;

  ProtectionResult res;
  res.model = baseline;
  const auto acts = calibration_activations(baseline, cal);
  for (std::size_t l = 0; l < baseline.num_layers(); ++l) {
    ChannelStats stats = calibrate_layer(acts[l], cfg);
    if (std::find(opt_outs.begin(), opt_outs.end(), l) != opt_outs.end()) stats.outliers.clear();
    const CompactWY wy = build_rotation(stats);
    ProtectedLayer p = fuse_weights(baseline.weights[l], wy, fuse_cfg, layer_name(l));
    res.model.weights[l] = p.fused_quantized();
    res.model.rotations[l] = wy;
    res.stats.push_back(std::move(stats));
    res.layers.push_back(std::move(p));
  }
  return res;
}

const char* to_string(CandidatePolicy::Kind k) {
  return k == CandidatePolicy::Kind::amplification ? "amplification" : "top_magnitude";
}

CandidateFn make_candidates(const ToyModel& model, const Matrix& probe,
                            const CandidatePolicy& policy) {
  if (policy.kind == CandidatePolicy::Kind::top_magnitude)
    return top_magnitude_candidates(policy.k);
  return amplification_candidates(policy.k, [model, probe](const WeightImage& w) {
    std::vector<std::vector<double>> peaks;
    for (const auto& in : layer_inputs(model, w, probe)) peaks.push_back(channel_linf(in));
    return peaks;
  });
}

EvalReport aggregate(std::vector<AttackOutcome> outcomes) {
  EvalReport r;
  r.trials = outcomes.size();
  if (r.trials == 0) return r;
  double sum = 0.0;
  for (const auto& o : outcomes) {
    sum += o.metric_after;
    r.max_metric = std::max(r.max_metric, o.metric_after);
    if (o.failed) ++r.failed_trials;
  }
  r.mean_metric = sum / static_cast<double>(r.trials);
  r.fail_rate = static_cast<double>(r.failed_trials) / static_cast<double>(r.trials);
  r.outcomes = std::move(outcomes);
  return r;
}

EvalReport monte_carlo(const ToyModel& model, const Matrix& probe, double ber,
                       std::size_t trials, std::uint64_t base_seed, const FailureRule& rule,
                       unsigned workers) {
  if (trials == 0) throw std::invalid_argument("monte_carlo: trials must be >= 1");
  if (!(ber >= 0.0 && ber <= 1.0)) throw std::invalid_argument("ber must lie in [0, 1]");
  const MetricFn metric = make_metric(model, probe);
  const double clean = metric(model.weights);

  std::vector<AttackOutcome> outcomes(trials);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < trials; i = next++)
      outcomes[i] = random_ber_attack(model.weights, ber, base_seed + i, metric, rule, clean);
  };
  unsigned n = workers ? workers : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, trials));
  if (n <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return aggregate(std::move(outcomes));
}

std::vector<AlphaRow> alpha_sweep(const ToyModel& baseline, const std::vector<double>& alphas,
                                  std::size_t n_flips, const CandidatePolicy& policy,
                                  const Matrix& probe, const DefenseConfig& base_cfg,
                                  const CalibrationSpec& cal, const FailureRule& rule) {
  if (alphas.empty()) throw std::invalid_argument("alpha_sweep: no alpha values");
  std::vector<AlphaRow> rows;
  for (double a : alphas) {
    DefenseConfig cfg = base_cfg;
    cfg.alpha = a;
    const ToyModel prot = protect_model(baseline, cfg, cal).model;
    const GreedyResult g = greedy_bit_search(prot.weights, make_metric(prot, probe), n_flips,
                                             make_candidates(prot, probe, policy), rule);
    rows.push_back({a, prot.reflector_count(), g.outcome.metric_after, g.first_failure_step});
  }
  return rows;
}

}  // namespace ror
