#include "ror/attack.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "ror/outlier_stats.hpp"

namespace ror {

namespace {

double evaluate(const MetricFn& metric, const WeightImage& image) {
  const double m = metric(image);
  return std::isnan(m) ? std::numeric_limits<double>::infinity() : m;
}

void flip_in_place(WeightImage& image, const FlipLocation& f) {
  if (f.layer >= image.size()) {
    throw std::out_of_range("flip targets layer " + std::to_string(f.layer) + " of " +
                            std::to_string(image.size()));
  }
  image[f.layer].toggle_bit(f.row, f.col, f.bit);
}

struct Scored {
  double score;
  double tiebreak;
  std::size_t flat;
};

// Top k of a layer by (score, tiebreak) descending, lower flat index first.
std::vector<FlipLocation> top_k(std::vector<Scored>& scored, std::size_t k, std::size_t layer,
                                std::size_t cols, unsigned bit) {
  const std::size_t n = std::min(k, scored.size());
  auto better = [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tiebreak != b.tiebreak) return a.tiebreak > b.tiebreak;
    return a.flat < b.flat;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    better);
  std::vector<FlipLocation> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({layer, scored[i].flat / cols, scored[i].flat % cols, bit});
  return out;
}

WorstCase sweep(const QuantizedTensor& w, std::span<const double> peaks,
                const std::vector<unsigned>& bits) {
  std::vector<unsigned> todo = bits;
  if (todo.empty()) {
    todo.resize(w.bit_width());
    std::iota(todo.begin(), todo.end(), 0u);
  }
  WorstCase wc;
  bool first = true;
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c)
      for (unsigned b : todo) {
        double dy = std::fabs(flip_delta(w, r, c, b)) * peaks[r];
        if (std::isnan(dy)) dy = std::numeric_limits<double>::infinity();
        if (first || dy > wc.max_delta_y) {
          wc.max_delta_y = dy;
          wc.where = {0, r, c, b};
          first = false;
        }
      }
  return wc;
}

}  // namespace

double FailureRule::threshold(double clean_metric) const {
  return std::max(absolute, relative * clean_metric);
}

bool FailureRule::failed(double metric, double clean_metric) const {
  return !(metric <= threshold(clean_metric));
}

std::size_t total_bits(const WeightImage& image) {
  std::size_t n = 0;
  for (const auto& t : image) n += t.total_bits();
  return n;
}

unsigned msb_bit(DType dtype) {
  switch (dtype) {
    case DType::i8: return 7;
    case DType::bf16: return 14;
    default: throw std::invalid_argument("msb_bit: weights must be int8 or bf16");
  }
}

std::vector<FlipLocation> sample_ber_flips(const WeightImage& image, double ber,
                                           std::uint64_t seed) {
  if (!(ber >= 0.0 && ber <= 1.0)) throw std::invalid_argument("ber must lie in [0, 1]");
  std::vector<FlipLocation> flips;
  if (ber == 0.0) return flips;
  std::mt19937_64 rng(seed);
  constexpr double kInv53 = 1.0 / 9007199254740992.0;
  for (std::size_t l = 0; l < image.size(); ++l) {
    const auto& t = image[l];
    const unsigned bw = t.bit_width();
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c)
        for (unsigned b = 0; b < bw; ++b) {
          const double u = static_cast<double>(rng() >> 11) * kInv53;
          if (u < ber) flips.push_back({l, r, c, b});
        }
  }
  return flips;
}

WeightImage apply_flips(const WeightImage& image, const std::vector<FlipLocation>& flips) {
  WeightImage out = image;
  for (const auto& f : flips) flip_in_place(out, f);
  return out;
}

AttackOutcome random_ber_attack(const WeightImage& image, double ber, std::uint64_t seed,
                                const MetricFn& metric, const FailureRule& rule,
                                std::optional<double> clean_metric) {
  AttackOutcome o;
  o.seed = seed;
  o.metric_before = clean_metric ? *clean_metric : evaluate(metric, image);
  o.flips = sample_ber_flips(image, ber, seed);
  o.hamming_cost = o.flips.size();
  o.metric_after = o.flips.empty() ? o.metric_before : evaluate(metric, apply_flips(image, o.flips));
  o.failed = rule.failed(o.metric_after, o.metric_before);
  return o;
}

CandidateFn top_magnitude_candidates(std::size_t k) {
  return [k](const WeightImage& image, const std::set<FlipLocation>& skip) {
    std::vector<FlipLocation> out;
    for (std::size_t l = 0; l < image.size(); ++l) {
      const auto& t = image[l];
      const unsigned bit = msb_bit(t.dtype());
      std::vector<Scored> scored;
      scored.reserve(t.size());
      for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) {
          if (skip.count({l, r, c, bit})) continue;
          double mag = std::fabs(t.value(r, c));
          if (std::isnan(mag)) mag = 0.0;
          scored.push_back({mag, 0.0, r * t.cols() + c});
        }
      auto best = top_k(scored, k, l, t.cols(), bit);
      out.insert(out.end(), best.begin(), best.end());
    }
    return out;
  };
}

CandidateFn amplification_candidates(std::size_t k, PeaksFn peaks_fn) {
  return [k, peaks_fn = std::move(peaks_fn)](const WeightImage& image,
                                             const std::set<FlipLocation>& skip) {
    const auto peaks = peaks_fn(image);
    if (peaks.size() != image.size()) {
      throw std::invalid_argument("amplification_candidates: peaks for " +
                                  std::to_string(peaks.size()) + " layers, image has " +
                                  std::to_string(image.size()));
    }
    std::vector<FlipLocation> out;
    for (std::size_t l = 0; l < image.size(); ++l) {
      const auto& t = image[l];
      if (peaks[l].size() != t.rows())
        throw std::invalid_argument("amplification_candidates: peak count mismatch");
      const unsigned bit = msb_bit(t.dtype());
      std::vector<Scored> scored;
      scored.reserve(t.size());
      for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) {
          if (skip.count({l, r, c, bit})) continue;
          double score = std::fabs(flip_delta(t, r, c, bit)) * peaks[l][r];
          double mag = std::fabs(t.value(r, c));
          if (std::isnan(score)) score = 0.0;
          if (std::isnan(mag)) mag = 0.0;
          scored.push_back({score, mag, r * t.cols() + c});
        }
      auto best = top_k(scored, k, l, t.cols(), bit);
      out.insert(out.end(), best.begin(), best.end());
    }
    return out;
  };
}

GreedyResult greedy_bit_search(const WeightImage& image, const MetricFn& metric,
                               std::size_t n_flips, const CandidateFn& candidates,
                               const FailureRule& rule) {
  GreedyResult res;
  WeightImage cur = image;
  std::set<FlipLocation> flipped;
  const double clean = evaluate(metric, cur);
  double current = clean;
  res.trace.push_back(current);
  res.outcome.metric_before = clean;

  for (std::size_t step = 1; step <= n_flips; ++step) {
    if (!res.stopped_early) {
      const auto cands = candidates(cur, flipped);
      std::optional<FlipLocation> best;
      double best_metric = 0.0;
      for (const auto& f : cands) {
        if (flipped.count(f)) continue;
        flip_in_place(cur, f);
        const double m = evaluate(metric, cur);
        flip_in_place(cur, f);
        if (!best || m > best_metric) {
          best = f;
          best_metric = m;
        }
      }
      if (!best || best_metric < current) {
        res.stopped_early = true;
      } else {
        flip_in_place(cur, *best);
        flipped.insert(*best);
        res.outcome.flips.push_back(*best);
        current = best_metric;
      }
    }
    res.trace.push_back(current);
    if (!res.first_failure_step && rule.failed(current, clean)) res.first_failure_step = step;
  }
  res.outcome.metric_after = current;
  res.outcome.hamming_cost = res.outcome.flips.size();
  res.outcome.failed = rule.failed(current, clean);
  return res;
}

SpfaResult spfa_locate(const WeightImage& clean, const std::vector<FlipLocation>& flips,
                       const MetricFn& metric, const FailureRule& rule,
                       std::optional<double> clean_metric) {
  if (flips.empty()) throw std::invalid_argument("spfa_locate: empty flip set");
  const double base = clean_metric ? *clean_metric : evaluate(metric, clean);
  SpfaResult res;
  auto fails = [&](const std::vector<FlipLocation>& subset, double& m) {
    ++res.evaluations;
    m = evaluate(metric, apply_flips(clean, subset));
    return rule.failed(m, base);
  };

  std::vector<FlipLocation> cur = flips;
  double m = 0.0;
  if (!fails(cur, m)) {
    throw std::invalid_argument("spfa_locate: the flip set does not trigger the failure rule");
  }
  res.metric = m;
  while (cur.size() > 1) {
    const auto mid = cur.begin() + static_cast<std::ptrdiff_t>(cur.size() / 2);
    std::vector<FlipLocation> lo(cur.begin(), mid);
    std::vector<FlipLocation> hi(mid, cur.end());
    if (fails(lo, m)) {
      cur = std::move(lo);
    } else if (fails(hi, m)) {
      cur = std::move(hi);
    } else {
      res.remaining = std::move(cur);
      return res;
    }
    res.metric = m;
  }
  res.isolated = true;
  res.location = cur.front();
  res.remaining = std::move(cur);
  return res;
}

ColumnAttackResult spfa_column_attack(const ProtectedLayer& layer, std::size_t r, std::size_t c,
                                      double delta, std::size_t layer_index) {
  const std::size_t d_in = layer.d_in();
  if (r >= d_in || c >= layer.d_out()) {
    throw std::out_of_range("spfa_column_attack: (" + std::to_string(r) + ", " +
                            std::to_string(c) + ") outside " + std::to_string(d_in) + "x" +
                            std::to_string(layer.d_out()));
  }
  ColumnAttackResult res;
  const std::vector<double> q_row = wy_row(layer.wy, r);
  res.column_delta.resize(d_in);
  for (std::size_t i = 0; i < d_in; ++i) res.column_delta[i] = delta * q_row[i];

  auto& o = res.outcome;
  if (layer.is_quantized()) {
    QuantizedTensor q = layer.fused_quantized();
    const QuantizedTensor before = q;
    for (std::size_t i = 0; i < d_in; ++i) {
      const double target = q.value(i, c) + res.column_delta[i];
      std::uint16_t word = 0;
      if (q.dtype() == DType::bf16) {
        word = float_to_bf16(static_cast<float>(target));
      } else {
        const double s = q.row_scale(i);
        const double v = std::clamp(std::nearbyint(target / s) + q.zero_point(), -128.0, 127.0);
        word = static_cast<std::uint16_t>(
            static_cast<std::uint8_t>(static_cast<std::int8_t>(static_cast<int>(v))));
      }
      const std::uint16_t diff = word ^ before.word(i, c);
      if (diff == 0) continue;
      ++res.elements_changed;
      for (unsigned b = 0; b < q.bit_width(); ++b)
        if (diff & (1u << b)) o.flips.push_back({layer_index, i, c, b});
      q.set_word(i, c, word);
    }
    o.hamming_cost = hamming_distance(before, q);
    res.perturbed = std::move(q);
  } else {
    Matrix w = std::get<Matrix>(layer.fused);
    for (std::size_t i = 0; i < d_in; ++i) {
      const double old = w(i, c);
      w(i, c) = old + res.column_delta[i];
      const std::uint64_t diff =
          std::bit_cast<std::uint64_t>(old) ^ std::bit_cast<std::uint64_t>(w(i, c));
      if (diff == 0) continue;
      ++res.elements_changed;
      for (unsigned b = 0; b < 64; ++b)
        if (diff & (std::uint64_t{1} << b)) o.flips.push_back({layer_index, i, c, b});
    }
    o.hamming_cost = o.flips.size();
    res.perturbed = std::move(w);
  }
  return res;
}

WorstCase worst_case_perturbation(const QuantizedTensor& w, const Matrix& x,
                                  const std::vector<unsigned>& bits) {
  if (x.cols() != w.rows()) {
    throw std::invalid_argument("worst_case_perturbation: X has " + std::to_string(x.cols()) +
                                " columns, weights have " + std::to_string(w.rows()) + " rows");
  }
  // A flip at (r, c) changes only output column c, by X[:, r] * delta, so
  // ||dY||_inf = peak_r * |delta| exactly.
  const auto peaks = channel_linf(x);
  return sweep(w, peaks, bits);
}

WorstCase worst_case_perturbation(const ProtectedLayer& layer, const Matrix& x,
                                  const std::vector<unsigned>& bits) {
  if (!layer.is_quantized()) {
    throw std::invalid_argument("worst_case_perturbation: protected layer is not quantized");
  }
  return worst_case_perturbation(layer.fused_quantized(), apply_wy_right(x, layer.wy), bits);
}

}  // namespace ror
