// Acceptance runner: one PASS/FAIL line per criterion, exit 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ror/attack.hpp"
#include "ror/container.hpp"
#include "ror/defense.hpp"
#include "ror/householder.hpp"
#include "ror/model.hpp"
#include "ror/report_io.hpp"
#include "test_support.hpp"

using namespace ror;
using ror::testing::Gen;

namespace {

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::size_t ceil_log2(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

CompactWY random_rotation(Gen& g, std::size_t d, std::size_t m) {
  CompactWY wy(d);
  for (std::size_t k : ror::testing::random_channels(g, d, m)) wy = wy_append(wy, householder_from_outlier(d, k));
  return wy;
}

ToyModel planted_model() {
  ToyModelSpec spec;
  spec.outliers.push_back({1, 7, 32.0});
  return build_toy_model(spec);
}

Matrix probe_set() { return gaussian_matrix(64, 64, 2002); }

// Activations with background N(0,1) and channel k scaled by `gain`.
Matrix spiked_activations(Gen& g, std::size_t tokens, std::size_t d, std::size_t k, double gain) {
  Matrix x = ror::testing::random_matrix(g, tokens, d);
  for (std::size_t t = 0; t < tokens; ++t) x(t, k) *= gain;
  return x;
}

// Weights N(0,1)/sqrt(d) with row k divided by `gain`, so X W matches the
// unspiked product.
Matrix compensated_weights(Gen& g, std::size_t d, std::size_t d_out, std::size_t k, double gain) {
  Matrix w = ror::testing::random_matrix(g, d, d_out, 1.0 / std::sqrt(static_cast<double>(d)));
  for (std::size_t c = 0; c < d_out; ++c) w(k, c) /= gain;
  return w;
}

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Verdict lossless() {
  Gen g(101);
  const std::size_t dims[] = {64, 256, 1024};
  const std::size_t ms[] = {0, 1, 8, 32};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = dims[i % 3];
    const std::size_t m = ms[(i / 3) % 4];
    const Matrix w = ror::testing::random_matrix(g, d, 64, 1.0 / std::sqrt(static_cast<double>(d)));
    const Matrix x = ror::testing::random_matrix(g, 16, d, g.uniform(0.5, 20.0));
    const auto layer = fuse_weights(w, random_rotation(g, d, m), {});
    worst = std::max(worst, verify_lossless(w, layer, x, 1e-9).relative_deviation);
  }
  return {worst <= 1e-9, "100 layers, max relative deviation " + fmt(worst)};
}

Verdict orthogonality() {
  Gen g(202);
  double orth = 0.0, equiv = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t d = 8 + g.index(1017);
    const std::size_t m = g.index(std::min<std::size_t>(64, d) + 1);
    CompactWY wy(d);
    Matrix seq = Matrix::identity(d);
    for (std::size_t k : ror::testing::random_channels(g, d, m)) {
      const auto h = householder_from_outlier(d, k);
      wy = wy_append(wy, h);
      seq = apply_householder(seq, h);
    }
    const Matrix q = wy_to_dense(wy);
    orth = std::max(orth, ror::testing::frob_diff(matmul(transpose(q), q), Matrix::identity(d)));
    equiv = std::max(equiv, ror::testing::frob_diff(q, seq));
  }
  return {orth <= 1e-10 && equiv <= 1e-10,
          "50 cases, max ||QtQ-I||_F " + fmt(orth) + ", max ||Q_WY-H1..Hm||_F " + fmt(equiv)};
}

Verdict spike_smoothing() {
  Gen g(303);
  double col_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = 2 + g.index(1023);
    const std::size_t k = g.index(d);
    const Matrix x = ror::testing::random_matrix(g, 8, d, g.uniform(0.1, 40.0));
    const Matrix xt = apply_wy_right(x, wy_append(CompactWY(d), householder_from_outlier(d, k)));
    const double u = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double xu = 0.0;
      for (std::size_t j = 0; j < d; ++j) xu += x(i, j) * u;
      col_err = std::max(col_err, std::fabs(xt(i, k) - xu) / (1.0 + std::fabs(xu)));
    }
  }

  const std::size_t d = 128, k = 37;
  const Matrix x = spiked_activations(g, 128, d, k, 32.0);
  const auto q = quantize(compensated_weights(g, d, 64, k, 32.0), {ScaleMode::per_tensor, 8, 0});
  DefenseConfig cfg;
  cfg.requantize_fused = true;
  const auto stats = calibrate({{"layer", {x}}}, cfg);
  const auto layer = fuse_weights(q, build_rotation(stats[0]), cfg);
  const double base = worst_case_perturbation(q, x).max_delta_y;
  const double prot = worst_case_perturbation(layer, x).max_delta_y;
  const double ratio = prot / base;
  return {col_err <= 1e-12 && layer.rank() == 1 && ratio <= 0.2,
          "column error " + fmt(col_err) + ", reflectors " + std::to_string(layer.rank()) +
              ", worst-case ratio " + fmt(ratio) + " (baseline " + fmt(base) + ", protected " + fmt(prot) + ")"};
}

Verdict spof() {
  const ToyModel base = planted_model();
  const ToyModel prot = protect_model(base, {}).model;
  const Matrix probe = probe_set();
  const FailureRule rule;
  const auto rb = monte_carlo(base, probe, 3e-4, 500, 0, rule);
  const auto rp = monte_carlo(prot, probe, 3e-4, 500, 0, rule);
  std::string spfa = "no failing baseline seed";
  bool located = false;
  for (const auto& oc : rb.outcomes) {
    if (!oc.failed) continue;
    const auto r = spfa_locate(base.weights, oc.flips, make_metric(base, probe), rule, oc.metric_before);
    const std::size_t bound = 2 * ceil_log2(oc.flips.size()) + 2;
    located = r.isolated && r.evaluations <= bound;
    std::ostringstream s;
    s << "seed " << oc.seed << ": " << oc.flips.size() << " flips, " << r.evaluations << "/" << bound
      << " evaluations";
    if (r.location) s << ", fatal flip layer " << r.location->layer << " row " << r.location->row;
    spfa = s.str();
    break;
  }
  return {rb.fail_rate > 0.0 && rp.fail_rate == 0.0 && located,
          "fail_rate baseline " + fmt(rb.fail_rate) + ", protected " + fmt(rp.fail_rate) + "; " + spfa};
}

Verdict greedy() {
  const ToyModel base = planted_model();
  const ToyModel prot = protect_model(base, {}).model;
  const Matrix probe = probe_set();
  const CandidatePolicy policy{CandidatePolicy::Kind::amplification, 32};
  const FailureRule rule;
  auto run = [&](const ToyModel& m) {
    return greedy_bit_search(m.weights, make_metric(m, probe), 50, make_candidates(m, probe, policy), rule);
  };
  const auto gb = run(base);
  const auto gp = run(prot);
  bool below = gb.trace.size() == gp.trace.size();
  for (std::size_t s = 0; below && s < gb.trace.size(); ++s) below = gp.trace[s] <= gb.trace[s];
  const bool earlier =
      gb.first_failure_step && (!gp.first_failure_step || *gb.first_failure_step < *gp.first_failure_step);
  auto step = [](const std::optional<std::size_t>& s) { return s ? std::to_string(*s) : std::string("never"); };
  return {below && earlier, "first failure step baseline " + step(gb.first_failure_step) + ", protected " +
                                step(gp.first_failure_step) + "; final metric baseline " +
                                fmt(gb.trace.back()) + ", protected " + fmt(gp.trace.back())};
}

Verdict white_box_cost() {
  Gen g(606);
  // Algebraic equivalence in full precision.
  double alg = 0.0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t d = 64 << g.index(4);
    const Matrix w = ror::testing::random_matrix(g, d, 32, 1.0 / std::sqrt(static_cast<double>(d)));
    const auto layer = fuse_weights(w, random_rotation(g, d, 1 + g.index(8)), {});
    const std::size_t r = g.index(d), c = g.index(32);
    const double delta = g.uniform(-10.0, 10.0);
    const auto res = spfa_column_attack(layer, r, c, delta);
    const Matrix x = ror::testing::random_matrix(g, 8, d);
    const Matrix got = matmul(apply_wy_right(x, layer.wy), std::get<Matrix>(res.perturbed));
    Matrix want = matmul(x, w);
    for (std::size_t i = 0; i < x.rows(); ++i) want(i, c) += delta * x(i, r);
    alg = std::max(alg, ror::testing::max_abs_diff(got, want) / (1.0 + max_abs(want)));
  }

  // Hamming cost versus d for int8 and bf16.
  DefenseConfig cfg;
  cfg.requantize_fused = true;
  const std::vector<double> ds{64, 128, 256, 512};
  std::vector<double> cost_i8, cost_bf16;
  std::size_t baseline_cost = 0;
  for (double dd : ds) {
    const std::size_t d = static_cast<std::size_t>(dd);
    const std::size_t k = g.index(d);
    const Matrix x = spiked_activations(g, 64, d, k, 32.0);
    const Matrix w = compensated_weights(g, d, 64, k, 32.0);
    const CompactWY wy = build_rotation(calibrate({{"layer", {x}}}, cfg)[0]);
    for (DType dt : {DType::i8, DType::bf16}) {
      const QuantizedTensor q = dt == DType::i8 ? quantize(w, {ScaleMode::per_tensor, 8, 0}) : quantize_bf16(w);
      const unsigned msb = msb_bit(dt);
      const double delta = flip_delta(q, k, 0, msb);
      const auto plain = spfa_column_attack(fuse_weights(q, CompactWY(d), cfg), k, 0, delta);
      baseline_cost = std::max(baseline_cost, plain.outcome.hamming_cost);
      const auto res = spfa_column_attack(fuse_weights(q, wy, cfg), k, 0, delta);
      (dt == DType::i8 ? cost_i8 : cost_bf16).push_back(static_cast<double>(res.outcome.hamming_cost));
    }
  }
  const double s8 = ls_slope(ds, cost_i8), s16 = ls_slope(ds, cost_bf16);
  std::ostringstream det;
  det << "algebra error " << fmt(alg) << "; baseline cost " << baseline_cost << "; int8 costs";
  for (double c : cost_i8) det << " " << c;
  det << " slope " << fmt(s8) << " (need >= 4); bf16 costs";
  for (double c : cost_bf16) det << " " << c;
  det << " slope " << fmt(s16) << " (need >= 8)";
  return {alg <= 1e-9 && baseline_cost == 1 && s8 >= 4.0 && s16 >= 8.0, det.str()};
}

Verdict overhead() {
  std::size_t checked = 0, violations = 0, capped_violations = 0;
  std::string first;
  for (std::size_t di = 8; di <= 16384; di *= 2)
    for (std::size_t dout = 8; dout <= 16384; dout *= 2)
      for (std::size_t m = 0; m <= std::min(di, dout) && 200 * m <= dout; ++m)
        for (std::size_t b : {1u, 16u, 2048u}) {
          ++checked;
          const double o = flop_overhead(di, dout, m, b);
          if (o < 0.01) continue;
          ++violations;
          if (m <= default_m_max(di)) ++capped_violations;
          if (first.empty())
            first = " (e.g. d_in " + std::to_string(di) + ", d_out " + std::to_string(dout) + ", m " +
                    std::to_string(m) + ": " + fmt(o) + ")";
        }
  return {violations == 0, std::to_string(checked) + " configurations, " + std::to_string(violations) +
                               " at or above 0.01" + first + "; " + std::to_string(capped_violations) +
                               " with m <= ceil(0.01 d_in)"};
}

Verdict bit_exactness() {
  Gen g(808);
  const ToyModel m = planted_model();
  RortContainer c;
  for (std::size_t l = 0; l < m.num_layers(); ++l) c.add(to_record("w" + std::to_string(l), m.weights[l]));
  c.add(to_record("bf16", quantize_bf16(ror::testing::random_matrix(g, 16, 16))));
  const auto back = decode_container(encode_container(c));
  std::size_t rt = 0;
  for (const auto& rec : c.tensors) rt += hamming_distance(to_quantized(rec), to_quantized(back.at(rec.name)));

  bool single = true;
  for (int t = 0; t < 1000; ++t) {
    const auto& q = m.weights[g.index(m.num_layers())];
    const FlipLocation f{0, g.index(q.rows()), g.index(q.cols()), static_cast<unsigned>(g.index(q.bit_width()))};
    single = single && hamming_distance(q, flip_bit(q, f).first) == 1;
  }

  const Matrix probe = probe_set();
  auto dump = [&](unsigned workers) {
    const auto r = monte_carlo(m, probe, 1e-3, 64, 77, {}, workers);
    std::string s = report_csv(r) + to_json(r).dump();
    for (const auto& o : r.outcomes) s += to_json(o).dump();
    return s;
  };
  const std::string ref = dump(1);
  const bool rerun = dump(1) == ref;
  const bool workers = dump(3) == ref && dump(8) == ref;
  return {rt == 0 && single && rerun && workers,
          "round-trip distance " + std::to_string(rt) + ", single flips " + (single ? "ok" : "bad") +
              ", rerun " + (rerun ? "identical" : "differs") + ", worker counts " +
              (workers ? "identical" : "differ")};
}

Verdict alpha_monotonicity() {
  const ToyModel base = planted_model();
  const std::vector<double> alphas{3.0, 6.0, 9.0, 12.0, 24.0};
  const auto rows = alpha_sweep(base, alphas, 50, {CandidatePolicy::Kind::amplification, 32}, probe_set());
  bool monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) monotone = monotone && rows[i].reflector_count <= rows[i - 1].reflector_count;
  double worst_flagged = -1.0, best_unflagged = INFINITY;
  bool have_flagged = false, have_unflagged = false;
  std::ostringstream det;
  for (const auto& r : rows) {
    det << " alpha " << r.alpha << ": " << r.reflector_count << " reflectors, metric " << fmt(r.post_attack_metric) << ";";
    if (r.reflector_count > 0) {
      have_flagged = true;
      worst_flagged = std::max(worst_flagged, r.post_attack_metric);
    } else {
      have_unflagged = true;
      best_unflagged = std::min(best_unflagged, r.post_attack_metric);
    }
  }
  return {monotone && have_flagged && have_unflagged && worst_flagged < best_unflagged, det.str()};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "losslessness", 60, lossless},
      {2, "orthogonality and WY equivalence", 60, orthogonality},
      {3, "spike smoothing", 300, spike_smoothing},
      {4, "single point of failure reproduced and removed", 600, spof},
      {5, "greedy attack resistance", 600, greedy},
      {6, "white-box cost inflation", 300, white_box_cost},
      {7, "overhead accounting", 60, overhead},
      {8, "bit exactness", 300, bit_exactness},
      {9, "alpha monotonicity", 600, alpha_monotonicity},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool ok = v.passed && in_time;
    failed += ok ? 0 : 1;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << v.detail << " ["
              << fmt(secs) << "s" << (in_time ? "" : ", over budget") << "]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
