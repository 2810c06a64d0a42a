#include "ror/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ror/attack.hpp"
#include "ror/config.hpp"
#include "ror/container.hpp"
#include "ror/defense.hpp"
#include "ror/model.hpp"
#include "ror/report_io.hpp"

namespace ror {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string model;
  std::string baseline;
  std::string protected_model;
  std::string stats;
  std::string out;
  std::string out_dir;
  std::string alphas;
  std::optional<double> ber;
  std::optional<double> alpha;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> base_seed;
  std::optional<unsigned> workers;
  bool resume = false;
};

RunConfig load_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.ber) c.ber = *o.ber;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.trials) c.trials = *o.trials;
  if (o.base_seed) c.base_seed = *o.base_seed;
  if (o.workers) c.workers = *o.workers;
  if (!o.alphas.empty()) {
    c.alphas.clear();
    std::stringstream ss(o.alphas);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        c.alphas.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ValidationError("field 'alphas': cannot parse \"" + tok + "\"");
      }
    }
  }
  c.validate();
  return c;
}

Matrix probe_set(const RunConfig& c, const ToyModel& m) {
  return gaussian_matrix(c.probe_tokens, m.dims.front(), c.probe_seed);
}

ToyModel load_baseline(const std::string& path) {
  ToyModel m = load_model(path);
  if (m.reflector_count() != 0)
    throw ValidationError(path + ": expected a baseline model, found a protected one");
  return m;
}

std::vector<ProtectedLayer> protect_layers(const ToyModel& base, const RunConfig& c,
                                           const std::vector<ChannelStats>& stats) {
  std::vector<ProtectedLayer> layers;
  for (std::size_t l = 0; l < base.num_layers(); ++l) {
    ChannelStats s = stats[l];
    if (s.peaks.size() != base.dims[l])
      throw ValidationError("stats for layer" + std::to_string(l) + " have " +
                            std::to_string(s.peaks.size()) + " channels, layer has " +
                            std::to_string(base.dims[l]));
    if (std::find(c.layer_opt_outs.begin(), c.layer_opt_outs.end(), l) != c.layer_opt_outs.end())
      s.outliers.clear();
    layers.push_back(fuse_weights(base.weights[l], build_rotation(s), c.defense(),
                                  "layer" + std::to_string(l)));
  }
  return layers;
}

std::vector<ChannelStats> compute_stats(const ToyModel& base, const RunConfig& c) {
  return calibrate(calibration_activations(base, c.calibration), c.defense());
}

ToyModel as_model(const ToyModel& base, const std::vector<ProtectedLayer>& layers) {
  ToyModel m = base;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (!layers[l].is_quantized())
      throw ValidationError("protected weights are full precision; attacks need \"requantize\": true");
    m.weights[l] = layers[l].fused_quantized();
    m.rotations[l] = layers[l].wy;
  }
  return m;
}

class JsonlLog {
 public:
  JsonlLog(const fs::path& path, bool append)
      : out_(path, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  void write(const json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

int cmd_init_model(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel m = build_toy_model(c.model);
  save_model(o.out, m);
  out << "wrote baseline model with " << m.num_layers() << " layers to " << o.out << "\n";
  return kExitOk;
}

int cmd_calibrate(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel base = load_baseline(o.model);
  const auto stats = compute_stats(base, c);
  json layers = json::array();
  std::size_t total = 0;
  for (std::size_t l = 0; l < stats.size(); ++l) {
    layers.push_back(to_json(stats[l], "layer" + std::to_string(l)));
    total += stats[l].outliers.size();
  }
  write_json(o.out, {{"alpha", real_json(c.alpha)}, {"layers", layers}});
  out << "flagged " << total << " channels across " << stats.size() << " layers\n";
  return kExitOk;
}

int cmd_protect(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel base = load_baseline(o.model);
  std::vector<ChannelStats> stats;
  if (o.stats.empty()) {
    stats = compute_stats(base, c);
  } else {
    const json doc = read_json(o.stats);
    if (!doc.contains("layers") || !doc["layers"].is_array())
      throw ValidationError("field 'layers': missing from " + o.stats);
    for (const auto& l : doc["layers"]) stats.push_back(stats_from_json(l));
    if (stats.size() != base.num_layers())
      throw ValidationError("field 'layers': " + std::to_string(stats.size()) +
                            " entries for a " + std::to_string(base.num_layers()) +
                            "-layer model");
  }
  const auto layers = protect_layers(base, c, stats);
  save_protected(o.out, base, layers);
  std::size_t total = 0;
  for (const auto& p : layers) total += p.rank();
  out << "protected " << layers.size() << " layers with " << total << " reflectors -> " << o.out
      << "\n";
  return kExitOk;
}

int cmd_attack_random(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel m = load_model(o.model);
  const MetricFn metric = make_metric(m, probe_set(c, m));
  const double clean = metric(m.weights);
  std::size_t start = 0;
  if (o.resume) start = recover_jsonl(o.out).size();
  JsonlLog log(o.out, o.resume);
  std::size_t failed = 0;
  for (std::size_t i = start; i < c.trials; ++i) {
    const auto oc = random_ber_attack(m.weights, c.ber, c.base_seed + i, metric, c.failure, clean);
    json j = to_json(oc);
    j["trial"] = i;
    j["ber"] = c.ber;
    log.write(j);
    failed += oc.failed ? 1 : 0;
  }
  out << "ran trials " << start << ".." << c.trials << ", " << failed << " failed\n";
  return kExitOk;
}

int cmd_attack_greedy(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel m = load_model(o.model);
  if (o.resume) {
    for (const auto& j : recover_jsonl(o.out))
      if (j.value("kind", "") == "summary") {
        out << "log already complete\n";
        return kExitOk;
      }
  }
  const Matrix probe = probe_set(c, m);
  const auto g = greedy_bit_search(m.weights, make_metric(m, probe), c.n_flips,
                                   make_candidates(m, probe, c.candidate_policy), c.failure);
  JsonlLog log(o.out, false);
  for (std::size_t s = 1; s < g.trace.size(); ++s) {
    json j = {{"kind", "step"}, {"step", s}, {"metric", real_json(g.trace[s])},
              {"failed", c.failure.failed(g.trace[s], g.trace[0])}};
    if (s <= g.outcome.flips.size()) j["flip"] = to_json(g.outcome.flips[s - 1]);
    log.write(j);
  }
  json summary = to_json(g.outcome);
  summary["kind"] = "summary";
  summary["stopped_early"] = g.stopped_early;
  summary["first_failure_step"] =
      g.first_failure_step ? json(*g.first_failure_step) : json(nullptr);
  log.write(summary);
  out << "greedy: " << g.outcome.flips.size() << " flips, final metric "
      << format_real(g.outcome.metric_after) << "\n";
  return kExitOk;
}

int cmd_attack_spfa(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel m = load_model(o.model);
  const MetricFn metric = make_metric(m, probe_set(c, m));
  const double clean = metric(m.weights);
  JsonlLog log(o.out, false);
  for (std::size_t i = 0; i < c.trials; ++i) {
    const auto oc = random_ber_attack(m.weights, c.ber, c.base_seed + i, metric, c.failure, clean);
    if (!oc.failed) continue;
    const auto r = spfa_locate(m.weights, oc.flips, metric, c.failure, clean);
    const std::size_t n = oc.flips.size();
    const auto bound = 2 * static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n)))) + 2;
    json j = {{"kind", "spfa"},       {"seed", oc.seed},
              {"set_size", n},        {"isolated", r.isolated},
              {"evaluations", r.evaluations}, {"evaluation_bound", bound},
              {"metric", real_json(r.metric)}};
    if (r.location) j["location"] = to_json(*r.location);
    json rem = json::array();
    for (const auto& f : r.remaining) rem.push_back(to_json(f));
    j["remaining"] = rem;
    log.write(j);
    if (r.location)
      out << "isolated fatal flip at layer " << r.location->layer << " row " << r.location->row
          << " col " << r.location->col << " bit " << r.location->bit << " (seed " << oc.seed
          << ", " << r.evaluations << " evaluations)\n";
    else
      out << "failure in seed " << oc.seed << " is not isolable to one flip\n";
    return kExitOk;
  }
  log.write({{"kind", "spfa"}, {"found_failing_seed", false}, {"trials", c.trials}});
  out << "no failing seed in " << c.trials << " trials\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel base = load_baseline(o.baseline);
  ToyModel prot;
  if (o.protected_model.empty()) {
    prot = as_model(base, protect_layers(base, c, compute_stats(base, c)));
  } else {
    prot = load_model(o.protected_model);
  }
  const Matrix probe = probe_set(c, base);
  const EvalReport rb = monte_carlo(base, probe, c.ber, c.trials, c.base_seed, c.failure, c.workers);
  const EvalReport rp = monte_carlo(prot, probe, c.ber, c.trials, c.base_seed, c.failure, c.workers);
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  write_json(dir / "report.json", {{"ber", real_json(c.ber)},
                                   {"trials", c.trials},
                                   {"base_seed", c.base_seed},
                                   {"reflectors", prot.reflector_count()},
                                   {"baseline", to_json(rb)},
                                   {"protected", to_json(rp)}});
  write_report_csv(dir / "baseline.csv", rb);
  write_report_csv(dir / "protected.csv", rp);
  out << "baseline fail_rate " << format_real(rb.fail_rate) << ", protected fail_rate "
      << format_real(rp.fail_rate) << "\n";
  return kExitOk;
}

int cmd_sweep_alpha(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel base = load_baseline(o.model);
  DefenseConfig d = c.defense();
  const auto rows = alpha_sweep(base, c.alphas, c.n_flips, c.candidate_policy, probe_set(c, base),
                                d, c.calibration, c.failure);
  write_text(o.out, alpha_sweep_csv(rows));
  out << "wrote " << rows.size() << " rows to " << o.out << "\n";
  return kExitOk;
}

int cmd_verify(const Options& o, std::ostream& out) {
  const RunConfig c = load_config(o);
  const ToyModel base = load_baseline(o.baseline);
  const StoredModel prot = load_stored(o.protected_model);
  if (prot.layers.size() != base.num_layers() || prot.model.dims != base.dims)
    throw ValidationError("protected model does not match the baseline's dims");
  const auto inputs = layer_inputs(base, base.weights, probe_set(c, base));
  bool ok = true;
  double worst = 0.0;
  json layers = json::array();
  for (std::size_t l = 0; l < base.num_layers(); ++l) {
    const auto r = verify_lossless(base.weights[l], prot.layers[l], inputs[l], c.lossless_tol);
    ok = ok && r.passed;
    worst = std::max(worst, r.relative_deviation);
    layers.push_back({{"layer", prot.layers[l].layer_id},
                      {"reflectors", prot.layers[l].rank()},
                      {"max_abs_deviation", real_json(r.max_abs_deviation)},
                      {"relative_deviation", real_json(r.relative_deviation)},
                      {"tolerance", real_json(r.tolerance)},
                      {"passed", r.passed}});
  }
  if (!o.out.empty())
    write_json(o.out, {{"passed", ok}, {"max_relative_deviation", real_json(worst)}, {"layers", layers}});
  out << (ok ? "PASS" : "FAIL") << " max relative deviation " << format_real(worst) << "\n";
  return ok ? kExitOk : kExitValidation;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rotation defense against weight bit flips: calibrate, protect, attack, evaluate"};
  app.name("ror");
  app.require_subcommand(1);
  Options o;

  auto add_config = [&](CLI::App* s) {
    s->add_option("--config", o.config, "run configuration JSON")->check(CLI::ExistingFile);
  };

  auto* init = app.add_subcommand("init-model", "build a seeded toy model");
  add_config(init);
  init->add_option("--out", o.out, "output container")->required();

  auto* cal = app.add_subcommand("calibrate", "per-layer channel statistics");
  add_config(cal);
  cal->add_option("--model", o.model, "baseline container")->required()->check(CLI::ExistingFile);
  cal->add_option("--out", o.out, "stats JSON")->required();
  cal->add_option("--alpha", o.alpha, "override alpha");

  auto* prot = app.add_subcommand("protect", "rotate and fuse weights");
  add_config(prot);
  prot->add_option("--model", o.model, "baseline container")->required()->check(CLI::ExistingFile);
  prot->add_option("--stats", o.stats, "stats JSON from calibrate")->check(CLI::ExistingFile);
  prot->add_option("--out", o.out, "protected container")->required();
  prot->add_option("--alpha", o.alpha, "override alpha");

  auto* attack = app.add_subcommand("attack", "fault injection");
  attack->require_subcommand(1);
  std::vector<CLI::App*> attack_subs;
  for (const char* kind : {"random", "greedy", "spfa"}) {
    auto* s = attack->add_subcommand(kind, std::string(kind) + " attack");
    add_config(s);
    s->add_option("--model", o.model, "model container")->required()->check(CLI::ExistingFile);
    s->add_option("--out", o.out, "JSONL log")->required();
    s->add_option("--ber", o.ber, "override bit error rate");
    s->add_option("--trials", o.trials, "override trial count");
    s->add_option("--base-seed", o.base_seed, "override base seed");
    s->add_flag("--resume", o.resume, "continue an existing log");
    attack_subs.push_back(s);
  }

  auto* eval = app.add_subcommand("evaluate", "paired Monte Carlo, baseline vs protected");
  add_config(eval);
  eval->add_option("--baseline", o.baseline, "baseline container")->required()->check(CLI::ExistingFile);
  eval->add_option("--protected", o.protected_model, "protected container (default: protect in memory)")
      ->check(CLI::ExistingFile);
  eval->add_option("--out-dir", o.out_dir, "directory for report.json and CSVs")->required();
  eval->add_option("--ber", o.ber, "override bit error rate");
  eval->add_option("--trials", o.trials, "override trial count");
  eval->add_option("--base-seed", o.base_seed, "override base seed");
  eval->add_option("--workers", o.workers, "worker threads (0 = all cores)");

  auto* sweep = app.add_subcommand("sweep-alpha", "greedy attack across alpha values");
  add_config(sweep);
  sweep->add_option("--model", o.model, "baseline container")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", o.out, "CSV output")->required();
  sweep->add_option("--alphas", o.alphas, "comma-separated alpha values");

  auto* ver = app.add_subcommand("verify", "check protected outputs against the baseline");
  add_config(ver);
  ver->add_option("--baseline", o.baseline, "baseline container")->required()->check(CLI::ExistingFile);
  ver->add_option("--protected", o.protected_model, "protected container")->required()->check(CLI::ExistingFile);
  ver->add_option("--out", o.out, "report JSON");

  std::vector<const char*> argv{"ror"};
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), const_cast<char**>(argv.data()));
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  try {
    if (init->parsed()) return cmd_init_model(o, out);
    if (cal->parsed()) return cmd_calibrate(o, out);
    if (prot->parsed()) return cmd_protect(o, out);
    if (attack_subs[0]->parsed()) return cmd_attack_random(o, out);
    if (attack_subs[1]->parsed()) return cmd_attack_greedy(o, out);
    if (attack_subs[2]->parsed()) return cmd_attack_spfa(o, out);
    if (eval->parsed()) return cmd_evaluate(o, out);
    if (sweep->parsed()) return cmd_sweep_alpha(o, out);
    if (ver->parsed()) return cmd_verify(o, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ContainerError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  err << "error: no subcommand\n";
  return kExitValidation;
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace ror
