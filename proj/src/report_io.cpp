#include "ror/report_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ror/config.hpp"

namespace ror {

using nlohmann::json;

namespace {

std::string name_of(std::size_t l) { return "layer" + std::to_string(l); }

json quant_info_json(const QuantInfo& q) {
  if (!q.quantized) return nullptr;
  json j = {{"dtype", to_string(q.dtype)}};
  if (q.dtype == DType::i8) {
    json scales = json::array();
    for (float s : q.scales) scales.push_back(real_json(s));
    j["scale_mode"] = to_string(q.scale_mode);
    j["scales"] = scales;
    j["zero_point"] = q.zero_point;
  }
  return j;
}

QuantInfo quant_info_from_json(const json& j) {
  QuantInfo q;
  if (j.is_null()) return q;
  q.quantized = true;
  q.dtype = parse_dtype(j.at("dtype").get<std::string>());
  if (q.dtype == DType::i8) {
    q.scale_mode = parse_scale_mode(j.at("scale_mode").get<std::string>());
    for (const auto& s : j.at("scales")) q.scales.push_back(static_cast<float>(parse_real(s, "scales")));
    q.zero_point = j.at("zero_point").get<std::int32_t>();
  }
  return q;
}

void write_files(const std::filesystem::path& path, const ToyModel& meta,
                 const std::vector<FusedWeights>& weights, const std::vector<CompactWY>& rots,
                 const std::vector<QuantInfo>& originals, bool is_protected) {
  RortContainer c;
  json layers = json::array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const std::string n = name_of(l);
    if (const auto* q = std::get_if<QuantizedTensor>(&weights[l]))
      c.add(to_record(n + ".weight", *q));
    else
      c.add(to_record(n + ".weight", std::get<Matrix>(weights[l])));
    c.add(to_record(n + ".input_gain", meta.input_gains[l]));
    if (!rots[l].empty()) {
      c.add(to_record(n + ".wy.V", rots[l].V()));
      c.add(to_record(n + ".wy.T", rots[l].T()));
    }
    layers.push_back({{"name", n},
                      {"protected_channels", rots[l].protected_channels()},
                      {"original", is_protected ? quant_info_json(originals[l]) : json(nullptr)}});
  }
  json planted = json::array();
  for (const auto& p : meta.planted)
    planted.push_back({{"layer", p.layer}, {"channel", p.channel}, {"magnitude", p.magnitude}});
  const json side = {{"format", "rort-model"},
                     {"version", 1},
                     {"kind", is_protected ? "protected" : "baseline"},
                     {"dims", meta.dims},
                     {"seed", meta.seed},
                     {"scale_mode", to_string(meta.scale_mode)},
                     {"dtype", to_string(meta.dtype)},
                     {"planted_outliers", planted},
                     {"layers", layers}};
  write_container(path, c);
  write_json(sidecar_path(path), side);
}

}  // namespace

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json real_json(double v) {
  if (std::isfinite(v)) return v;
  return format_real(v);
}

double parse_real(const json& v, const std::string& field) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
  }
  throw ValidationError("field '" + field + "': expected a number");
}

json to_json(const FlipLocation& f) {
  return {{"layer", f.layer}, {"row", f.row}, {"col", f.col}, {"bit", f.bit}};
}

FlipLocation flip_from_json(const json& j) {
  try {
    return {j.at("layer").get<std::size_t>(), j.at("row").get<std::size_t>(),
            j.at("col").get<std::size_t>(), j.at("bit").get<unsigned>()};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("flip location: ") + e.what());
  }
}

json to_json(const ChannelStats& s, const std::string& layer_id) {
  json peaks = json::array();
  for (double p : s.peaks) peaks.push_back(real_json(p));
  return {{"layer", layer_id},           {"alpha", real_json(s.alpha)},
          {"mean", real_json(s.mean)},   {"stddev", real_json(s.stddev)},
          {"tau", real_json(s.tau)},     {"outliers", s.outliers},
          {"flagged_count", s.flagged_count}, {"peaks", peaks}};
}

ChannelStats stats_from_json(const json& j) {
  try {
    ChannelStats s;
    for (const auto& p : j.at("peaks")) s.peaks.push_back(parse_real(p, "peaks"));
    s.alpha = parse_real(j.at("alpha"), "alpha");
    s.mean = parse_real(j.at("mean"), "mean");
    s.stddev = parse_real(j.at("stddev"), "stddev");
    s.tau = parse_real(j.at("tau"), "tau");
    s.outliers = j.at("outliers").get<std::vector<std::size_t>>();
    s.flagged_count = j.at("flagged_count").get<std::size_t>();
    for (auto k : s.outliers)
      if (k >= s.peaks.size()) throw ValidationError("field 'outliers': channel out of range");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("stats document: ") + e.what());
  }
}

json to_json(const AttackOutcome& o) {
  json flips = json::array();
  for (const auto& f : o.flips) flips.push_back(to_json(f));
  return {{"seed", o.seed},
          {"flips", flips},
          {"n_flips", o.flips.size()},
          {"metric_before", real_json(o.metric_before)},
          {"metric_after", real_json(o.metric_after)},
          {"failed", o.failed},
          {"hamming_cost", o.hamming_cost}};
}

AttackOutcome outcome_from_json(const json& j) {
  try {
    AttackOutcome o;
    o.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& f : j.at("flips")) o.flips.push_back(flip_from_json(f));
    o.metric_before = parse_real(j.at("metric_before"), "metric_before");
    o.metric_after = parse_real(j.at("metric_after"), "metric_after");
    o.failed = j.at("failed").get<bool>();
    o.hamming_cost = j.at("hamming_cost").get<std::size_t>();
    return o;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("outcome record: ") + e.what());
  }
}

json to_json(const EvalReport& r) {
  return {{"trials", r.trials},
          {"mean_metric", real_json(r.mean_metric)},
          {"max_metric", real_json(r.max_metric)},
          {"fail_rate", real_json(r.fail_rate)},
          {"failed_trials", r.failed_trials}};
}

std::string report_csv(const EvalReport& r) {
  std::string out = "trial,seed,n_flips,metric_before,metric_after,failed\n";
  for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
    const auto& o = r.outcomes[i];
    out += std::to_string(i) + ',' + std::to_string(o.seed) + ',' +
           std::to_string(o.flips.size()) + ',' + format_real(o.metric_before) + ',' +
           format_real(o.metric_after) + ',' + (o.failed ? "1" : "0") + '\n';
  }
  return out;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& r) {
  write_text(path, report_csv(r));
}

std::string alpha_sweep_csv(const std::vector<AlphaRow>& rows) {
  std::string out = "alpha,reflector_count,post_attack_metric,first_failure_step\n";
  for (const auto& r : rows) {
    out += format_real(r.alpha) + ',' + std::to_string(r.reflector_count) + ',' +
           format_real(r.post_attack_metric) + ',' +
           (r.first_failure_step ? std::to_string(*r.first_failure_step) : std::string()) + '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<json> recover_jsonl(const std::filesystem::path& path) {
  std::vector<json> lines;
  if (!std::filesystem::exists(path)) return lines;
  std::ifstream in(path, std::ios::binary);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::size_t good_end = 0;
  std::size_t pos = 0;
  while (pos < all.size()) {
    const std::size_t nl = all.find('\n', pos);
    if (nl == std::string::npos) break;
    try {
      lines.push_back(json::parse(all.substr(pos, nl - pos)));
    } catch (const json::parse_error&) {
      break;
    }
    good_end = nl + 1;
    pos = nl + 1;
  }
  if (good_end != all.size()) std::filesystem::resize_file(path, good_end);
  return lines;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void save_model(const std::filesystem::path& path, const ToyModel& model) {
  std::vector<FusedWeights> w(model.weights.begin(), model.weights.end());
  write_files(path, model, w, model.rotations, std::vector<QuantInfo>(w.size()),
              model.reflector_count() > 0);
}

void save_protected(const std::filesystem::path& path, const ToyModel& baseline,
                    const std::vector<ProtectedLayer>& layers) {
  if (layers.size() != baseline.num_layers())
    throw std::invalid_argument("save_protected: layer count differs from the model");
  std::vector<FusedWeights> w;
  std::vector<CompactWY> rots;
  std::vector<QuantInfo> orig;
  for (const auto& p : layers) {
    w.push_back(p.fused);
    rots.push_back(p.wy);
    orig.push_back(p.original);
  }
  write_files(path, baseline, w, rots, orig, true);
}

StoredModel load_stored(const std::filesystem::path& path) {
  const RortContainer c = read_container(path);
  const json side = read_json(sidecar_path(path));
  StoredModel s;
  try {
    if (side.at("format") != "rort-model")
      throw ValidationError(sidecar_path(path).string() + ": not a model sidecar");
    auto& m = s.model;
    m.dims = side.at("dims").get<std::vector<std::size_t>>();
    m.seed = side.at("seed").get<std::uint64_t>();
    m.scale_mode = parse_scale_mode(side.at("scale_mode").get<std::string>());
    m.dtype = parse_dtype(side.at("dtype").get<std::string>());
    for (const auto& p : side.at("planted_outliers"))
      m.planted.push_back({p.at("layer").get<std::size_t>(), p.at("channel").get<std::size_t>(),
                           p.at("magnitude").get<double>()});
    s.is_protected = side.at("kind") == "protected";
    const auto& layers = side.at("layers");
    if (layers.size() + 1 != m.dims.size())
      throw ValidationError("sidecar lists " + std::to_string(layers.size()) + " layers for " +
                            std::to_string(m.dims.size()) + " dims");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string n = name_of(l);
      const auto channels = layers[l].at("protected_channels").get<std::vector<std::size_t>>();
      CompactWY wy(m.dims[l]);
      if (!channels.empty())
        wy = CompactWY(to_matrix(c.at(n + ".wy.V")), to_matrix(c.at(n + ".wy.T")), channels);
      const TensorRecord& wrec = c.at(n + ".weight");
      ProtectedLayer p;
      p.layer_id = n;
      p.wy = wy;
      p.original = quant_info_from_json(layers[l].at("original"));
      if (wrec.dtype == DType::i8 || wrec.dtype == DType::bf16)
        p.fused = to_quantized(wrec);
      else
        p.fused = to_matrix(wrec);
      if (p.d_in() != m.dims[l] || p.d_out() != m.dims[l + 1])
        throw ValidationError("tensor '" + wrec.name + "' shape does not match the sidecar dims");
      m.input_gains.push_back(to_vector(c.at(n + ".input_gain")));
      if (m.input_gains.back().size() != m.dims[l])
        throw ValidationError("tensor '" + n + ".input_gain' has the wrong length");
      m.rotations.push_back(wy);
      s.quantized = s.quantized && p.is_quantized();
      s.layers.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ValidationError(sidecar_path(path).string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  if (s.quantized)
    for (const auto& p : s.layers) s.model.weights.push_back(p.fused_quantized());
  return s;
}

ToyModel load_model(const std::filesystem::path& path) {
  StoredModel s = load_stored(path);
  if (!s.quantized) {
    throw ValidationError(path.string() +
                          ": weights are stored in full precision; this command needs quantized "
                          "weights (set \"requantize\": true when protecting)");
  }
  return std::move(s.model);
}

}  // namespace ror
