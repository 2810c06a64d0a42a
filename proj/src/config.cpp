#include "ror/config.hpp"

#include <cmath>
#include <fstream>

namespace ror {

using nlohmann::json;

namespace {

double as_real(const json& v, const std::string& field) {
  if (!v.is_number()) throw ValidationError("field '" + field + "': expected a number");
  return v.get<double>();
}

std::uint64_t as_count(const json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  throw ValidationError("field '" + field + "': expected a non-negative integer");
}

bool as_bool(const json& v, const std::string& field) {
  if (!v.is_boolean()) throw ValidationError("field '" + field + "': expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& field) {
  if (!v.is_string()) throw ValidationError("field '" + field + "': expected a string");
  return v.get<std::string>();
}

const json& as_object(const json& v, const std::string& field) {
  if (!v.is_object()) throw ValidationError("field '" + field + "': expected an object");
  return v;
}

const json& as_array(const json& v, const std::string& field) {
  if (!v.is_array()) throw ValidationError("field '" + field + "': expected an array");
  return v;
}

[[noreturn]] void unknown(const std::string& field) {
  throw ValidationError("unknown config field '" + field + "'");
}

void parse_model(const json& j, ToyModelSpec& m) {
  for (const auto& [key, v] : as_object(j, "model").items()) {
    const std::string f = "model." + key;
    if (key == "dims") {
      m.dims.clear();
      for (const auto& d : as_array(v, f)) m.dims.push_back(as_count(d, f));
    } else if (key == "seed") {
      m.seed = as_count(v, f);
    } else if (key == "scale_mode") {
      m.scale_mode = parse_scale_mode(as_string(v, f));
    } else if (key == "outliers") {
      m.outliers.clear();
      for (const auto& o : as_array(v, f)) {
        PlantedOutlier p;
        for (const auto& [ok, ov] : as_object(o, f).items()) {
          const std::string of = f + "." + ok;
          if (ok == "layer") p.layer = as_count(ov, of);
          else if (ok == "channel") p.channel = as_count(ov, of);
          else if (ok == "magnitude") p.magnitude = as_real(ov, of);
          else unknown(of);
        }
        m.outliers.push_back(p);
      }
    } else {
      unknown(f);
    }
  }
}

}  // namespace

DType parse_dtype(const std::string& s) {
  if (s == "int8" || s == "i8") return DType::i8;
  if (s == "bf16") return DType::bf16;
  throw ValidationError("field 'dtype': expected \"int8\" or \"bf16\", got \"" + s + "\"");
}

ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "per_row") return ScaleMode::per_row;
  if (s == "per_tensor") return ScaleMode::per_tensor;
  throw ValidationError("field 'scale_mode': expected \"per_row\" or \"per_tensor\", got \"" + s +
                        "\"");
}

DefenseConfig RunConfig::defense() const {
  DefenseConfig d;
  d.alpha = alpha;
  d.m_max = m_max;
  d.lossless_tol = lossless_tol;
  d.requantize_fused = requantize;
  return d;
}

void RunConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ValidationError("field 'alpha': must be >= 0");
  if (!(ber >= 0.0 && ber <= 1.0)) throw ValidationError("field 'ber': must lie in [0, 1]");
  if (trials == 0) throw ValidationError("field 'trials': must be >= 1");
  if (!(failure.absolute >= 0.0)) throw ValidationError("field 'failure_absolute': must be >= 0");
  if (!(failure.relative >= 0.0)) throw ValidationError("field 'failure_relative': must be >= 0");
  if (lossless_tol && !(*lossless_tol > 0.0))
    throw ValidationError("field 'lossless_tol': must be > 0");
  if (alphas.empty()) throw ValidationError("field 'alphas': must not be empty");
  for (double a : alphas)
    if (!(a >= 0.0) || !std::isfinite(a)) throw ValidationError("field 'alphas': entries must be >= 0");
  if (model.dims.size() < 3) throw ValidationError("field 'model.dims': need at least 3 entries");
  for (auto d : model.dims)
    if (d < 8) throw ValidationError("field 'model.dims': every dim must be >= 8");
  for (const auto& o : model.outliers) {
    if (o.layer + 1 >= model.dims.size())
      throw ValidationError("field 'model.outliers.layer': layer " + std::to_string(o.layer) +
                            " out of range");
    if (o.channel >= model.dims[o.layer])
      throw ValidationError("field 'model.outliers.channel': channel " +
                            std::to_string(o.channel) + " out of range");
    if (!(o.magnitude > 0.0) || !std::isfinite(o.magnitude))
      throw ValidationError("field 'model.outliers.magnitude': must be > 0");
  }
  for (auto l : layer_opt_outs)
    if (l + 1 >= model.dims.size())
      throw ValidationError("field 'layer_opt_outs': layer " + std::to_string(l) +
                            " out of range");
  if (calibration.batches == 0) throw ValidationError("field 'calibration.batches': must be >= 1");
  if (calibration.tokens == 0) throw ValidationError("field 'calibration.tokens': must be >= 1");
  if (probe_tokens == 0) throw ValidationError("field 'probe_tokens': must be >= 1");
  if (candidate_policy.k == 0) throw ValidationError("field 'candidate_policy.k': must be >= 1");
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  for (const auto& [key, v] : as_object(j, "<root>").items()) {
    if (key == "alpha") c.alpha = as_real(v, key);
    else if (key == "m_max") c.m_max = v.is_null() ? std::nullopt : std::optional(as_count(v, key));
    else if (key == "ber") c.ber = as_real(v, key);
    else if (key == "trials") c.trials = as_count(v, key);
    else if (key == "base_seed") c.base_seed = as_count(v, key);
    else if (key == "n_flips") c.n_flips = as_count(v, key);
    else if (key == "failure_absolute") c.failure.absolute = as_real(v, key);
    else if (key == "failure_relative") c.failure.relative = as_real(v, key);
    else if (key == "dtype") c.dtype = parse_dtype(as_string(v, key));
    else if (key == "requantize") c.requantize = as_bool(v, key);
    else if (key == "lossless_tol")
      c.lossless_tol = v.is_null() ? std::nullopt : std::optional(as_real(v, key));
    else if (key == "workers") c.workers = static_cast<unsigned>(as_count(v, key));
    else if (key == "probe_tokens") c.probe_tokens = as_count(v, key);
    else if (key == "probe_seed") c.probe_seed = as_count(v, key);
    else if (key == "layer_opt_outs") {
      c.layer_opt_outs.clear();
      for (const auto& l : as_array(v, key)) c.layer_opt_outs.push_back(as_count(l, key));
    } else if (key == "alphas") {
      c.alphas.clear();
      for (const auto& a : as_array(v, key)) c.alphas.push_back(as_real(a, key));
    } else if (key == "candidate_policy") {
      for (const auto& [pk, pv] : as_object(v, key).items()) {
        const std::string f = key + "." + pk;
        if (pk == "kind") {
          const std::string kind = as_string(pv, f);
          if (kind == "top_magnitude") c.candidate_policy.kind = CandidatePolicy::Kind::top_magnitude;
          else if (kind == "amplification") c.candidate_policy.kind = CandidatePolicy::Kind::amplification;
          else throw ValidationError("field '" + f + "': expected \"top_magnitude\" or \"amplification\"");
        } else if (pk == "k") {
          c.candidate_policy.k = as_count(pv, f);
        } else {
          unknown(f);
        }
      }
    } else if (key == "model") {
      parse_model(v, c.model);
    } else if (key == "calibration") {
      for (const auto& [ck, cv] : as_object(v, key).items()) {
        const std::string f = key + "." + ck;
        if (ck == "batches") c.calibration.batches = as_count(cv, f);
        else if (ck == "tokens") c.calibration.tokens = as_count(cv, f);
        else if (ck == "seed") c.calibration.seed = as_count(cv, f);
        else unknown(f);
      }
    } else {
      unknown(key);
    }
  }
  c.model.dtype = c.dtype;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  json outliers = json::array();
  for (const auto& o : c.model.outliers)
    outliers.push_back({{"layer", o.layer}, {"channel", o.channel}, {"magnitude", o.magnitude}});
  json j = {
      {"alpha", c.alpha},
      {"m_max", c.m_max ? json(*c.m_max) : json(nullptr)},
      {"ber", c.ber},
      {"trials", c.trials},
      {"base_seed", c.base_seed},
      {"n_flips", c.n_flips},
      {"failure_absolute", c.failure.absolute},
      {"failure_relative", c.failure.relative},
      {"dtype", to_string(c.dtype)},
      {"requantize", c.requantize},
      {"layer_opt_outs", c.layer_opt_outs},
      {"lossless_tol", c.lossless_tol ? json(*c.lossless_tol) : json(nullptr)},
      {"workers", c.workers},
      {"alphas", c.alphas},
      {"candidate_policy", {{"kind", to_string(c.candidate_policy.kind)}, {"k", c.candidate_policy.k}}},
      {"model",
       {{"dims", c.model.dims},
        {"seed", c.model.seed},
        {"scale_mode", to_string(c.model.scale_mode)},
        {"outliers", outliers}}},
      {"calibration",
       {{"batches", c.calibration.batches},
        {"tokens", c.calibration.tokens},
        {"seed", c.calibration.seed}}},
      {"probe_tokens", c.probe_tokens},
      {"probe_seed", c.probe_seed},
  };
  return j;
}

}  // namespace ror
